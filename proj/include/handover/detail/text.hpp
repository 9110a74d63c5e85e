#pragma once

#include <cstdio>
#include <string>

namespace handover::detail {

/// Fixed-format double for CSV logs. %.9g is compact and byte-stable across
/// runs of the same binary, which the reproducibility checks rely on.
inline std::string fmt_g9(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

/// Round-trip exact double (17 significant digits).
inline std::string fmt_g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

} // namespace handover::detail
