#pragma once

#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "handover/errors.hpp"

namespace handover::detail {

inline const char* base64_alphabet() {
    return "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
}

inline std::string base64_encode(const std::uint8_t* data, std::size_t len) {
    const char* tbl = base64_alphabet();
    std::string out;
    out.reserve((len + 2) / 3 * 4);
    std::size_t i = 0;
    for (; i + 3 <= len; i += 3) {
        std::uint32_t v = (std::uint32_t(data[i]) << 16) | (std::uint32_t(data[i + 1]) << 8) | data[i + 2];
        out.push_back(tbl[(v >> 18) & 63]);
        out.push_back(tbl[(v >> 12) & 63]);
        out.push_back(tbl[(v >> 6) & 63]);
        out.push_back(tbl[v & 63]);
    }
    const std::size_t rem = len - i;
    if (rem == 1) {
        std::uint32_t v = std::uint32_t(data[i]) << 16;
        out.push_back(tbl[(v >> 18) & 63]);
        out.push_back(tbl[(v >> 12) & 63]);
        out.push_back('=');
        out.push_back('=');
    } else if (rem == 2) {
        std::uint32_t v = (std::uint32_t(data[i]) << 16) | (std::uint32_t(data[i + 1]) << 8);
        out.push_back(tbl[(v >> 18) & 63]);
        out.push_back(tbl[(v >> 12) & 63]);
        out.push_back(tbl[(v >> 6) & 63]);
        out.push_back('=');
    }
    return out;
}

inline std::vector<std::uint8_t> base64_decode(const std::string& text) {
    int lut[256];
    for (int& v : lut) v = -1;
    const char* tbl = base64_alphabet();
    for (int i = 0; i < 64; ++i) lut[static_cast<unsigned char>(tbl[i])] = i;

    std::vector<std::uint8_t> out;
    out.reserve(text.size() / 4 * 3);
    std::uint32_t acc = 0;
    int bits = 0;
    for (char c : text) {
        if (c == '=' || c == '\n' || c == '\r') continue;
        const int v = lut[static_cast<unsigned char>(c)];
        if (v < 0) throw DomainError("invalid base64 character");
        acc = (acc << 6) | std::uint32_t(v);
        bits += 6;
        if (bits >= 8) {
            bits -= 8;
            out.push_back(std::uint8_t((acc >> bits) & 0xff));
        }
    }
    return out;
}

inline std::string base64_encode_doubles(const std::vector<double>& values) {
    return base64_encode(reinterpret_cast<const std::uint8_t*>(values.data()),
                         values.size() * sizeof(double));
}

inline std::vector<double> base64_decode_doubles(const std::string& text) {
    const std::vector<std::uint8_t> bytes = base64_decode(text);
    if (bytes.size() % sizeof(double) != 0)
        throw DomainError("base64 blob length is not a multiple of 8 bytes");
    std::vector<double> out(bytes.size() / sizeof(double));
    std::memcpy(out.data(), bytes.data(), bytes.size());
    return out;
}

} // namespace handover::detail
