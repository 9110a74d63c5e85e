#pragma once

#include <array>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "handover/errors.hpp"
#include "handover/geometry.hpp"

namespace handover::landmarks {

using geometry::PixelObservation;
using geometry::Point3;

inline constexpr int kNumLandmarks = 21;
inline constexpr int kFeatureCount = kNumLandmarks * 3;
inline constexpr int kWindowLength = 30;
inline constexpr double kDefaultDt = 1.0 / 15.0;

/// Landmark indices of the 21-point hand convention we rely on.
inline constexpr int kWrist = 0;
inline constexpr std::array<int, 5> kPalmIndices = {0, 5, 9, 13, 17}; // wrist + MCP knuckles
inline constexpr std::array<int, 5> kFingertips = {4, 8, 12, 16, 20};

/// One timestamped hand observation. Landmark x,y are image-relative
/// (normalized by image width), z is relative depth in the same scale.
struct LandmarkFrame {
    double t = 0.0;
    bool hand_present = false;
    std::vector<Point3> landmarks;                // exactly 21 when hand_present
    std::optional<PixelObservation> palm_pixel;   // absent when the detector lost the palm anchor

    /// Mean of wrist and the four MCP knuckles; stable under finger articulation.
    Point3 palm_center() const {
        Point3 c = Point3::Zero();
        for (int i : kPalmIndices) c += landmarks[std::size_t(i)];
        return c / double(kPalmIndices.size());
    }
};

/// Wrist-centered, max-distance-scaled 63-feature pose.
struct NormalizedPose {
    Eigen::Matrix<double, kFeatureCount, 1> features = Eigen::Matrix<double, kFeatureCount, 1>::Zero();

    Point3 landmark(int i) const { return features.segment<3>(i * 3); }
};

/// Thirty consecutive normalized poses at the nominal tick interval.
struct MotionWindow {
    std::array<NormalizedPose, kWindowLength> frames;
    double dt = kDefaultDt;

    /// Rows = time steps, columns = features; the layout the sequence nets consume.
    Eigen::MatrixXd as_matrix() const {
        Eigen::MatrixXd m(kWindowLength, kFeatureCount);
        for (int r = 0; r < kWindowLength; ++r) m.row(r) = frames[std::size_t(r)].features.transpose();
        return m;
    }
};

namespace detail {

inline constexpr double kLandmarkBoundLo = -0.5;
inline constexpr double kLandmarkBoundHi = 1.5;

inline LandmarkFrame frame_from_json(const nlohmann::json& j, std::size_t line_no) {
    LandmarkFrame f;
    if (!j.is_object()) throw ParseError(line_no, "record is not a JSON object");
    if (!j.contains("t") || !j.at("t").is_number())
        throw ParseError(line_no, "missing numeric field 't'");
    if (!j.contains("hand_present") || !j.at("hand_present").is_boolean())
        throw ParseError(line_no, "missing boolean field 'hand_present'");
    f.t = j.at("t").get<double>();
    f.hand_present = j.at("hand_present").get<bool>();

    if (f.hand_present) {
        if (!j.contains("landmarks")) throw ParseError(line_no, "hand present but no landmarks");
        const auto& lms = j.at("landmarks");
        if (!lms.is_array() || lms.size() != kNumLandmarks)
            throw ParseError(line_no, "expected exactly 21 landmarks, got " +
                                          std::to_string(lms.is_array() ? lms.size() : 0));
        f.landmarks.reserve(kNumLandmarks);
        for (const auto& lm : lms) {
            if (!lm.is_array() || lm.size() != 3)
                throw ParseError(line_no, "landmark is not an [x,y,z] triple");
            const double x = lm[0].get<double>();
            const double y = lm[1].get<double>();
            const double z = lm[2].get<double>();
            if (x < kLandmarkBoundLo || x > kLandmarkBoundHi || y < kLandmarkBoundLo || y > kLandmarkBoundHi)
                throw ParseError(line_no, "landmark x/y outside the [-0.5, 1.5] tolerance band");
            f.landmarks.emplace_back(x, y, z);
        }
        if (j.contains("palm_pixel")) {
            const auto& pp = j.at("palm_pixel");
            PixelObservation obs;
            obs.u = pp.at("u").get<double>();
            obs.v = pp.at("v").get<double>();
            obs.depth = pp.at("depth").get<double>();
            f.palm_pixel = obs;
        }
    } else if (j.contains("landmarks")) {
        throw ParseError(line_no, "landmarks present but hand_present is false");
    }
    return f;
}

inline nlohmann::json frame_to_json(const LandmarkFrame& f) {
    nlohmann::json j;
    j["t"] = f.t;
    j["hand_present"] = f.hand_present;
    if (f.hand_present) {
        nlohmann::json lms = nlohmann::json::array();
        for (const auto& p : f.landmarks) lms.push_back({p.x(), p.y(), p.z()});
        j["landmarks"] = std::move(lms);
        if (f.palm_pixel) {
            j["palm_pixel"] = {{"u", f.palm_pixel->u},
                               {"v", f.palm_pixel->v},
                               {"depth", f.palm_pixel->depth}};
        }
    }
    return j;
}

} // namespace detail

/// Parse a line-delimited landmark stream. Blank lines are skipped; any
/// malformed line aborts with its line number; timestamps must strictly
/// increase.
inline std::vector<LandmarkFrame> parse_stream(std::istream& in) {
    std::vector<LandmarkFrame> frames;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(line_no, std::string("invalid JSON: ") + e.what());
        }
        LandmarkFrame f = detail::frame_from_json(j, line_no);
        if (!frames.empty() && f.t <= frames.back().t)
            throw StreamError("non-monotonic timestamp at line " + std::to_string(line_no));
        frames.push_back(std::move(f));
    }
    return frames;
}

inline void serialize_stream(std::ostream& out, const std::vector<LandmarkFrame>& frames) {
    for (const auto& f : frames) out << detail::frame_to_json(f).dump() << '\n';
}

/// Wrist-center and scale-normalize one frame. Translation and uniform scale
/// are removed; orientation is deliberately preserved.
inline NormalizedPose normalize(const LandmarkFrame& frame) {
    if (!frame.hand_present) throw DomainError("cannot normalize a frame without a hand");
    if (frame.landmarks.size() != kNumLandmarks) throw DomainError("frame does not have 21 landmarks");

    const Point3 wrist = frame.landmarks[kWrist];
    double max_dist = 0.0;
    for (const auto& p : frame.landmarks) max_dist = std::max(max_dist, (p - wrist).norm());
    if (max_dist < 1e-12) throw DomainError("degenerate pose: all landmarks coincide with the wrist");

    NormalizedPose pose;
    for (int i = 0; i < kNumLandmarks; ++i)
        pose.features.segment<3>(i * 3) = (frame.landmarks[std::size_t(i)] - wrist) / max_dist;
    return pose;
}

/// Normalize a pose already expressed as 63 features (idempotence path).
inline NormalizedPose normalize(const NormalizedPose& pose) {
    LandmarkFrame f;
    f.hand_present = true;
    f.landmarks.reserve(kNumLandmarks);
    for (int i = 0; i < kNumLandmarks; ++i) f.landmarks.push_back(pose.landmark(i));
    return normalize(f);
}

/// Sliding 30-frame windows with stride 1. Windows spanning a timestamp gap
/// larger than 2*dt are skipped; fewer than 30 input frames yield nothing.
inline std::vector<MotionWindow> window(const std::vector<NormalizedPose>& poses,
                                        const std::vector<double>& timestamps,
                                        double dt = kDefaultDt) {
    if (poses.size() != timestamps.size()) throw DomainError("poses/timestamps size mismatch");
    std::vector<MotionWindow> out;
    if (poses.size() < std::size_t(kWindowLength)) return out;
    for (std::size_t start = 0; start + kWindowLength <= poses.size(); ++start) {
        bool contiguous = true;
        for (std::size_t i = start + 1; i < start + kWindowLength; ++i) {
            if (timestamps[i] - timestamps[i - 1] > 2.0 * dt) {
                contiguous = false;
                break;
            }
        }
        if (!contiguous) continue;
        MotionWindow w;
        w.dt = dt;
        for (int i = 0; i < kWindowLength; ++i) w.frames[std::size_t(i)] = poses[start + std::size_t(i)];
        out.push_back(std::move(w));
    }
    return out;
}

/// Trim a raw stream for classification: keep hand-present frames and split
/// into segments at gaps larger than 2*dt.
inline std::vector<std::vector<LandmarkFrame>> trim_segments(const std::vector<LandmarkFrame>& frames,
                                                             double dt = kDefaultDt) {
    std::vector<std::vector<LandmarkFrame>> segments;
    for (const auto& f : frames) {
        if (!f.hand_present) continue;
        if (segments.empty() || f.t - segments.back().back().t > 2.0 * dt) segments.emplace_back();
        segments.back().push_back(f);
    }
    return segments;
}

} // namespace handover::landmarks
