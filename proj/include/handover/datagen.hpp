#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "handover/classifiers.hpp"
#include "handover/errors.hpp"
#include "handover/landmark_stream.hpp"

namespace handover::datagen {

using classify::GestureLabel;
using classify::MovementLabel;
using geometry::Point3;
using landmarks::kNumLandmarks;
using landmarks::LandmarkFrame;

using HandTemplate = std::array<Point3, kNumLandmarks>;

// ---------------------------------------------------------------------------
// Canonical hand postures (hand-local frame: wrist at origin, fingers along
// +y, thumb toward -x, palm normal +z; unit = one hand length)
// ---------------------------------------------------------------------------

inline const HandTemplate& open_hand_template() {
    static const HandTemplate t = {{
        {0.00, 0.00, 0.00},                                                          // wrist
        {-0.12, 0.12, 0.00}, {-0.25, 0.25, 0.00}, {-0.33, 0.36, 0.00}, {-0.40, 0.46, 0.00}, // thumb
        {-0.12, 0.48, 0.00}, {-0.14, 0.66, 0.00}, {-0.15, 0.78, 0.00}, {-0.16, 0.90, 0.00}, // index
        {0.00, 0.50, 0.00},  {0.00, 0.70, 0.00},  {0.00, 0.84, 0.00},  {0.00, 1.00, 0.00},  // middle
        {0.11, 0.48, 0.00},  {0.12, 0.66, 0.00},  {0.13, 0.79, 0.00},  {0.14, 0.92, 0.00},  // ring
        {0.21, 0.44, 0.00},  {0.24, 0.58, 0.00},  {0.26, 0.68, 0.00},  {0.28, 0.78, 0.00},  // pinky
    }};
    return t;
}

/// Fist: fingertips curled back toward the palm, raised off the palm plane.
inline const HandTemplate& fist_template() {
    static const HandTemplate t = {{
        {0.00, 0.00, 0.00},
        {-0.12, 0.12, 0.00}, {-0.22, 0.22, 0.02}, {-0.20, 0.32, 0.06}, {-0.14, 0.38, 0.10},
        {-0.12, 0.48, 0.00}, {-0.13, 0.55, 0.12}, {-0.13, 0.46, 0.18}, {-0.12, 0.36, 0.16},
        {0.00, 0.50, 0.00},  {0.00, 0.58, 0.13},  {0.00, 0.48, 0.20},  {0.00, 0.37, 0.17},
        {0.11, 0.48, 0.00},  {0.12, 0.55, 0.12},  {0.12, 0.46, 0.18},  {0.11, 0.36, 0.15},
        {0.21, 0.44, 0.00},  {0.23, 0.50, 0.10},  {0.23, 0.43, 0.14},  {0.22, 0.35, 0.12},
    }};
    return t;
}

/// Occupied: a C-grip around a held object, fingers arched forward in depth.
inline const HandTemplate& occupied_template() {
    static const HandTemplate t = {{
        {0.00, 0.00, 0.00},
        {-0.12, 0.12, 0.00}, {-0.24, 0.20, 0.05}, {-0.28, 0.30, 0.12}, {-0.26, 0.40, 0.20},
        {-0.12, 0.48, 0.00}, {-0.13, 0.62, 0.10}, {-0.13, 0.66, 0.22}, {-0.12, 0.62, 0.33},
        {0.00, 0.50, 0.00},  {0.00, 0.65, 0.11},  {0.00, 0.69, 0.24},  {0.00, 0.64, 0.35},
        {0.11, 0.48, 0.00},  {0.12, 0.62, 0.10},  {0.12, 0.66, 0.22},  {0.11, 0.61, 0.33},
        {0.21, 0.44, 0.00},  {0.23, 0.55, 0.08},  {0.24, 0.58, 0.18},  {0.23, 0.54, 0.27},
    }};
    return t;
}

inline const HandTemplate& canonical_pose(GestureLabel g) {
    switch (g) {
        case GestureLabel::open: return open_hand_template();
        case GestureLabel::closed: return fist_template();
        case GestureLabel::occupied: return occupied_template();
        case GestureLabel::no_hand: break;
    }
    throw DomainError("no canonical pose for no_hand");
}

/// Linear articulation blend; 0 = a, 1 = b.
inline HandTemplate blend(const HandTemplate& a, const HandTemplate& b, double c) {
    HandTemplate out;
    for (int i = 0; i < kNumLandmarks; ++i)
        out[std::size_t(i)] = (1.0 - c) * a[std::size_t(i)] + c * b[std::size_t(i)];
    return out;
}

namespace detail {

inline Eigen::Matrix3d rotation_xyz(double ax, double ay, double az) {
    return (Eigen::AngleAxisd(az, Eigen::Vector3d::UnitZ()) *
            Eigen::AngleAxisd(ay, Eigen::Vector3d::UnitY()) *
            Eigen::AngleAxisd(ax, Eigen::Vector3d::UnitX()))
        .toRotationMatrix();
}

inline Point3 palm_center_of(const HandTemplate& t) {
    Point3 c = Point3::Zero();
    for (int i : landmarks::kPalmIndices) c += t[std::size_t(i)];
    return c / double(landmarks::kPalmIndices.size());
}

} // namespace detail

// ---------------------------------------------------------------------------
// Scene placement and rendering into image-relative coordinates
// ---------------------------------------------------------------------------

/// Where and how a hand template is placed in the image. Coordinates are
/// image-relative (x = u/width, y = v/width, z = relative depth in the same
/// scale), so one unit spans the image width.
struct Placement {
    Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
    double scale = 0.22;            // apparent hand length in image units
    Point3 center = Point3(0.5, 0.4, 0.0); // where the palm center sits
    double depth = 0.6;             // metric palm depth reported by the sensor
};

struct RenderNoise {
    double articulation = 0.0; // hand-local jitter, before scaling
    double image = 0.0;        // image-relative jitter, after projection
};

/// Render a posed template into a landmark frame. The palm center is pinned
/// exactly at placement.center (articulation noise aside), which keeps palm
/// trajectories independent of finger motion.
inline LandmarkFrame render_frame(const HandTemplate& local, const Placement& pl, double t,
                                  const RenderNoise& noise, std::mt19937& rng,
                                  double image_width = 640.0) {
    std::normal_distribution<double> n01(0.0, 1.0);

    HandTemplate jittered = local;
    if (noise.articulation > 0.0)
        for (auto& p : jittered)
            p += noise.articulation * Point3(n01(rng), n01(rng), n01(rng));

    const Point3 palm_ref = detail::palm_center_of(jittered);
    LandmarkFrame frame;
    frame.t = t;
    frame.hand_present = true;
    frame.landmarks.reserve(kNumLandmarks);
    for (int i = 0; i < kNumLandmarks; ++i) {
        Point3 p = pl.center + pl.rotation * (pl.scale * (jittered[std::size_t(i)] - palm_ref));
        if (noise.image > 0.0) p += noise.image * Point3(n01(rng), n01(rng), n01(rng));
        frame.landmarks.push_back(p);
    }

    const Point3 pc = frame.palm_center();
    frame.palm_pixel = geometry::PixelObservation{pc.x() * image_width, pc.y() * image_width, pl.depth};
    return frame;
}

// ---------------------------------------------------------------------------
// Gesture dataset
// ---------------------------------------------------------------------------

struct GestureGenOptions {
    int per_class = 1000;
    std::uint32_t seed = 7;
    double sigma_articulation = 0.02;
    double sigma_image = 0.008;
    double base_scale = 0.22;
    double scale_lo = 0.7, scale_hi = 1.3;       // relative size spread
    double rotation_range_deg = 45.0;            // per-axis tilt
    double cx_lo = 0.35, cx_hi = 0.65;           // palm placement box
    double cy_lo = 0.25, cy_hi = 0.55;
    double depth_lo = 0.4, depth_hi = 0.9;       // metric palm depth
    double dt = landmarks::kDefaultDt;
};

struct GestureDataset {
    std::vector<LandmarkFrame> frames;       // one sample per frame
    std::vector<GestureLabel> labels;
};

inline Placement random_placement(std::mt19937& rng, const GestureGenOptions& o) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double r = o.rotation_range_deg * M_PI / 180.0;
    Placement pl;
    const double ax = (2.0 * u(rng) - 1.0) * r;
    const double ay = (2.0 * u(rng) - 1.0) * r;
    const double az = (2.0 * u(rng) - 1.0) * r;
    pl.rotation = detail::rotation_xyz(ax, ay, az);
    pl.scale = o.base_scale * (o.scale_lo + (o.scale_hi - o.scale_lo) * u(rng));
    pl.center = Point3(o.cx_lo + (o.cx_hi - o.cx_lo) * u(rng),
                       o.cy_lo + (o.cy_hi - o.cy_lo) * u(rng), 0.0);
    pl.depth = o.depth_lo + (o.depth_hi - o.depth_lo) * u(rng);
    return pl;
}

/// Balanced, seeded gesture samples for the three visible classes. Class
/// blocks use independent sub-seeds so per-class generation is reproducible
/// in isolation.
inline GestureDataset gen_gesture_dataset(const GestureGenOptions& o) {
    static const std::array<GestureLabel, 3> classes = {GestureLabel::open, GestureLabel::closed,
                                                        GestureLabel::occupied};
    GestureDataset ds;
    RenderNoise noise{o.sigma_articulation, o.sigma_image};
    std::size_t index = 0;
    for (std::size_t c = 0; c < classes.size(); ++c) {
        std::mt19937 rng(o.seed ^ (0x9E3779B9u * std::uint32_t(c + 1)));
        for (int k = 0; k < o.per_class; ++k, ++index) {
            const Placement pl = random_placement(rng, o);
            ds.frames.push_back(
                render_frame(canonical_pose(classes[c]), pl, double(index) * o.dt, noise, rng));
            ds.labels.push_back(classes[c]);
        }
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Movement dataset
// ---------------------------------------------------------------------------

struct MovementGenOptions {
    int per_class = 400;
    std::uint32_t seed = 11;
    double sigma_articulation = 0.008;
    double sigma_image = 0.0015;
    double base_scale = 0.22;
    double scale_lo = 0.7, scale_hi = 1.3;
    double rotation_range_deg = 45.0;
    double depth_lo = 0.4, depth_hi = 0.9;
    double dt = landmarks::kDefaultDt;
    int frames_per_sample = landmarks::kWindowLength;
    int gap_ticks = 5; // silence between samples so segments split cleanly
};

struct MovementSample {
    std::vector<LandmarkFrame> frames;
    MovementLabel label = MovementLabel::low_urgency;
};

struct MovementDataset {
    std::vector<MovementSample> samples;
};

/// One synthetic motion clip. Class signatures:
///  - low:    static open hand, slow drift (palm speed <= 0.04 units/s)
///  - medium: gentle beckon, finger-curl oscillation at 0.6-1.0 Hz with palm
///            bob tuned to a 0.11-0.17 units/s mean speed
///  - high:   vigorous beckon at 1.8-2.6 Hz, deeper curl, 0.34-0.48 units/s
///  - go_away: lateral sweep at 0.17-0.32 units/s with a wrist-yaw wave,
///             starting up to 8 frames into the clip
inline MovementSample gen_movement_sample(MovementLabel label, std::mt19937& rng,
                                          const MovementGenOptions& o, double t0) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * u(rng); };

    const double r = o.rotation_range_deg * M_PI / 180.0;
    Placement pl;
    pl.rotation = detail::rotation_xyz(uniform(-r, r), uniform(-r, r), uniform(-r, r));
    pl.scale = o.base_scale * uniform(o.scale_lo, o.scale_hi);
    pl.depth = uniform(o.depth_lo, o.depth_hi);

    Point3 start(uniform(0.4, 0.6), uniform(0.3, 0.5), 0.0);
    Point3 drift = Point3::Zero();     // low: constant velocity
    Point3 bob_dir = Point3::Zero();   // medium/high: oscillation axis
    Point3 sweep = Point3::Zero();     // go_away: constant velocity
    double sweep_onset = 0.0;
    double bob_amp = 0.0, bob_freq = 0.0, bob_phase = 0.0;
    double curl_depth = 0.0, curl_freq = 0.0;
    double yaw_amp = 0.0, yaw_freq = 0.0;

    switch (label) {
        case MovementLabel::low_urgency: {
            Point3 dir(u(rng) - 0.5, u(rng) - 0.5, u(rng) - 0.5);
            if (dir.norm() < 1e-9) dir = Point3(1, 0, 0);
            drift = dir.normalized() * uniform(0.0, 0.04);
            break;
        }
        case MovementLabel::medium_urgency: {
            curl_freq = uniform(0.6, 1.0);
            curl_depth = uniform(0.4, 0.6);
            const double target_speed = uniform(0.11, 0.17);
            bob_freq = curl_freq;
            bob_amp = target_speed / (4.0 * bob_freq);
            bob_phase = uniform(0.0, 2.0 * M_PI);
            bob_dir = pl.rotation * Point3(0, 0, 1);
            break;
        }
        case MovementLabel::high_urgency: {
            curl_freq = uniform(1.8, 2.6);
            curl_depth = uniform(0.75, 0.95);
            const double target_speed = uniform(0.34, 0.48);
            bob_freq = curl_freq;
            bob_amp = target_speed / (4.0 * bob_freq);
            bob_phase = uniform(0.0, 2.0 * M_PI);
            bob_dir = pl.rotation * Point3(0, 0, 1);
            break;
        }
        case MovementLabel::go_away: {
            const double sign = u(rng) < 0.5 ? -1.0 : 1.0;
            sweep = pl.rotation * Point3(sign, 0, 0) * uniform(0.17, 0.32);
            start.x() = 0.5 - 0.31 * (sweep.x() > 0 ? 1.0 : -1.0);
            // The sweep may begin mid-clip so partially swept windows are
            // part of the training distribution (dismissals start abruptly).
            sweep_onset = double(int(u(rng) * 9.0)) * o.dt;
            yaw_amp = 0.3;
            yaw_freq = uniform(1.2, 1.8);
            break;
        }
    }

    RenderNoise noise{o.sigma_articulation, o.sigma_image};
    MovementSample sample;
    sample.label = label;
    for (int j = 0; j < o.frames_per_sample; ++j) {
        const double tau = double(j) * o.dt;
        HandTemplate posed = open_hand_template();
        if (curl_depth > 0.0) {
            const double c = curl_depth * (0.5 - 0.5 * std::cos(2.0 * M_PI * curl_freq * tau));
            posed = blend(open_hand_template(), fist_template(), c);
        }
        const double sweep_tau = std::max(0.0, tau - sweep_onset);
        if (yaw_amp > 0.0) {
            const double theta = yaw_amp * std::sin(2.0 * M_PI * yaw_freq * sweep_tau);
            const Eigen::Matrix3d yaw = Eigen::AngleAxisd(theta, Eigen::Vector3d::UnitZ()).toRotationMatrix();
            for (auto& p : posed) p = yaw * p;
        }
        Placement frame_pl = pl;
        frame_pl.center = start + drift * tau + sweep * sweep_tau +
                          bob_dir * (bob_amp * std::sin(2.0 * M_PI * bob_freq * tau + bob_phase));
        sample.frames.push_back(render_frame(posed, frame_pl, t0 + double(j) * o.dt, noise, rng));
    }
    return sample;
}

inline MovementDataset gen_movement_dataset(const MovementGenOptions& o) {
    static const std::array<MovementLabel, 4> classes = {
        MovementLabel::low_urgency, MovementLabel::medium_urgency, MovementLabel::high_urgency,
        MovementLabel::go_away};
    MovementDataset ds;
    const double sample_span = double(o.frames_per_sample + o.gap_ticks) * o.dt;
    std::size_t index = 0;
    for (std::size_t c = 0; c < classes.size(); ++c) {
        std::mt19937 rng(o.seed ^ (0x9E3779B9u * std::uint32_t(c + 1)));
        for (int k = 0; k < o.per_class; ++k, ++index)
            ds.samples.push_back(gen_movement_sample(classes[c], rng, o, double(index) * sample_span));
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Kinematic ground-truth rule
// ---------------------------------------------------------------------------

/// Label a raw (unnormalized) clip from palm kinematics alone. This is the
/// independent rule the generator is tuned against: a large net displacement
/// is a dismissal sweep, otherwise mean palm speed picks the urgency tier.
inline MovementLabel kinematic_label(const std::vector<LandmarkFrame>& frames) {
    if (frames.size() < 2) throw DomainError("kinematic rule needs at least two frames");
    std::vector<Point3> palm;
    palm.reserve(frames.size());
    for (const auto& f : frames) {
        if (!f.hand_present) throw DomainError("kinematic rule needs hand-present frames");
        palm.push_back(f.palm_center());
    }

    const double net = (palm.back() - palm.front()).norm();
    if (net > 0.20) return MovementLabel::go_away;

    double speed_sum = 0.0;
    for (std::size_t i = 1; i < palm.size(); ++i) {
        const double dt = frames[i].t - frames[i - 1].t;
        if (dt <= 0.0) throw DomainError("kinematic rule needs increasing timestamps");
        speed_sum += (palm[i] - palm[i - 1]).norm() / dt;
    }
    const double mean_speed = speed_sum / double(palm.size() - 1);
    if (mean_speed < 0.08) return MovementLabel::low_urgency;
    if (mean_speed < 0.24) return MovementLabel::medium_urgency;
    return MovementLabel::high_urgency;
}

// ---------------------------------------------------------------------------
// Training-array conversion
// ---------------------------------------------------------------------------

inline std::pair<std::vector<nn::VectorXd>, std::vector<int>> gesture_training_data(
    const GestureDataset& ds) {
    std::vector<nn::VectorXd> inputs;
    std::vector<int> labels;
    inputs.reserve(ds.frames.size());
    labels.reserve(ds.frames.size());
    for (std::size_t i = 0; i < ds.frames.size(); ++i) {
        inputs.push_back(landmarks::normalize(ds.frames[i]).features);
        labels.push_back(classify::gesture_net_index(ds.labels[i]));
    }
    return {std::move(inputs), std::move(labels)};
}

inline std::pair<std::vector<Eigen::MatrixXd>, std::vector<int>> movement_training_data(
    const MovementDataset& ds) {
    std::vector<Eigen::MatrixXd> inputs;
    std::vector<int> labels;
    inputs.reserve(ds.samples.size());
    labels.reserve(ds.samples.size());
    for (const auto& s : ds.samples) {
        if (int(s.frames.size()) != landmarks::kWindowLength)
            throw DomainError("movement sample is not a full window");
        landmarks::MotionWindow w;
        for (int j = 0; j < landmarks::kWindowLength; ++j)
            w.frames[std::size_t(j)] = landmarks::normalize(s.frames[std::size_t(j)]);
        inputs.push_back(w.as_matrix());
        labels.push_back(int(s.label));
    }
    return {std::move(inputs), std::move(labels)};
}

// ---------------------------------------------------------------------------
// Dataset files: landmark JSONL next to a sample_id,label CSV
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<std::string> read_labels_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw StreamError("cannot open labels file '" + path + "'");
    std::string line;
    if (!std::getline(in, line)) throw ParseError(1, "labels file is empty");
    if (line.find("sample_id") != 0) throw ParseError(1, "labels file must start with a sample_id,label header");

    std::vector<std::string> labels;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos) throw ParseError(line_no, "expected sample_id,label");
        const std::string id = line.substr(0, comma);
        std::string label = line.substr(comma + 1);
        while (!label.empty() && (label.back() == '\r' || label.back() == ' ')) label.pop_back();
        if (std::to_string(labels.size()) != id)
            throw ParseError(line_no, "sample_id out of order: expected " +
                                          std::to_string(labels.size()) + ", got " + id);
        labels.push_back(std::move(label));
    }
    return labels;
}

} // namespace detail

inline void write_gesture_dataset(const GestureDataset& ds, const std::string& frames_path,
                                  const std::string& labels_path) {
    std::ofstream frames(frames_path);
    if (!frames) throw StreamError("cannot write '" + frames_path + "'");
    landmarks::serialize_stream(frames, ds.frames);

    std::ofstream labels(labels_path);
    if (!labels) throw StreamError("cannot write '" + labels_path + "'");
    labels << "sample_id,label\n";
    for (std::size_t i = 0; i < ds.labels.size(); ++i)
        labels << i << ',' << classify::to_string(ds.labels[i]) << '\n';
}

inline GestureDataset load_gesture_dataset(const std::string& frames_path,
                                           const std::string& labels_path) {
    std::ifstream in(frames_path);
    if (!in) throw StreamError("cannot open '" + frames_path + "'");
    GestureDataset ds;
    ds.frames = landmarks::parse_stream(in);
    for (const auto& name : detail::read_labels_csv(labels_path))
        ds.labels.push_back(classify::gesture_label_from_string(name));
    if (ds.frames.size() != ds.labels.size())
        throw DomainError("gesture dataset has " + std::to_string(ds.frames.size()) +
                          " frames but " + std::to_string(ds.labels.size()) + " labels");
    for (const auto& f : ds.frames)
        if (!f.hand_present) throw DomainError("gesture dataset contains a no-hand frame");
    return ds;
}

inline void write_movement_dataset(const MovementDataset& ds, const std::string& frames_path,
                                   const std::string& labels_path) {
    std::vector<LandmarkFrame> all;
    for (const auto& s : ds.samples) all.insert(all.end(), s.frames.begin(), s.frames.end());
    std::ofstream frames(frames_path);
    if (!frames) throw StreamError("cannot write '" + frames_path + "'");
    landmarks::serialize_stream(frames, all);

    std::ofstream labels(labels_path);
    if (!labels) throw StreamError("cannot write '" + labels_path + "'");
    labels << "sample_id,label\n";
    for (std::size_t i = 0; i < ds.samples.size(); ++i)
        labels << i << ',' << classify::to_string(ds.samples[i].label) << '\n';
}

inline MovementDataset load_movement_dataset(const std::string& frames_path,
                                             const std::string& labels_path) {
    std::ifstream in(frames_path);
    if (!in) throw StreamError("cannot open '" + frames_path + "'");
    const auto segments = landmarks::trim_segments(landmarks::parse_stream(in));
    const auto names = detail::read_labels_csv(labels_path);
    if (segments.size() != names.size())
        throw DomainError("movement dataset has " + std::to_string(segments.size()) +
                          " segments but " + std::to_string(names.size()) + " labels");

    MovementDataset ds;
    for (std::size_t i = 0; i < segments.size(); ++i) {
        if (int(segments[i].size()) != landmarks::kWindowLength)
            throw DomainError("movement segment " + std::to_string(i) + " has " +
                              std::to_string(segments[i].size()) + " frames, expected 30");
        ds.samples.push_back({segments[i], classify::movement_label_from_string(names[i])});
    }
    return ds;
}

} // namespace handover::datagen
