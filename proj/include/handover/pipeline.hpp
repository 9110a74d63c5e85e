#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <istream>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "handover/classifiers.hpp"
#include "handover/control.hpp"
#include "handover/datagen.hpp"
#include "handover/detail/text.hpp"
#include "handover/errors.hpp"
#include "handover/geometry.hpp"
#include "handover/landmark_stream.hpp"
#include "handover/robot_sim.hpp"
#include "handover/workflow.hpp"

namespace handover::pipeline {

using classify::GestureLabel;
using classify::MovementLabel;
using geometry::Point3;

// ---------------------------------------------------------------------------
// Run configuration
// ---------------------------------------------------------------------------

/// Whether the depth camera rides on the end effector (the transform chain's
/// hand-eye arrangement) or sits at the fixed pose given in the calibration.
enum class CameraMount { end_effector, fixed };

inline CameraMount camera_mount_from_string(const std::string& s) {
    if (s == "end_effector") return CameraMount::end_effector;
    if (s == "fixed") return CameraMount::fixed;
    throw ConfigError("camera_mount must be 'end_effector' or 'fixed', got '" + s + "'");
}

struct GateConfig {
    double threshold = 0.7;
    int required_ticks = 3;
};

struct RunConfig {
    geometry::Calibration calibration;
    control::ControllerConfig controller;
    sim::SafetyEnvelope envelope;
    workflow::WorkflowConfig workflow;
    CameraMount camera_mount = CameraMount::end_effector;
    GateConfig gate;
    std::uint32_t seed = 0;
    double dt = 1.0 / 15.0;

    /// Ticks without a hand before the urgency estimate is considered stale.
    int urgency_hold_ticks = 10;
};

/// The shipped hand-eye calibration: the camera sits 0.35 m behind the
/// gripper, optical axis along the workspace diagonal (+x,+y), image up
/// aligned with world +z.
inline geometry::Calibration default_calibration() {
    const double s = std::sqrt(0.5);
    Eigen::Matrix3d r;
    // Columns: camera x (image right), camera y (image down), camera z (optical axis).
    r.col(0) = Eigen::Vector3d(s, -s, 0.0);
    r.col(1) = Eigen::Vector3d(0.0, 0.0, -1.0);
    r.col(2) = Eigen::Vector3d(s, s, 0.0);

    geometry::Calibration cal;
    cal.eye_to_hand = geometry::RigidTransform(r, Point3(-0.35 * s, -0.35 * s, 0.0));
    cal.ee_to_base = geometry::RigidTransform(Eigen::Matrix3d::Identity(), Point3(0.0, 0.0, 0.4));
    return cal;
}

inline RunConfig run_config_from_json(const nlohmann::json& j) {
    RunConfig cfg;
    cfg.calibration = default_calibration();
    if (j.contains("calibration")) cfg.calibration = geometry::calibration_from_json(j.at("calibration"));
    if (j.contains("controller")) cfg.controller = control::controller_config_from_json(j.at("controller"));
    if (j.contains("envelope")) cfg.envelope = sim::envelope_from_json(j.at("envelope"));
    if (j.contains("workflow")) cfg.workflow = workflow::workflow_config_from_json(j.at("workflow"));
    if (j.contains("camera_mount"))
        cfg.camera_mount = camera_mount_from_string(j.at("camera_mount").get<std::string>());
    if (j.contains("gate")) {
        cfg.gate.threshold = j.at("gate").value("threshold", cfg.gate.threshold);
        cfg.gate.required_ticks = j.at("gate").value("required_ticks", cfg.gate.required_ticks);
    }
    cfg.seed = j.value("seed", cfg.seed);
    if (j.contains("dt")) {
        cfg.dt = j.at("dt").get<double>();
        if (!(cfg.dt > 0.0)) throw ConfigError("dt must be positive");
    }
    cfg.controller.dt = cfg.dt;
    cfg.controller.pid.dt = cfg.dt;
    cfg.urgency_hold_ticks = j.value("urgency_hold_ticks", cfg.urgency_hold_ticks);
    return cfg;
}

// ---------------------------------------------------------------------------
// Scenario script
// ---------------------------------------------------------------------------

/// A scripted hand in the workspace: a world-space palm anchor plus a posture
/// and motion class. The synthesizer turns this into landmark frames through
/// whatever pose the camera currently has.
struct HandSpec {
    Point3 position = Point3::Zero();     // palm anchor, base frame (m)
    GestureLabel gesture = GestureLabel::open;
    MovementLabel motion = MovementLabel::low_urgency;
    double hand_length = 0.20;            // wrist-to-middle-fingertip (m)
    Point3 drift = Point3::Zero();        // extra constant velocity (m/s)
    std::optional<Point3> sweep_dir;      // go_away override, base frame
};

struct ScenarioEvent {
    enum class Kind { command, collision, hand, hand_absent, landmark_segment, expect };
    double t = 0.0;
    Kind kind = Kind::command;
    std::string text;          // command
    HandSpec hand;             // hand
    std::string path;          // landmark_segment
    std::string expect_state;  // expect
};

struct Scenario {
    std::vector<ScenarioEvent> events; // sorted by t, file order preserved on ties
    double max_t = 0.0;
};

inline Scenario parse_scenario(std::istream& in) {
    Scenario sc;
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
        if (!j.is_object() || !j.contains("t") || !j.contains("kind"))
            throw ParseError(line_no, "scenario entry needs 't' and 'kind'");

        ScenarioEvent ev;
        ev.t = j.at("t").get<double>();
        if (ev.t < 0.0) throw ParseError(line_no, "event time must be nonnegative");
        const std::string kind = j.at("kind").get<std::string>();
        try {
            if (kind == "command") {
                ev.kind = ScenarioEvent::Kind::command;
                ev.text = j.at("text").get<std::string>();
            } else if (kind == "collision") {
                ev.kind = ScenarioEvent::Kind::collision;
            } else if (kind == "hand") {
                ev.kind = ScenarioEvent::Kind::hand;
                const auto pos = j.at("position").get<std::vector<double>>();
                if (pos.size() != 3) throw ParseError(line_no, "hand position must have 3 entries");
                ev.hand.position = Point3(pos[0], pos[1], pos[2]);
                ev.hand.gesture = classify::gesture_label_from_string(j.value("gesture", "open"));
                ev.hand.motion = classify::movement_label_from_string(j.value("motion", "low_urgency"));
                ev.hand.hand_length = j.value("hand_length", ev.hand.hand_length);
                if (j.contains("drift")) {
                    const auto d = j.at("drift").get<std::vector<double>>();
                    if (d.size() != 3) throw ParseError(line_no, "hand drift must have 3 entries");
                    ev.hand.drift = Point3(d[0], d[1], d[2]);
                }
                if (j.contains("sweep_dir")) {
                    const auto d = j.at("sweep_dir").get<std::vector<double>>();
                    if (d.size() != 3) throw ParseError(line_no, "sweep_dir must have 3 entries");
                    ev.hand.sweep_dir = Point3(d[0], d[1], d[2]).normalized();
                }
            } else if (kind == "hand_absent") {
                ev.kind = ScenarioEvent::Kind::hand_absent;
            } else if (kind == "landmark_segment") {
                ev.kind = ScenarioEvent::Kind::landmark_segment;
                ev.path = j.at("path").get<std::string>();
            } else if (kind == "expect") {
                ev.kind = ScenarioEvent::Kind::expect;
                ev.expect_state = j.at("state").get<std::string>();
            } else {
                throw ParseError(line_no, "unknown scenario kind '" + kind + "'");
            }
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(line_no, std::string("bad scenario payload: ") + e.what());
        } catch (const ParseError&) {
            throw;
        } catch (const DomainError& e) { // e.g. unknown gesture/motion label
            throw ParseError(line_no, std::string("bad scenario payload: ") + e.what());
        }
        sc.events.push_back(std::move(ev));
        sc.max_t = std::max(sc.max_t, sc.events.back().t);
    }
    std::stable_sort(sc.events.begin(), sc.events.end(),
                     [](const ScenarioEvent& a, const ScenarioEvent& b) { return a.t < b.t; });
    return sc;
}

// ---------------------------------------------------------------------------
// Hand synthesizer: world-space hand -> landmark frames through the camera
// ---------------------------------------------------------------------------

/// Renders the scripted hand into the camera each tick. Postures and motion
/// patterns mirror the synthetic training distribution, but are animated in
/// world space so the projected kinematics respond to camera motion.
class HandSynthesizer {
public:
    explicit HandSynthesizer(std::uint32_t seed) : rng_(seed ^ 0x51ed270bu) {}

    void set_hand(const HandSpec& spec, double t_now) {
        spec_ = spec;
        t0_ = t_now;
        // Default dismissal: mostly away from the camera with a small lateral
        // component, so the sweep stays in view long enough to classify.
        if (spec.motion == MovementLabel::go_away && !spec_->sweep_dir)
            spec_->sweep_dir = Point3(0.85, 0.53, 0.0).normalized();
    }

    void clear() { spec_.reset(); }
    bool active() const { return spec_.has_value(); }

    /// Current true palm position (for tests and scenario authoring).
    std::optional<Point3> palm_world(double t_now) const {
        if (!spec_) return std::nullopt;
        return palm_at(t_now);
    }

    landmarks::LandmarkFrame synthesize(double t_now, const geometry::CameraIntrinsics& intr,
                                        const geometry::RigidTransform& base_to_camera) {
        landmarks::LandmarkFrame frame;
        frame.t = t_now;
        frame.hand_present = false;
        if (!spec_) return frame;

        const double tau = t_now - t0_;
        const Point3 palm = palm_at(t_now);

        // Posture: canonical gesture, with urgency classes beckoning on top.
        datagen::HandTemplate posed = datagen::canonical_pose(
            spec_->gesture == GestureLabel::no_hand ? GestureLabel::open : spec_->gesture);
        double curl_depth = 0.0, curl_freq = 0.0;
        if (spec_->motion == MovementLabel::medium_urgency) {
            curl_depth = 0.5;
            curl_freq = 0.8;
        } else if (spec_->motion == MovementLabel::high_urgency) {
            curl_depth = 0.85;
            curl_freq = 2.2;
        }
        if (curl_depth > 0.0) {
            const double c = curl_depth * (0.5 - 0.5 * std::cos(2.0 * M_PI * curl_freq * tau));
            posed = datagen::blend(datagen::open_hand_template(), datagen::fist_template(), c);
        }
        if (spec_->motion == MovementLabel::go_away) {
            const double theta = 0.3 * std::sin(2.0 * M_PI * 1.5 * tau);
            const Eigen::Matrix3d yaw =
                Eigen::AngleAxisd(theta, Eigen::Vector3d::UnitZ()).toRotationMatrix();
            for (auto& p : posed) p = yaw * p;
        }

        const Point3 palm_ref = mean_palm(posed);
        std::normal_distribution<double> n01(0.0, 1.0);

        // World landmarks around the palm anchor, then through the camera.
        std::array<Point3, landmarks::kNumLandmarks> cam_pts;
        for (int i = 0; i < landmarks::kNumLandmarks; ++i) {
            Point3 local = posed[std::size_t(i)] - palm_ref;
            local += sigma_articulation_ * Point3(n01(rng_), n01(rng_), n01(rng_));
            const Point3 world = palm + hand_orientation() * (spec_->hand_length * local);
            cam_pts[std::size_t(i)] = geometry::apply(base_to_camera, world);
        }
        const Point3 palm_cam = geometry::apply(base_to_camera, palm);

        // Visibility: the palm must be in front of the camera at a trackable
        // range and its pixel inside the image.
        if (palm_cam.z() < 0.15) return frame;
        for (const auto& p : cam_pts)
            if (p.z() < 0.05) return frame;
        double pu = intr.fx * palm_cam.x() / palm_cam.z() + intr.uc;
        double pv = intr.fy * palm_cam.y() / palm_cam.z() + intr.vc;
        pu += sigma_pixel_ * n01(rng_);
        pv += sigma_pixel_ * n01(rng_);
        if (pu < 0.0 || pu >= intr.width || pv < 0.0 || pv >= intr.height) return frame;

        frame.hand_present = true;
        frame.landmarks.reserve(landmarks::kNumLandmarks);
        const double w = double(intr.width);
        for (const auto& p : cam_pts) {
            const double u = intr.fx * p.x() / p.z() + intr.uc + sigma_pixel_ * n01(rng_);
            const double v = intr.fy * p.y() / p.z() + intr.vc + sigma_pixel_ * n01(rng_);
            // Weak-perspective relative depth, scaled like the image axes.
            const double z = (p.z() - palm_cam.z()) * intr.fx / (palm_cam.z() * w);
            frame.landmarks.emplace_back(u / w, v / w, z);
        }
        frame.palm_pixel = geometry::PixelObservation{pu, pv, palm_cam.z()};
        return frame;
    }

private:
    Point3 palm_at(double t_now) const {
        const double tau = t_now - t0_;
        Point3 p = spec_->position + spec_->drift * tau;
        switch (spec_->motion) {
            case MovementLabel::low_urgency:
                break;
            // Bob amplitudes stay under the release radius so a tracked palm
            // remains reachable at every controller gain.
            case MovementLabel::medium_urgency:
                p.z() += 0.020 * std::sin(2.0 * M_PI * 0.8 * tau);
                break;
            case MovementLabel::high_urgency:
                p.z() += 0.020 * std::sin(2.0 * M_PI * 2.2 * tau);
                break;
            case MovementLabel::go_away:
                p += *spec_->sweep_dir * (0.30 * tau);
                break;
        }
        return p;
    }

    /// Hand-local axes aligned with the default camera axes, so the rendered
    /// landmarks sit at the canonical orientation of the training renders
    /// (fingers along image-down, thumb toward image-left, palm toward the
    /// camera). Assumes the camera keeps the default workspace-diagonal view.
    static Eigen::Matrix3d hand_orientation() {
        const double s = std::sqrt(0.5);
        Eigen::Matrix3d r;
        r.col(0) = Eigen::Vector3d(s, -s, 0.0);  // hand-local x = image x
        r.col(1) = Eigen::Vector3d(0.0, 0.0, -1.0); // fingers = image y (down)
        r.col(2) = Eigen::Vector3d(s, s, 0.0);   // hand-local z = away from camera
        return r;
    }

    static Point3 mean_palm(const datagen::HandTemplate& t) {
        Point3 c = Point3::Zero();
        for (int i : landmarks::kPalmIndices) c += t[std::size_t(i)];
        return c / double(landmarks::kPalmIndices.size());
    }

    std::optional<HandSpec> spec_;
    double t0_ = 0.0;
    double sigma_articulation_ = 0.01; // hand-local units
    double sigma_pixel_ = 1.0;         // px
    std::mt19937 rng_;
};

// ---------------------------------------------------------------------------
// Run products
// ---------------------------------------------------------------------------

struct TrajectoryRow {
    int tick = 0;
    double t = 0.0;            // state timestamp after the step
    Point3 position = Point3::Zero();
    Point3 velocity = Point3::Zero();
    std::string mode;          // "lqr", "pid", or "" when no command was issued
    std::string urgency;       // annotated urgency of the command, or ""
    std::string state;         // session state after this tick
    std::vector<sim::SafetyEvent> events;
};

struct ExpectResult {
    double t = 0.0;
    std::string expected;
    std::string actual;
    bool ok = false;
};

struct RunResult {
    std::vector<TrajectoryRow> trajectory;
    std::vector<workflow::SessionEvent> events; // workflow + engine log, tick order
    std::vector<ExpectResult> expectations;
    workflow::SessionState final_state = workflow::SessionState::idle;
    int ticks = 0;

    bool ok() const {
        return std::all_of(expectations.begin(), expectations.end(),
                           [](const ExpectResult& e) { return e.ok; });
    }
};

inline void write_trajectory_csv(std::ostream& out, const std::vector<TrajectoryRow>& rows) {
    using handover::detail::fmt_g9;
    out << "tick,t,x,y,z,vx,vy,vz,mode,urgency,state,events\n";
    for (const auto& r : rows) {
        out << r.tick << ',' << fmt_g9(r.t) << ',' << fmt_g9(r.position.x()) << ','
            << fmt_g9(r.position.y()) << ',' << fmt_g9(r.position.z()) << ','
            << fmt_g9(r.velocity.x()) << ',' << fmt_g9(r.velocity.y()) << ','
            << fmt_g9(r.velocity.z()) << ',' << r.mode << ',' << r.urgency << ',' << r.state << ',';
        for (std::size_t i = 0; i < r.events.size(); ++i) {
            if (i) out << ';';
            out << sim::to_string(r.events[i].kind);
        }
        out << '\n';
    }
}

inline void write_event_log(std::ostream& out, const std::vector<workflow::SessionEvent>& events) {
    for (const auto& e : events) {
        nlohmann::json j{{"tick", e.tick}, {"t", e.t}, {"kind", e.kind}, {"details", e.details}};
        out << j.dump() << '\n';
    }
}

// ---------------------------------------------------------------------------
// The closed-loop engine
// ---------------------------------------------------------------------------

class SimulationEngine {
public:
    SimulationEngine(const RunConfig& cfg, nn::ModelBundle gesture_model,
                     nn::ModelBundle movement_model)
        : cfg_(cfg),
          gesture_model_(std::move(gesture_model)),
          movement_model_(std::move(movement_model)),
          simulator_(cfg.envelope, cfg.dt),
          controller_(cfg.controller),
          session_(cfg.workflow, cfg.controller.caps, cfg.envelope.home),
          synth_(cfg.seed),
          gesture_gate_(cfg.gate.threshold, cfg.gate.required_ticks),
          movement_gate_(cfg.gate.threshold, cfg.gate.required_ticks) {
        cfg_.calibration.intrinsics.validate();
    }

    /// Landmark segments referenced by the scenario are resolved against this.
    void set_resource_loader(std::function<std::vector<landmarks::LandmarkFrame>(const std::string&)> fn) {
        load_segment_ = std::move(fn);
    }

    RunResult run(const Scenario& scenario, bool realtime = false) {
        const int ticks = int(std::ceil(scenario.max_t / cfg_.dt + 1e-9)) + 1;
        RunResult result;
        result.trajectory.reserve(std::size_t(ticks));

        std::size_t next_event = 0;
        std::deque<workflow::Command> pending_commands;

        for (int tick = 0; tick < ticks; ++tick) {
            const double t_now = double(tick) * cfg_.dt;
            const auto wall_start = std::chrono::steady_clock::now();
            bool collision_flag = false;
            std::optional<std::string> expect_now;

            while (next_event < scenario.events.size() &&
                   scenario.events[next_event].t <= t_now + 1e-9) {
                const ScenarioEvent& ev = scenario.events[next_event++];
                switch (ev.kind) {
                    case ScenarioEvent::Kind::command:
                        pending_commands.push_back(
                            workflow::parse_command(ev.text, cfg_.workflow.tools));
                        break;
                    case ScenarioEvent::Kind::collision:
                        collision_flag = true;
                        log_engine(tick, t_now, "collision_injected", "");
                        break;
                    case ScenarioEvent::Kind::hand:
                        synth_.set_hand(ev.hand, t_now);
                        log_engine(tick, t_now, "hand_scripted",
                                   std::string(classify::to_string(ev.hand.gesture)) + "/" +
                                       classify::to_string(ev.hand.motion));
                        break;
                    case ScenarioEvent::Kind::hand_absent:
                        synth_.clear();
                        log_engine(tick, t_now, "hand_scripted", "absent");
                        break;
                    case ScenarioEvent::Kind::landmark_segment:
                        enqueue_segment(ev, tick, t_now);
                        break;
                    case ScenarioEvent::Kind::expect:
                        expect_now = ev.expect_state;
                        break;
                }
            }

            step_once(tick, t_now, pending_commands, collision_flag, result);

            if (expect_now) {
                ExpectResult er;
                er.t = t_now;
                er.expected = *expect_now;
                er.actual = workflow::to_string(session_.state());
                er.ok = er.expected == er.actual;
                result.expectations.push_back(er);
                log_engine(tick, t_now, "expect", er.expected + (er.ok ? " ok" : " FAILED, actual " + er.actual));
            }

            if (realtime) {
                const auto elapsed = std::chrono::steady_clock::now() - wall_start;
                const auto budget = std::chrono::duration<double>(cfg_.dt);
                if (elapsed < budget) std::this_thread::sleep_for(budget - elapsed);
            }
        }

        result.final_state = session_.state();
        result.ticks = ticks;
        merge_events(result);
        return result;
    }

    const sim::Simulator& simulator() const { return simulator_; }
    const workflow::DeliverySession& session() const { return session_; }

private:
    void enqueue_segment(const ScenarioEvent& ev, int tick, double t_now) {
        if (!load_segment_)
            throw ConfigError("scenario references landmark segment '" + ev.path +
                              "' but no resource loader is set");
        const auto frames = load_segment_(ev.path);
        for (const auto& f : frames) {
            landmarks::LandmarkFrame shifted = f;
            shifted.t += ev.t;
            replay_.push_back(std::move(shifted));
        }
        std::stable_sort(replay_.begin(), replay_.end(),
                         [](const auto& a, const auto& b) { return a.t < b.t; });
        log_engine(tick, t_now, "segment_loaded", ev.path + " (" + std::to_string(frames.size()) + " frames)");
    }

    /// One synchronous tick: sense -> classify -> gate -> decide -> act -> log.
    void step_once(int tick, double t_now, std::deque<workflow::Command>& pending_commands,
                   bool collision_flag, RunResult& result) {
        // --- Sense. Replayed frames take precedence over the synthesizer.
        landmarks::LandmarkFrame frame;
        frame.t = t_now;
        frame.hand_present = false;
        bool replayed = false;
        while (!replay_.empty() && replay_.front().t <= t_now + 1e-9) {
            frame = replay_.front();
            replay_.pop_front();
            replayed = true;
        }
        if (!replayed && synth_.active())
            frame = synth_.synthesize(t_now, cfg_.calibration.intrinsics, base_to_camera());

        // --- Perceive and gate.
        std::optional<landmarks::NormalizedPose> pose;
        if (frame.hand_present) pose = landmarks::normalize(frame);
        const classify::GestureResult gesture = classify::classify_gesture(gesture_model_, pose);
        const auto gated_gesture =
            gesture_gate_.update(gesture.label, gesture.probabilities.maxCoeff());

        if (frame.hand_present) {
            window_.push_back({t_now, *pose});
            while (window_.size() > std::size_t(landmarks::kWindowLength)) window_.pop_front();
            absent_streak_ = 0;
        } else if (++absent_streak_ > cfg_.urgency_hold_ticks) {
            window_.clear();
            movement_gate_.reset();
        }

        if (window_ready(t_now)) {
            landmarks::MotionWindow w;
            w.dt = cfg_.dt;
            for (int i = 0; i < landmarks::kWindowLength; ++i)
                w.frames[std::size_t(i)] = window_[std::size_t(i)].pose;
            const classify::MovementResult movement =
                classify::classify_movement(movement_model_, w);
            movement_gate_.update(movement.label, movement.probabilities.maxCoeff());
        }

        // --- Delivery target from the palm pixel through the transform chain.
        std::optional<Point3> palm_base;
        if (frame.hand_present && frame.palm_pixel && frame.palm_pixel->depth > 0.0 &&
            frame.palm_pixel->u >= 0.0 && frame.palm_pixel->u < cfg_.calibration.intrinsics.width &&
            frame.palm_pixel->v >= 0.0 && frame.palm_pixel->v < cfg_.calibration.intrinsics.height) {
            palm_base = geometry::pixel_to_base(cfg_.calibration.intrinsics, *frame.palm_pixel,
                                                cfg_.calibration.eye_to_hand, ee_to_base());
        }

        // --- Decide.
        workflow::TickInputs inputs;
        if (!pending_commands.empty()) {
            inputs.command = pending_commands.front();
            pending_commands.pop_front();
        }
        inputs.gesture = gated_gesture.value_or(GestureLabel::no_hand);
        inputs.urgency = movement_gate_.actionable();
        inputs.palm_base = palm_base;
        inputs.ee = simulator_.state();
        inputs.tick = tick;
        inputs.t = t_now;
        const workflow::Directive directive = session_.fsm_step(inputs);

        // --- Act.
        std::optional<control::ControlCommand> cmd;
        const MovementLabel urgency = inputs.urgency.value_or(MovementLabel::low_urgency);
        switch (directive.kind) {
            case workflow::Directive::Kind::move:
                cmd = controller_.step_with(directive.mode, directive.speed_cap,
                                            directive.target - simulator_.state().position, urgency);
                break;
            case workflow::Directive::Kind::hold:
                cmd = control::ControlCommand{};
                cmd->urgency = urgency;
                break;
            case workflow::Directive::Kind::pick_up:
                simulator_.attach_tool(directive.tool_id);
                log_engine(tick, t_now, "tool_attached", directive.tool_id);
                cmd = control::ControlCommand{};
                cmd->urgency = urgency;
                break;
            case workflow::Directive::Kind::release:
                if (auto released = simulator_.release_tool())
                    log_engine(tick, t_now, "tool_released", *released);
                cmd = control::ControlCommand{};
                cmd->urgency = urgency;
                break;
            case workflow::Directive::Kind::none:
                break;
        }
        if (simulator_.state().collision_latched) cmd.reset(); // latched: no commands accepted

        const auto events = simulator_.step(cmd, collision_flag);

        // --- Log.
        TrajectoryRow row;
        row.tick = tick;
        row.t = simulator_.state().t;
        row.position = simulator_.state().position;
        row.velocity = simulator_.state().velocity;
        if (cmd) {
            row.mode = control::to_string(cmd->mode);
            row.urgency = classify::to_string(cmd->urgency);
        }
        row.state = workflow::to_string(session_.state());
        row.events = events;
        result.trajectory.push_back(std::move(row));
    }

    bool window_ready(double t_now) const {
        if (window_.size() < std::size_t(landmarks::kWindowLength)) return false;
        if (window_.back().t < t_now - 1e-9) return false; // must include the current tick
        for (std::size_t i = 1; i < window_.size(); ++i)
            if (window_[i].t - window_[i - 1].t > 2.0 * cfg_.dt + 1e-9) return false;
        return true;
    }

    geometry::RigidTransform ee_to_base() const {
        if (cfg_.camera_mount == CameraMount::fixed) return cfg_.calibration.ee_to_base;
        return geometry::RigidTransform(Eigen::Matrix3d::Identity(), simulator_.state().position);
    }

    geometry::RigidTransform base_to_camera() const {
        return geometry::invert(geometry::compose(ee_to_base(), cfg_.calibration.eye_to_hand));
    }

    void log_engine(int tick, double t, std::string kind, std::string details) {
        engine_events_.push_back({tick, t, std::move(kind), std::move(details)});
    }

    void merge_events(RunResult& result) const {
        const auto& a = session_.events();
        const auto& b = engine_events_;
        result.events.clear();
        result.events.reserve(a.size() + b.size());
        std::size_t i = 0, j = 0;
        while (i < a.size() || j < b.size()) {
            if (j >= b.size() || (i < a.size() && a[i].tick <= b[j].tick))
                result.events.push_back(a[i++]);
            else
                result.events.push_back(b[j++]);
        }
    }

    struct TimedPose {
        double t;
        landmarks::NormalizedPose pose;
    };

    RunConfig cfg_;
    nn::ModelBundle gesture_model_;
    nn::ModelBundle movement_model_;
    sim::Simulator simulator_;
    control::TrackingController controller_;
    workflow::DeliverySession session_;
    HandSynthesizer synth_;
    classify::ConfidenceGate<GestureLabel> gesture_gate_;
    classify::ConfidenceGate<MovementLabel> movement_gate_;
    std::deque<TimedPose> window_;
    std::deque<landmarks::LandmarkFrame> replay_;
    std::vector<workflow::SessionEvent> engine_events_;
    std::function<std::vector<landmarks::LandmarkFrame>(const std::string&)> load_segment_;
    int absent_streak_ = 0;
};

// ---------------------------------------------------------------------------
// Step-response harness (controller characterization, no workflow)
// ---------------------------------------------------------------------------

struct StepMetrics {
    double overshoot = 0.0;      // max |x| beyond the target, per unit step
    double settle_time = -1.0;   // first t with |x| staying within 2%
    double steady_state_error = 0.0;
};

struct StepResponse {
    std::vector<double> t;
    std::vector<Point3> x;
    std::vector<Point3> u;
    StepMetrics metrics;
};

/// Drive the single-integrator plant x' = u from a unit x-error toward zero
/// with the chosen loop. No speed cap: this isolates the loop dynamics.
inline StepResponse step_response(control::Mode mode, const control::ControllerConfig& cfg,
                                  double duration = 4.0) {
    control::TrackingController ctl(cfg);
    StepResponse resp;
    const int n = int(std::round(duration / cfg.dt));
    Point3 x(1.0, 0.0, 0.0);
    const double cap = 1e9;

    double peak_neg = 0.0; // crossing below zero = overshoot for a decay-to-zero step
    for (int k = 0; k <= n; ++k) {
        const double t = double(k) * cfg.dt;
        const control::ControlCommand cmd =
            ctl.step_with(mode, cap, -x, MovementLabel::low_urgency);
        resp.t.push_back(t);
        resp.x.push_back(x);
        resp.u.push_back(cmd.velocity);
        x += cmd.velocity * cfg.dt;
        peak_neg = std::min(peak_neg, x.x());
    }

    resp.metrics.overshoot = std::max(0.0, -peak_neg); // avoids IEEE -0
    resp.metrics.steady_state_error = std::abs(resp.x.back().x());
    for (std::size_t i = 0; i < resp.x.size(); ++i) {
        bool settled = true;
        for (std::size_t j = i; j < resp.x.size(); ++j)
            if (std::abs(resp.x[j].x()) > 0.02) {
                settled = false;
                break;
            }
        if (settled) {
            resp.metrics.settle_time = resp.t[i];
            break;
        }
    }
    return resp;
}

inline void write_step_response_csv(std::ostream& out, const StepResponse& r) {
    using handover::detail::fmt_g9;
    out << "t,x,y,z,ux,uy,uz\n";
    for (std::size_t i = 0; i < r.t.size(); ++i) {
        out << fmt_g9(r.t[i]) << ',' << fmt_g9(r.x[i].x()) << ',' << fmt_g9(r.x[i].y()) << ','
            << fmt_g9(r.x[i].z()) << ',' << fmt_g9(r.u[i].x()) << ',' << fmt_g9(r.u[i].y()) << ','
            << fmt_g9(r.u[i].z()) << '\n';
    }
}

} // namespace handover::pipeline
