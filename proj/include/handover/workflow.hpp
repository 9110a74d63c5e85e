#pragma once

#include <algorithm>
#include <cctype>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "handover/classifiers.hpp"
#include "handover/control.hpp"
#include "handover/errors.hpp"
#include "handover/geometry.hpp"
#include "handover/robot_sim.hpp"

namespace handover::workflow {

using classify::GestureLabel;
using classify::MovementLabel;
using geometry::Point3;

// ---------------------------------------------------------------------------
// Tools and the command lexicon
// ---------------------------------------------------------------------------

struct Tool {
    std::string id;
    Point3 pickup_pose = Point3::Zero();
    std::vector<std::string> keywords;         // specific, matched first
    std::vector<std::string> generic_keywords; // fallback, only if nothing specific matched
};

inline std::vector<Tool> default_tools() {
    return {
        {"soldering_iron", Point3(0.20, -0.25, 0.10), {"iron"}, {}},
        {"desoldering_pump", Point3(0.10, -0.25, 0.10), {"pump", "desolder"}, {}},
        {"soldering_wire", Point3(0.20, -0.10, 0.10), {}, {"wire", "solder"}},
        {"wire_cutter", Point3(0.10, -0.10, 0.10), {"cutter", "cutters"}, {}},
    };
}

struct Command {
    std::string text;
    std::optional<std::string> tool_id; // parsed fetch intent, empty = none
};

namespace detail {

inline std::string lowercase(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return char(std::tolower(c)); });
    return s;
}

} // namespace detail

/// Total, case-insensitive keyword match. Specific keywords ("cutter", "iron")
/// take precedence over generic ones ("wire", "solder"), so "wire cutter"
/// resolves to the cutter. A text matching two different tools parses to none.
inline Command parse_command(const std::string& text, const std::vector<Tool>& tools) {
    const std::string lower = detail::lowercase(text);
    Command cmd{text, std::nullopt};

    auto matches = [&](const std::vector<std::string>& words) {
        return std::any_of(words.begin(), words.end(), [&](const std::string& w) {
            return lower.find(w) != std::string::npos;
        });
    };

    std::vector<const Tool*> hits;
    for (const auto& tool : tools)
        if (matches(tool.keywords)) hits.push_back(&tool);
    if (hits.empty())
        for (const auto& tool : tools)
            if (matches(tool.generic_keywords)) hits.push_back(&tool);

    if (hits.size() == 1) cmd.tool_id = hits.front()->id;
    return cmd;
}

// ---------------------------------------------------------------------------
// Release rule
// ---------------------------------------------------------------------------

/// True once the end effector has stayed within the release radius of the
/// target with an open-hand gesture for the required consecutive ticks.
class ReleaseMonitor {
public:
    ReleaseMonitor(double radius = 0.03, int dwell_ticks = 5)
        : radius_(radius), dwell_ticks_(dwell_ticks) {}

    bool update(const Point3& position, const Point3& target, GestureLabel gesture) {
        if (gesture == GestureLabel::open && (position - target).norm() <= radius_) {
            ++streak_;
        } else {
            streak_ = 0;
        }
        return streak_ >= dwell_ticks_;
    }

    void reset() { streak_ = 0; }
    int streak() const { return streak_; }

private:
    double radius_;
    int dwell_ticks_;
    int streak_ = 0;
};

// ---------------------------------------------------------------------------
// Delivery session state machine
// ---------------------------------------------------------------------------

enum class SessionState { idle, fetching, waiting_for_hand, delivering, releasing, returning, stopped };

inline const char* to_string(SessionState s) {
    switch (s) {
        case SessionState::idle: return "idle";
        case SessionState::fetching: return "fetching";
        case SessionState::waiting_for_hand: return "waiting_for_hand";
        case SessionState::delivering: return "delivering";
        case SessionState::releasing: return "releasing";
        case SessionState::returning: return "returning";
        case SessionState::stopped: return "stopped";
    }
    return "?";
}

struct WorkflowConfig {
    std::vector<Tool> tools = default_tools();
    double arrive_radius = 0.02;   // m, pickup/home arrival
    double release_radius = 0.03;  // m
    int release_dwell_ticks = 5;
    int wait_timeout_ticks = 150;  // 10 s at 15 Hz without progress
};

inline WorkflowConfig workflow_config_from_json(const nlohmann::json& j) {
    WorkflowConfig cfg;
    cfg.arrive_radius = j.value("arrive_radius", cfg.arrive_radius);
    cfg.release_radius = j.value("release_radius", cfg.release_radius);
    cfg.release_dwell_ticks = j.value("release_dwell_ticks", cfg.release_dwell_ticks);
    cfg.wait_timeout_ticks = j.value("wait_timeout_ticks", cfg.wait_timeout_ticks);
    if (j.contains("tools")) {
        cfg.tools.clear();
        for (const auto& t : j.at("tools")) {
            Tool tool;
            tool.id = t.at("id").get<std::string>();
            const auto p = t.at("pickup_pose").get<std::vector<double>>();
            if (p.size() != 3) throw ConfigError("tool pickup_pose must have 3 entries");
            tool.pickup_pose = Point3(p[0], p[1], p[2]);
            tool.keywords = t.value("keywords", std::vector<std::string>{});
            tool.generic_keywords = t.value("generic_keywords", std::vector<std::string>{});
            cfg.tools.push_back(std::move(tool));
        }
    }
    return cfg;
}

/// What the state machine asks of the control/simulation layer this tick.
struct Directive {
    enum class Kind { none, hold, move, pick_up, release };
    Kind kind = Kind::none;
    Point3 target = Point3::Zero();            // for move
    control::Mode mode = control::Mode::lqr;   // for move
    double speed_cap = 0.0;                    // for move
    std::string tool_id;                       // for pick_up
};

struct SessionEvent {
    int tick = 0;
    double t = 0.0;
    std::string kind;
    std::string details;
};

/// Inputs sampled for one synchronous tick.
struct TickInputs {
    std::optional<Command> command;
    GestureLabel gesture = GestureLabel::no_hand;       // debounced
    std::optional<MovementLabel> urgency;               // debounced, empty until first window
    std::optional<Point3> palm_base;                    // delivery target, base frame
    sim::EndEffectorState ee;
    int tick = 0;
    double t = 0.0;
};

/// Two-stage fetch/deliver session. One fsm_step per tick; directives are
/// executed by the caller against the controller and simulator.
class DeliverySession {
public:
    explicit DeliverySession(const WorkflowConfig& cfg = {},
                             const control::SpeedCaps& caps = {},
                             const Point3& home = Point3(0.0, 0.0, 0.4))
        : cfg_(cfg), caps_(caps), release_(cfg.release_radius, cfg.release_dwell_ticks),
          home_(home) {}

    SessionState state() const { return state_; }
    const std::optional<std::string>& requested_tool() const { return requested_; }
    const std::optional<Point3>& target() const { return target_; }
    const std::vector<SessionEvent>& events() const { return events_; }
    const WorkflowConfig& config() const { return cfg_; }

    Directive fsm_step(const TickInputs& in) {
        if (state_ == SessionState::stopped) {
            if (in.command) log(in, "command_rejected", "session stopped: " + in.command->text);
            return {};
        }

        // Collision latch dominates everything else.
        if (in.ee.collision_latched) {
            transition(in, SessionState::stopped, "collision_stop");
            return {};
        }

        // Debounced go-away aborts fetch/delivery and heads home. Idle and
        // returning have nothing to abort, so a lingering wave-off cannot
        // flap the session between idle and returning.
        const bool abortable = state_ == SessionState::fetching ||
                               state_ == SessionState::waiting_for_hand ||
                               state_ == SessionState::delivering ||
                               state_ == SessionState::releasing;
        if (abortable && in.urgency && *in.urgency == MovementLabel::go_away) {
            target_.reset();
            release_.reset();
            transition(in, SessionState::returning, "go_away");
            return move_home();
        }

        switch (state_) {
            case SessionState::idle: return step_idle(in);
            case SessionState::fetching: return step_fetching(in);
            case SessionState::waiting_for_hand: return step_waiting(in);
            case SessionState::delivering: return step_delivering(in);
            case SessionState::releasing: return step_releasing(in);
            case SessionState::returning: return step_returning(in);
            case SessionState::stopped: break;
        }
        return {};
    }

    /// Legal transition table; the property tests check every observed move
    /// against this.
    static bool transition_allowed(SessionState from, SessionState to) {
        if (from == to) return true;
        switch (from) {
            case SessionState::idle:
                return to == SessionState::fetching || to == SessionState::stopped;
            case SessionState::fetching:
                return to == SessionState::waiting_for_hand || to == SessionState::returning ||
                       to == SessionState::stopped;
            case SessionState::waiting_for_hand:
                return to == SessionState::delivering || to == SessionState::returning ||
                       to == SessionState::stopped;
            case SessionState::delivering:
                return to == SessionState::releasing || to == SessionState::returning ||
                       to == SessionState::stopped;
            case SessionState::releasing:
                return to == SessionState::returning || to == SessionState::stopped;
            case SessionState::returning:
                return to == SessionState::idle || to == SessionState::stopped;
            case SessionState::stopped:
                return false;
        }
        return false;
    }

private:
    const Tool& tool_by_id(const std::string& id) const {
        for (const auto& t : cfg_.tools)
            if (t.id == id) return t;
        throw ConfigError("unknown tool '" + id + "'");
    }

    void log(const TickInputs& in, std::string kind, std::string details) {
        events_.push_back({in.tick, in.t, std::move(kind), std::move(details)});
    }

    void transition(const TickInputs& in, SessionState to, const std::string& reason) {
        log(in, "transition",
            std::string(to_string(state_)) + " -> " + to_string(to) + " (" + reason + ")");
        state_ = to;
        ticks_in_state_ = 0;
    }

    Directive move_home() const {
        Directive d;
        d.kind = Directive::Kind::move;
        d.target = home_;
        d.mode = control::Mode::lqr;
        d.speed_cap = caps_.med;
        return d;
    }

    Directive step_idle(const TickInputs& in) {
        if (in.command && in.command->tool_id) {
            if (in.ee.gripper.holding()) {
                // A previous delivery was aborted with the tool retained; a
                // human has to clear the gripper before the next fetch.
                log(in, "command_rejected", "gripper still holds " + *in.ee.gripper.tool +
                                                ": " + in.command->text);
                return {};
            }
            requested_ = in.command->tool_id;
            transition(in, SessionState::fetching, "fetch " + *requested_);
            Directive d;
            d.kind = Directive::Kind::move;
            d.target = tool_by_id(*requested_).pickup_pose;
            d.mode = control::Mode::lqr;
            d.speed_cap = caps_.med;
            return d;
        }
        if (in.command) log(in, "command_unrecognized", in.command->text);
        return {};
    }

    Directive step_fetching(const TickInputs& in) {
        ignore_command(in);
        const Point3 pickup = tool_by_id(*requested_).pickup_pose;
        if ((in.ee.position - pickup).norm() <= cfg_.arrive_radius) {
            transition(in, SessionState::waiting_for_hand, "arrived at pickup");
            Directive d;
            d.kind = Directive::Kind::pick_up;
            d.tool_id = *requested_;
            return d;
        }
        Directive d;
        d.kind = Directive::Kind::move;
        d.target = pickup;
        d.mode = control::Mode::lqr;
        d.speed_cap = caps_.med;
        return d;
    }

    Directive step_waiting(const TickInputs& in) {
        ignore_command(in);
        if (in.gesture == GestureLabel::open) {
            release_.reset();
            transition(in, SessionState::delivering, "open hand detected");
            return hold();
        }
        if (++ticks_in_state_ > cfg_.wait_timeout_ticks) {
            transition(in, SessionState::returning, "wait timeout");
            return move_home();
        }
        return hold();
    }

    Directive step_delivering(const TickInputs& in) {
        ignore_command(in);
        if (in.palm_base) {
            target_ = in.palm_base;
            ticks_in_state_ = 0;
        } else if (++ticks_in_state_ > cfg_.wait_timeout_ticks) {
            target_.reset();
            transition(in, SessionState::returning, "target lost");
            return move_home();
        }

        const bool ready = target_ && release_.update(in.ee.position, *target_, in.gesture);
        if (ready) {
            transition(in, SessionState::releasing, "release rule satisfied");
            Directive d;
            d.kind = Directive::Kind::release;
            return d;
        }

        // An occupied hand cannot receive; hold position and keep watching.
        if (in.gesture == GestureLabel::occupied || !target_) return hold();

        const control::ModeSelection sel =
            control::select_mode(in.urgency.value_or(MovementLabel::low_urgency), caps_);
        Directive d;
        d.kind = Directive::Kind::move;
        d.target = *target_;
        d.mode = sel.mode;
        d.speed_cap = sel.speed_cap;
        return d;
    }

    Directive step_releasing(const TickInputs& in) {
        ignore_command(in);
        if (!in.ee.gripper.holding()) {
            target_.reset();
            transition(in, SessionState::returning, "gripper emptied");
            return move_home();
        }
        Directive d;
        d.kind = Directive::Kind::release;
        return d;
    }

    Directive step_returning(const TickInputs& in) {
        ignore_command(in);
        if ((in.ee.position - home_).norm() <= cfg_.arrive_radius) {
            requested_.reset();
            transition(in, SessionState::idle, "back home");
            return {};
        }
        return move_home();
    }

    void ignore_command(const TickInputs& in) {
        if (in.command) log(in, "command_ignored", "busy (" + std::string(to_string(state_)) + "): " + in.command->text);
    }

    static Directive hold() {
        Directive d;
        d.kind = Directive::Kind::hold;
        return d;
    }

    WorkflowConfig cfg_;
    control::SpeedCaps caps_;
    ReleaseMonitor release_;
    SessionState state_ = SessionState::idle;
    std::optional<std::string> requested_;
    std::optional<Point3> target_;
    Point3 home_;
    int ticks_in_state_ = 0;
    std::vector<SessionEvent> events_;
};

} // namespace handover::workflow
