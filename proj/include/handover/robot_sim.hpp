#pragma once

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "handover/control.hpp"
#include "handover/errors.hpp"
#include "handover/geometry.hpp"

namespace handover::sim {

using control::ControlCommand;
using geometry::Point3;

struct Gripper {
    std::optional<std::string> tool; // empty = not holding

    bool holding() const { return tool.has_value(); }
};

struct EndEffectorState {
    Point3 position = Point3::Zero();
    Point3 velocity = Point3::Zero();
    double t = 0.0;
    Gripper gripper;
    bool collision_latched = false;
};

/// Axis-aligned workspace box plus velocity/acceleration ceilings.
struct SafetyEnvelope {
    Point3 wall_min = Point3(-0.5, -0.5, 0.0);
    Point3 wall_max = Point3(0.5, 0.5, 0.8);
    double v_max = 0.5;  // m/s
    double a_max = 2.0;  // m/s^2
    Point3 home = Point3(0.0, 0.0, 0.4);

    void validate() const {
        for (int i = 0; i < 3; ++i)
            if (!(wall_min[i] < wall_max[i])) throw ConfigError("virtual wall box is degenerate");
        if (!(v_max > 0.0) || !(a_max > 0.0)) throw ConfigError("v_max and a_max must be positive");
        for (int i = 0; i < 3; ++i)
            if (home[i] < wall_min[i] || home[i] > wall_max[i])
                throw ConfigError("home pose lies outside the virtual wall");
    }
};

inline SafetyEnvelope envelope_from_json(const nlohmann::json& j) {
    SafetyEnvelope env;
    auto read_point = [&](const char* key, Point3& p) {
        if (!j.contains(key)) return;
        const auto v = j.at(key).get<std::vector<double>>();
        if (v.size() != 3) throw ConfigError(std::string(key) + " must have 3 entries");
        p = Point3(v[0], v[1], v[2]);
    };
    read_point("wall_min", env.wall_min);
    read_point("wall_max", env.wall_max);
    read_point("home", env.home);
    env.v_max = j.value("v_max", env.v_max);
    env.a_max = j.value("a_max", env.a_max);
    env.validate();
    return env;
}

enum class SafetyEventKind { wall_clamp, velocity_clamp, accel_clamp, collision_stop };

inline const char* to_string(SafetyEventKind k) {
    switch (k) {
        case SafetyEventKind::wall_clamp: return "wall_clamp";
        case SafetyEventKind::velocity_clamp: return "velocity_clamp";
        case SafetyEventKind::accel_clamp: return "accel_clamp";
        case SafetyEventKind::collision_stop: return "collision_stop";
    }
    return "?";
}

struct SafetyEvent {
    SafetyEventKind kind;
    double t = 0.0;
    std::string details;
};

/// Kinematic point end-effector. Commands are velocity requests; the envelope
/// applies slew-rate limiting, speed clamping, and the wall box. A collision
/// zeroes velocity immediately and latches until reset.
class Simulator {
public:
    Simulator(const SafetyEnvelope& env = {}, double dt = 1.0 / 15.0) : env_(env), dt_(dt) {
        env_.validate();
        if (!(dt > 0.0)) throw ConfigError("dt must be positive");
        state_.position = env_.home;
    }

    const EndEffectorState& state() const { return state_; }
    const SafetyEnvelope& envelope() const { return env_; }
    double dt() const { return dt_; }

    /// Advance one tick. A non-empty command while the collision latch is set
    /// is a caller error.
    std::vector<SafetyEvent> step(const std::optional<ControlCommand>& cmd, bool collision_flag) {
        std::vector<SafetyEvent> events;
        if (state_.collision_latched && cmd.has_value())
            throw DomainError("command rejected: collision stop is latched");

        const double next_t = state_.t + dt_;
        if (collision_flag) {
            state_.velocity.setZero();
            state_.collision_latched = true;
            events.push_back({SafetyEventKind::collision_stop, next_t, "external collision signal"});
            state_.t = next_t;
            return events;
        }

        Point3 requested = state_.collision_latched ? Point3(Point3::Zero())
                                                    : (cmd ? cmd->velocity : Point3(Point3::Zero()));

        // Slew-rate limit toward the requested velocity.
        Point3 dv = requested - state_.velocity;
        const double dv_norm = dv.norm();
        const double dv_allowed = env_.a_max * dt_;
        Point3 new_velocity = requested;
        if (dv_norm > dv_allowed) {
            new_velocity = state_.velocity + dv * (dv_allowed / dv_norm);
            events.push_back({SafetyEventKind::accel_clamp, next_t,
                              "requested dv " + std::to_string(dv_norm / dt_) + " m/s^2"});
        }

        const double speed = new_velocity.norm();
        if (speed > env_.v_max) {
            new_velocity *= env_.v_max / speed;
            events.push_back({SafetyEventKind::velocity_clamp, next_t,
                              "requested " + std::to_string(speed) + " m/s"});
        }

        Point3 new_position = state_.position + dt_ * new_velocity;
        for (int axis = 0; axis < 3; ++axis) {
            if (new_position[axis] < env_.wall_min[axis]) {
                new_position[axis] = env_.wall_min[axis];
                events.push_back({SafetyEventKind::wall_clamp, next_t, axis_name(axis) + std::string("-min")});
            } else if (new_position[axis] > env_.wall_max[axis]) {
                new_position[axis] = env_.wall_max[axis];
                events.push_back({SafetyEventKind::wall_clamp, next_t, axis_name(axis) + std::string("-max")});
            }
        }

        state_.velocity = new_velocity;
        state_.position = new_position;
        state_.t = next_t;
        return events;
    }

    /// Teleport home, zero velocity, clear the latch. Gripper content survives.
    void reset_to_home() {
        state_.position = env_.home;
        state_.velocity.setZero();
        state_.collision_latched = false;
    }

    void attach_tool(const std::string& tool_id) {
        if (state_.gripper.holding()) throw DomainError("gripper already holds a tool");
        state_.gripper.tool = tool_id;
    }

    std::optional<std::string> release_tool() {
        auto tool = state_.gripper.tool;
        state_.gripper.tool.reset();
        return tool;
    }

private:
    static const char* axis_name(int axis) { return axis == 0 ? "x" : (axis == 1 ? "y" : "z"); }

    SafetyEnvelope env_;
    double dt_;
    EndEffectorState state_;
};

} // namespace handover::sim
