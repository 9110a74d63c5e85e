#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <nlohmann/json.hpp>

#include "handover/classifiers.hpp"
#include "handover/errors.hpp"
#include "handover/geometry.hpp"

namespace handover::control {

using classify::MovementLabel;
using geometry::Point3;

enum class Mode { lqr, pid };

inline const char* to_string(Mode m) { return m == Mode::lqr ? "lqr" : "pid"; }

/// Cartesian velocity command for one tick.
struct ControlCommand {
    Point3 velocity = Point3::Zero(); // m/s
    Mode mode = Mode::lqr;
    MovementLabel urgency = MovementLabel::low_urgency;
    bool saturated = false;
};

// ---------------------------------------------------------------------------
// PID
// ---------------------------------------------------------------------------

struct PidGains {
    double kp = 0.1;
    double ki = 0.0;
    double kd = 0.2;
    double dt = 1.0 / 15.0;

    void validate() const {
        if (!(dt > 0.0)) throw ConfigError("pid dt must be positive");
        if (kp < 0.0 || ki < 0.0 || kd < 0.0 || !std::isfinite(kp + ki + kd))
            throw ConfigError("pid gains must be finite and nonnegative");
    }
};

struct PidState {
    Point3 integral = Point3::Zero();
    Point3 previous_error = Point3::Zero();
    bool initialized = false;

    void reset() {
        integral.setZero();
        previous_error.setZero();
        initialized = false;
    }
};

/// One PID update. The first call after a reset seeds the previous error with
/// the current one, so the derivative term starts at zero. The integral is
/// not accumulated on saturated ticks (anti-windup).
inline ControlCommand pid_step(const PidGains& gains, PidState& state, const Point3& error,
                               double speed_cap) {
    gains.validate();
    if (!error.allFinite()) throw DomainError("pid error is not finite");

    if (!state.initialized) {
        state.previous_error = error;
        state.initialized = true;
    }

    const Point3 integral_candidate = state.integral + error * gains.dt;
    const Point3 derivative = (error - state.previous_error) / gains.dt;
    Point3 u = gains.kp * error + gains.ki * integral_candidate + gains.kd * derivative;

    ControlCommand cmd;
    cmd.mode = Mode::pid;
    const double norm = u.norm();
    if (norm > speed_cap) {
        u *= speed_cap / norm;
        cmd.saturated = true;
    } else {
        state.integral = integral_candidate;
    }
    state.previous_error = error;
    cmd.velocity = u;
    return cmd;
}

// ---------------------------------------------------------------------------
// LQR / continuous algebraic Riccati equation
// ---------------------------------------------------------------------------

struct LqrProblem {
    Eigen::MatrixXd A; // state matrix
    Eigen::MatrixXd B; // input matrix
    Eigen::MatrixXd Q; // state cost, symmetric PSD
    Eigen::MatrixXd R; // input cost, symmetric PD

    /// Single-integrator error dynamics with identity costs; the shipped default.
    static LqrProblem default_problem(int n = 3) {
        LqrProblem p;
        p.A = Eigen::MatrixXd::Zero(n, n);
        p.B = Eigen::MatrixXd::Identity(n, n);
        p.Q = Eigen::MatrixXd::Identity(n, n);
        p.R = Eigen::MatrixXd::Identity(n, n);
        return p;
    }
};

struct LqrGain {
    Eigen::MatrixXd K; // feedback gain
    Eigen::MatrixXd P; // Riccati solution
    double residual = 0.0;
};

namespace detail {

/// Solve A^T X + X A = -C for X (Kronecker form; fine for the small sizes here).
inline Eigen::MatrixXd solve_lyapunov(const Eigen::MatrixXd& a, const Eigen::MatrixXd& c) {
    const Eigen::Index n = a.rows();
    Eigen::MatrixXd big = Eigen::MatrixXd::Zero(n * n, n * n);
    const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(n, n);
    // vec(A^T X + X A) = (I (x) A^T + A^T (x) I) vec(X), column-major vec.
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j)
            for (Eigen::Index k = 0; k < n; ++k) {
                big(j * n + i, j * n + k) += a(k, i); // I (x) A^T
                big(j * n + i, k * n + i) += a(k, j); // A^T (x) I
            }
    Eigen::VectorXd rhs(n * n);
    for (Eigen::Index j = 0; j < n; ++j)
        for (Eigen::Index i = 0; i < n; ++i) rhs[j * n + i] = -c(i, j);
    const Eigen::VectorXd x = big.partialPivLu().solve(rhs);
    Eigen::MatrixXd out(n, n);
    for (Eigen::Index j = 0; j < n; ++j)
        for (Eigen::Index i = 0; i < n; ++i) out(i, j) = x[j * n + i];
    return 0.5 * (out + out.transpose());
}

inline double care_residual(const LqrProblem& p, const Eigen::MatrixXd& P,
                            const Eigen::MatrixXd& r_inv) {
    const Eigen::MatrixXd res =
        p.A.transpose() * P + P * p.A - P * p.B * r_inv * p.B.transpose() * P + p.Q;
    return res.norm();
}

inline bool is_hurwitz(const Eigen::MatrixXd& m) {
    const Eigen::EigenSolver<Eigen::MatrixXd> es(m);
    return (es.eigenvalues().real().array() < 0.0).all();
}

} // namespace detail

/// Solve the CARE A^T P + P A - P B R^-1 B^T P + Q = 0 by Newton-Kleinman
/// iteration from a stabilizing initial gain. Each iterate solves a Lyapunov
/// equation for the current closed loop; convergence is certified by the
/// Frobenius norm of the Riccati residual.
inline LqrGain solve_care(const LqrProblem& problem,
                          std::optional<Eigen::MatrixXd> initial_gain = std::nullopt) {
    const Eigen::Index n = problem.A.rows();
    if (problem.A.cols() != n || problem.B.rows() != n || problem.Q.rows() != n ||
        problem.Q.cols() != n || problem.R.rows() != problem.B.cols() ||
        problem.R.cols() != problem.B.cols())
        throw ConfigError("lqr problem dimensions are inconsistent");
    if ((problem.Q - problem.Q.transpose()).norm() > 1e-9) throw ConfigError("Q must be symmetric");
    if ((problem.R - problem.R.transpose()).norm() > 1e-9) throw ConfigError("R must be symmetric");

    const Eigen::MatrixXd r_inv = problem.R.inverse();

    Eigen::MatrixXd K;
    if (initial_gain) {
        K = *initial_gain;
    } else if (detail::is_hurwitz(problem.A)) {
        K = Eigen::MatrixXd::Zero(problem.B.cols(), n);
    } else if (problem.B.rows() == problem.B.cols() &&
               std::abs(problem.B.determinant()) > 1e-12) {
        // A - B K0 = -I, a guaranteed stabilizer when B is invertible.
        K = problem.B.inverse() * (problem.A + Eigen::MatrixXd::Identity(n, n));
    } else {
        throw SolverError("no stabilizing initial gain available; provide one explicitly");
    }
    if (!detail::is_hurwitz(problem.A - problem.B * K))
        throw SolverError("initial gain does not stabilize the system");

    constexpr int kMaxIterations = 100;
    constexpr double kTargetResidual = 1e-10;

    std::vector<double> residual_history;
    Eigen::MatrixXd P;
    int flat_steps = 0;
    for (int iter = 0; iter < kMaxIterations; ++iter) {
        const Eigen::MatrixXd a_cl = problem.A - problem.B * K;
        const Eigen::MatrixXd cost = problem.Q + K.transpose() * problem.R * K;
        P = detail::solve_lyapunov(a_cl, cost);
        K = r_inv * problem.B.transpose() * P;

        const double residual = detail::care_residual(problem, P, r_inv);
        residual_history.push_back(residual);
        if (residual < kTargetResidual) break;
        // Stop once the residual sits on its numerical floor.
        if (residual_history.size() >= 2 && residual >= residual_history[residual_history.size() - 2] * 0.999) {
            if (++flat_steps >= 2) break;
        } else {
            flat_steps = 0;
        }
    }

    LqrGain gain;
    gain.P = 0.5 * (P + P.transpose());
    gain.K = r_inv * problem.B.transpose() * gain.P;
    gain.residual = detail::care_residual(problem, gain.P, r_inv);
    if (gain.residual >= 1e-8) {
        std::string msg = "care residual did not reach 1e-8; history:";
        for (double r : residual_history) msg += " " + std::to_string(r);
        throw SolverError(msg);
    }
    if (!detail::is_hurwitz(problem.A - problem.B * gain.K))
        throw SolverError("solved gain is not stabilizing");
    return gain;
}

/// LQR velocity command toward the target: u = K * error, norm-capped.
inline ControlCommand lqr_step(const LqrGain& gain, const Point3& error, double speed_cap) {
    if (!error.allFinite()) throw DomainError("lqr error is not finite");
    ControlCommand cmd;
    cmd.mode = Mode::lqr;
    Point3 u = gain.K * error;
    const double norm = u.norm();
    if (norm > speed_cap) {
        u *= speed_cap / norm;
        cmd.saturated = true;
    }
    cmd.velocity = u;
    return cmd;
}

// ---------------------------------------------------------------------------
// Mode supervisor
// ---------------------------------------------------------------------------

struct SpeedCaps {
    double low = 0.10;  // m/s
    double med = 0.25;
    double high = 0.50;
};

struct ModeSelection {
    bool abort = false; // go_away: the workflow takes over, no tracking command
    Mode mode = Mode::lqr;
    double speed_cap = 0.0;
};

/// Urgency to controller mapping: high urgency runs the faster PID loop,
/// low/medium stay in LQR at different speed caps, go_away aborts tracking.
inline ModeSelection select_mode(MovementLabel urgency, const SpeedCaps& caps = SpeedCaps{}) {
    ModeSelection sel;
    switch (urgency) {
        case MovementLabel::low_urgency:
            sel.mode = Mode::lqr;
            sel.speed_cap = caps.low;
            break;
        case MovementLabel::medium_urgency:
            sel.mode = Mode::lqr;
            sel.speed_cap = caps.med;
            break;
        case MovementLabel::high_urgency:
            sel.mode = Mode::pid;
            sel.speed_cap = caps.high;
            break;
        case MovementLabel::go_away:
            sel.abort = true;
            break;
    }
    return sel;
}

// ---------------------------------------------------------------------------
// Tracking controller: owns both loops, resets state on mode switches
// ---------------------------------------------------------------------------

struct ControllerConfig {
    PidGains pid;
    LqrProblem lqr = LqrProblem::default_problem();
    SpeedCaps caps;
    double dt = 1.0 / 15.0;
};

inline ControllerConfig controller_config_from_json(const nlohmann::json& j) {
    ControllerConfig cfg;
    if (j.contains("dt")) cfg.dt = j.at("dt").get<double>();
    cfg.pid.dt = cfg.dt;
    if (j.contains("pid")) {
        const auto& p = j.at("pid");
        cfg.pid.kp = p.value("kp", cfg.pid.kp);
        cfg.pid.ki = p.value("ki", cfg.pid.ki);
        cfg.pid.kd = p.value("kd", cfg.pid.kd);
    }
    cfg.pid.validate();
    if (j.contains("caps")) {
        const auto& c = j.at("caps");
        cfg.caps.low = c.value("low", cfg.caps.low);
        cfg.caps.med = c.value("med", cfg.caps.med);
        cfg.caps.high = c.value("high", cfg.caps.high);
    }
    if (j.contains("lqr")) {
        const auto& l = j.at("lqr");
        auto read_mat = [&](const char* key, Eigen::MatrixXd& m) {
            if (!l.contains(key)) return;
            const auto rows = l.at(key).get<std::vector<std::vector<double>>>();
            const Eigen::Index n = Eigen::Index(rows.size());
            m.resize(n, n);
            for (Eigen::Index r = 0; r < n; ++r) {
                if (Eigen::Index(rows[std::size_t(r)].size()) != n)
                    throw ConfigError("lqr matrices must be square");
                for (Eigen::Index c = 0; c < n; ++c) m(r, c) = rows[std::size_t(r)][std::size_t(c)];
            }
        };
        read_mat("A", cfg.lqr.A);
        read_mat("B", cfg.lqr.B);
        read_mat("Q", cfg.lqr.Q);
        read_mat("R", cfg.lqr.R);
    }
    return cfg;
}

/// Per-session tracking controller. Switching modes resets loop state so no
/// integral or derivative history leaks across regimes.
class TrackingController {
public:
    explicit TrackingController(const ControllerConfig& cfg = {})
        : cfg_(cfg), gain_(solve_care(cfg.lqr)) {
        cfg_.pid.dt = cfg_.dt;
    }

    const ControllerConfig& config() const { return cfg_; }
    const LqrGain& lqr_gain() const { return gain_; }

    /// Command toward zero error under the given urgency. Returns nothing on
    /// go_away; the caller owns the abort.
    std::optional<ControlCommand> step(const Point3& error, MovementLabel urgency) {
        const ModeSelection sel = select_mode(urgency, cfg_.caps);
        if (sel.abort) return std::nullopt;
        return step_with(sel.mode, sel.speed_cap, error, urgency);
    }

    /// Command with an explicit mode and cap (fetch/return phases).
    ControlCommand step_with(Mode mode, double speed_cap, const Point3& error,
                             MovementLabel urgency) {
        if (active_mode_ != mode) {
            pid_state_.reset();
            active_mode_ = mode;
        }
        ControlCommand cmd = (mode == Mode::pid) ? pid_step(cfg_.pid, pid_state_, error, speed_cap)
                                                 : lqr_step(gain_, error, speed_cap);
        cmd.urgency = urgency;
        return cmd;
    }

    void reset() {
        pid_state_.reset();
        active_mode_.reset();
    }

private:
    ControllerConfig cfg_;
    LqrGain gain_;
    PidState pid_state_;
    std::optional<Mode> active_mode_;
};

} // namespace handover::control
