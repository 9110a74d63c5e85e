// Command-line front end for the handover simulator: synthetic data
// generation, classifier training/evaluation, controller characterization,
// and scripted closed-loop simulation.

#include <deque>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "handover/classifiers.hpp"
#include "handover/control.hpp"
#include "handover/datagen.hpp"
#include "handover/detail/text.hpp"
#include "handover/errors.hpp"
#include "handover/geometry.hpp"
#include "handover/landmark_stream.hpp"
#include "handover/neurnet.hpp"
#include "handover/pipeline.hpp"
#include "handover/robot_sim.hpp"
#include "handover/workflow.hpp"

namespace {

// Exit codes: 0 success, 2 usage/configuration, 3 data or solver failure,
// 4 scenario expectation not met.
constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitExpect = 4;

using handover::detail::fmt_g9;

handover::nn::ModelBundle load_bundle(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw handover::StreamError("cannot open model file '" + path + "'");
    return handover::nn::load(in);
}

void save_bundle(const handover::nn::ModelBundle& bundle, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw handover::StreamError("cannot write model file '" + path + "'");
    handover::nn::save(bundle, out);
}

nlohmann::json load_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw handover::StreamError("cannot open '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw handover::ConfigError("'" + path + "' is not valid JSON: " + e.what());
    }
    return j;
}

// --------------------------------------------------------------------------
// gen-data
// --------------------------------------------------------------------------

struct GenDataArgs {
    std::string kind;
    std::string frames_path;
    std::string labels_path;
    int per_class = 0;   // 0 = kind default
    long long seed = -1; // -1 = kind default
};

int run_gen_data(const GenDataArgs& a) {
    if (a.kind == "gesture") {
        handover::datagen::GestureGenOptions opts;
        if (a.per_class > 0) opts.per_class = a.per_class;
        if (a.seed >= 0) opts.seed = std::uint32_t(a.seed);
        const auto ds = handover::datagen::gen_gesture_dataset(opts);
        handover::datagen::write_gesture_dataset(ds, a.frames_path, a.labels_path);
        std::cout << "wrote " << ds.frames.size() << " gesture samples (seed " << opts.seed
                  << ") to " << a.frames_path << "\n";
        return kExitOk;
    }
    if (a.kind == "movement") {
        handover::datagen::MovementGenOptions opts;
        if (a.per_class > 0) opts.per_class = a.per_class;
        if (a.seed >= 0) opts.seed = std::uint32_t(a.seed);
        const auto ds = handover::datagen::gen_movement_dataset(opts);
        handover::datagen::write_movement_dataset(ds, a.frames_path, a.labels_path);

        int oracle_agree = 0;
        for (const auto& s : ds.samples)
            if (handover::datagen::kinematic_label(s.frames) == s.label) ++oracle_agree;
        std::cout << "wrote " << ds.samples.size() << " movement clips (seed " << opts.seed
                  << ") to " << a.frames_path << "; kinematic rule agreement "
                  << oracle_agree << "/" << ds.samples.size() << "\n";
        return kExitOk;
    }
    throw handover::ConfigError("--kind must be 'gesture' or 'movement'");
}

// --------------------------------------------------------------------------
// train-gesture / train-movement
// --------------------------------------------------------------------------

struct TrainArgs {
    std::string frames_path;
    std::string labels_path;
    std::string out_path;
    std::uint32_t seed = 1;
    int epochs = 30;
    double learning_rate = 0.05;
    int batch_size = 32;
    double grad_clip = 5.0;
};

handover::nn::TrainConfig train_config(const TrainArgs& a) {
    handover::nn::TrainConfig cfg;
    cfg.seed = a.seed;
    cfg.epochs = a.epochs;
    cfg.learning_rate = a.learning_rate;
    cfg.batch_size = a.batch_size;
    cfg.grad_clip_norm = a.grad_clip;
    return cfg;
}

void print_report(const handover::nn::TrainReport& report) {
    for (std::size_t e = 0; e < report.epoch_loss.size(); ++e)
        std::cout << "epoch " << (e + 1) << " loss " << fmt_g9(report.epoch_loss[e]) << "\n";
}

int run_train_gesture(const TrainArgs& a) {
    const auto ds = handover::datagen::load_gesture_dataset(a.frames_path, a.labels_path);
    auto [inputs, labels] = handover::datagen::gesture_training_data(ds);

    auto bundle = handover::classify::make_gesture_net(a.seed);
    auto& mlp = std::get<handover::nn::Mlp>(bundle.model);
    const auto report = handover::nn::train(mlp, inputs, labels, train_config(a));
    print_report(report);

    bundle.meta.seed = a.seed;
    bundle.meta.epochs = a.epochs;
    bundle.meta.final_loss = report.final_loss;
    save_bundle(bundle, a.out_path);

    const auto cm = handover::classify::evaluate(bundle, inputs, labels);
    std::cout << "training accuracy " << fmt_g9(cm.accuracy()) << "; saved " << a.out_path << "\n";
    return kExitOk;
}

int run_train_movement(const TrainArgs& a) {
    const auto ds = handover::datagen::load_movement_dataset(a.frames_path, a.labels_path);
    auto [inputs, labels] = handover::datagen::movement_training_data(ds);

    auto bundle = handover::classify::make_movement_net(a.seed);
    auto& net = std::get<handover::nn::LstmFcn>(bundle.model);
    const auto report = handover::nn::train(net, inputs, labels, train_config(a));
    print_report(report);

    bundle.meta.seed = a.seed;
    bundle.meta.epochs = a.epochs;
    bundle.meta.final_loss = report.final_loss;
    save_bundle(bundle, a.out_path);

    const auto cm = handover::classify::evaluate(bundle, inputs, labels);
    std::cout << "training accuracy " << fmt_g9(cm.accuracy()) << "; saved " << a.out_path << "\n";
    return kExitOk;
}

// --------------------------------------------------------------------------
// eval
// --------------------------------------------------------------------------

struct EvalArgs {
    std::string model_path;
    std::string frames_path;
    std::string labels_path;
    std::string confusion_path; // optional
    std::string summary_path;   // optional
};

int run_eval(const EvalArgs& a) {
    const auto bundle = load_bundle(a.model_path);

    handover::classify::ConfusionMatrix cm;
    if (std::holds_alternative<handover::nn::Mlp>(bundle.model)) {
        const auto ds = handover::datagen::load_gesture_dataset(a.frames_path, a.labels_path);
        auto [inputs, labels] = handover::datagen::gesture_training_data(ds);
        cm = handover::classify::evaluate(bundle, inputs, labels);
    } else {
        const auto ds = handover::datagen::load_movement_dataset(a.frames_path, a.labels_path);
        auto [inputs, labels] = handover::datagen::movement_training_data(ds);
        cm = handover::classify::evaluate(bundle, inputs, labels);
    }

    if (!a.confusion_path.empty()) {
        std::ofstream out(a.confusion_path);
        if (!out) throw handover::StreamError("cannot write '" + a.confusion_path + "'");
        cm.write_csv(out);
    }
    if (!a.summary_path.empty()) {
        std::ofstream out(a.summary_path);
        if (!out) throw handover::StreamError("cannot write '" + a.summary_path + "'");
        out << cm.summary_json().dump(2) << "\n";
    }
    std::cout << cm.summary_json().dump(2) << "\n";
    return kExitOk;
}

// --------------------------------------------------------------------------
// step-response
// --------------------------------------------------------------------------

struct StepArgs {
    std::string mode = "lqr";
    std::string out_path;        // optional, stdout otherwise
    std::string controller_path; // optional config
    double duration = 60.0;
};

int run_step_response(const StepArgs& a) {
    handover::control::ControllerConfig cfg;
    if (!a.controller_path.empty())
        cfg = handover::control::controller_config_from_json(load_json(a.controller_path));

    handover::control::Mode mode;
    if (a.mode == "lqr") mode = handover::control::Mode::lqr;
    else if (a.mode == "pid") mode = handover::control::Mode::pid;
    else throw handover::ConfigError("--mode must be 'lqr' or 'pid'");

    const auto resp = handover::pipeline::step_response(mode, cfg, a.duration);
    if (a.out_path.empty()) {
        handover::pipeline::write_step_response_csv(std::cout, resp);
    } else {
        std::ofstream out(a.out_path);
        if (!out) throw handover::StreamError("cannot write '" + a.out_path + "'");
        handover::pipeline::write_step_response_csv(out, resp);
    }
    std::cout << "mode " << a.mode << " overshoot " << fmt_g9(resp.metrics.overshoot)
              << " settle_time " << fmt_g9(resp.metrics.settle_time) << " steady_state_error "
              << fmt_g9(resp.metrics.steady_state_error) << "\n";
    return kExitOk;
}

// --------------------------------------------------------------------------
// simulate
// --------------------------------------------------------------------------

struct SimulateArgs {
    std::string scenario_path;
    std::string gesture_model_path;
    std::string movement_model_path;
    std::string config_path;      // optional run config
    std::string calibration_path; // optional override
    std::string trajectory_path;  // optional
    std::string events_path;      // optional
    long long seed = -1;
    bool realtime = false;
};

int run_simulate(const SimulateArgs& a) {
    handover::pipeline::RunConfig cfg;
    cfg.calibration = handover::pipeline::default_calibration();
    if (!a.config_path.empty()) cfg = handover::pipeline::run_config_from_json(load_json(a.config_path));
    if (!a.calibration_path.empty())
        cfg.calibration = handover::geometry::calibration_from_json(load_json(a.calibration_path));
    if (a.seed >= 0) cfg.seed = std::uint32_t(a.seed);

    std::ifstream scenario_in(a.scenario_path);
    if (!scenario_in) throw handover::StreamError("cannot open scenario '" + a.scenario_path + "'");
    const auto scenario = handover::pipeline::parse_scenario(scenario_in);

    handover::pipeline::SimulationEngine engine(cfg, load_bundle(a.gesture_model_path),
                                                load_bundle(a.movement_model_path));
    const auto scenario_dir = std::filesystem::path(a.scenario_path).parent_path();
    engine.set_resource_loader([scenario_dir](const std::string& rel) {
        const auto path = scenario_dir / rel;
        std::ifstream in(path);
        if (!in) throw handover::StreamError("cannot open landmark segment '" + path.string() + "'");
        return handover::landmarks::parse_stream(in);
    });

    const auto result = engine.run(scenario, a.realtime);

    if (!a.trajectory_path.empty()) {
        std::ofstream out(a.trajectory_path);
        if (!out) throw handover::StreamError("cannot write '" + a.trajectory_path + "'");
        handover::pipeline::write_trajectory_csv(out, result.trajectory);
    }
    if (!a.events_path.empty()) {
        std::ofstream out(a.events_path);
        if (!out) throw handover::StreamError("cannot write '" + a.events_path + "'");
        handover::pipeline::write_event_log(out, result.events);
    }

    std::cout << "ticks " << result.ticks << " final_state "
              << handover::workflow::to_string(result.final_state) << "\n";
    for (const auto& e : result.expectations)
        std::cout << "expect t=" << fmt_g9(e.t) << " " << e.expected << ": "
                  << (e.ok ? "ok" : "FAILED (actual " + e.actual + ")") << "\n";
    return result.ok() ? kExitOk : kExitExpect;
}

// --------------------------------------------------------------------------
// replay: recorded landmark stream -> per-frame classifications
// --------------------------------------------------------------------------

struct ReplayArgs {
    std::string stream_path;
    std::string gesture_model_path;
    std::string movement_model_path;
    std::string out_path; // optional, stdout otherwise
};

void replay_to(std::ostream& out, const ReplayArgs& a) {
    namespace cls = handover::classify;
    namespace lm = handover::landmarks;

    const auto gesture_model = load_bundle(a.gesture_model_path);
    const auto movement_model = load_bundle(a.movement_model_path);

    std::ifstream in(a.stream_path);
    if (!in) throw handover::StreamError("cannot open stream '" + a.stream_path + "'");
    const auto frames = lm::parse_stream(in);

    cls::ConfidenceGate<cls::GestureLabel> ggate;
    cls::ConfidenceGate<cls::MovementLabel> mgate;
    std::deque<std::pair<double, lm::NormalizedPose>> window;

    out << "t,hand_present,gesture,gesture_conf,urgency,urgency_conf,gated_gesture,gated_urgency\n";
    for (const auto& f : frames) {
        std::optional<lm::NormalizedPose> pose;
        if (f.hand_present) pose = lm::normalize(f);

        const cls::GestureResult g = cls::classify_gesture(gesture_model, pose);
        const auto gated_g = ggate.update(g.label, g.probabilities.maxCoeff());

        if (pose) {
            window.emplace_back(f.t, *pose);
            while (window.size() > std::size_t(lm::kWindowLength)) window.pop_front();
        }

        std::string urgency, urgency_conf;
        bool ready = pose && window.size() == std::size_t(lm::kWindowLength);
        if (ready)
            for (std::size_t i = 1; i < window.size(); ++i)
                if (window[i].first - window[i - 1].first > 2.0 * lm::kDefaultDt + 1e-9) {
                    ready = false;
                    break;
                }
        if (ready) {
            lm::MotionWindow w;
            for (int i = 0; i < lm::kWindowLength; ++i) w.frames[std::size_t(i)] = window[std::size_t(i)].second;
            const cls::MovementResult m = cls::classify_movement(movement_model, w);
            mgate.update(m.label, m.probabilities.maxCoeff());
            urgency = cls::to_string(m.label);
            urgency_conf = fmt_g9(m.probabilities.maxCoeff());
        }

        out << fmt_g9(f.t) << ',' << (f.hand_present ? 1 : 0) << ',' << cls::to_string(g.label)
            << ',' << fmt_g9(g.probabilities.maxCoeff()) << ',' << urgency << ',' << urgency_conf
            << ',' << (gated_g ? cls::to_string(*gated_g) : "") << ','
            << (mgate.actionable() ? cls::to_string(*mgate.actionable()) : "") << '\n';
    }
}

int run_replay(const ReplayArgs& a) {
    if (a.out_path.empty()) {
        replay_to(std::cout, a);
    } else {
        std::ofstream out(a.out_path);
        if (!out) throw handover::StreamError("cannot write '" + a.out_path + "'");
        replay_to(out, a);
    }
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Gesture-driven tool handover: data, training, control, simulation"};
    app.require_subcommand(1);

    GenDataArgs gen;
    auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic labeled dataset");
    gen_cmd->add_option("--kind", gen.kind, "gesture or movement")->required();
    gen_cmd->add_option("--frames", gen.frames_path, "output landmark JSONL")->required();
    gen_cmd->add_option("--labels", gen.labels_path, "output labels CSV")->required();
    gen_cmd->add_option("--per-class", gen.per_class, "samples per class (0 = default)");
    gen_cmd->add_option("--seed", gen.seed, "generator seed (-1 = kind default)");

    TrainArgs tg;
    auto* tg_cmd = app.add_subcommand("train-gesture", "Train the gesture classifier");
    tg_cmd->add_option("--frames", tg.frames_path, "landmark JSONL")->required();
    tg_cmd->add_option("--labels", tg.labels_path, "labels CSV")->required();
    tg_cmd->add_option("--out", tg.out_path, "output model bundle")->required();
    tg_cmd->add_option("--seed", tg.seed, "init/shuffle seed");
    tg_cmd->add_option("--epochs", tg.epochs, "training epochs");
    tg_cmd->add_option("--lr", tg.learning_rate, "learning rate");
    tg_cmd->add_option("--batch", tg.batch_size, "minibatch size");
    tg_cmd->add_option("--clip", tg.grad_clip, "global gradient-norm clip");

    TrainArgs tm;
    auto* tm_cmd = app.add_subcommand("train-movement", "Train the movement classifier");
    tm_cmd->add_option("--frames", tm.frames_path, "landmark JSONL")->required();
    tm_cmd->add_option("--labels", tm.labels_path, "labels CSV")->required();
    tm_cmd->add_option("--out", tm.out_path, "output model bundle")->required();
    tm_cmd->add_option("--seed", tm.seed, "init/shuffle seed");
    tm_cmd->add_option("--epochs", tm.epochs, "training epochs");
    tm_cmd->add_option("--lr", tm.learning_rate, "learning rate");
    tm_cmd->add_option("--batch", tm.batch_size, "minibatch size");
    tm_cmd->add_option("--clip", tm.grad_clip, "global gradient-norm clip");

    EvalArgs ev;
    auto* ev_cmd = app.add_subcommand("eval", "Evaluate a model bundle on a labeled dataset");
    ev_cmd->add_option("--model", ev.model_path, "model bundle")->required();
    ev_cmd->add_option("--frames", ev.frames_path, "landmark JSONL")->required();
    ev_cmd->add_option("--labels", ev.labels_path, "labels CSV")->required();
    ev_cmd->add_option("--confusion", ev.confusion_path, "write confusion matrix CSV here");
    ev_cmd->add_option("--summary", ev.summary_path, "write accuracy/precision/recall JSON here");

    StepArgs st;
    auto* st_cmd = app.add_subcommand("step-response", "Record a controller step response");
    st_cmd->add_option("--mode", st.mode, "lqr or pid")->required();
    st_cmd->add_option("--out", st.out_path, "output CSV (stdout if omitted)");
    st_cmd->add_option("--controller", st.controller_path, "controller config JSON");
    st_cmd->add_option("--duration", st.duration, "simulated seconds");

    SimulateArgs si;
    auto* si_cmd = app.add_subcommand("simulate", "Run a scripted closed-loop scenario");
    si_cmd->add_option("--scenario", si.scenario_path, "scenario JSONL")->required();
    si_cmd->add_option("--gesture-model", si.gesture_model_path, "gesture model bundle")->required();
    si_cmd->add_option("--movement-model", si.movement_model_path, "movement model bundle")->required();
    si_cmd->add_option("--config", si.config_path, "run config JSON");
    si_cmd->add_option("--calibration", si.calibration_path, "calibration JSON override");
    si_cmd->add_option("--trajectory", si.trajectory_path, "write trajectory CSV here");
    si_cmd->add_option("--events", si.events_path, "write session event JSONL here");
    si_cmd->add_option("--seed", si.seed, "override the run seed");
    si_cmd->add_flag("--realtime", si.realtime, "pace ticks to wall-clock time");

    ReplayArgs rp;
    auto* rp_cmd = app.add_subcommand("replay", "Classify a recorded landmark stream tick by tick");
    rp_cmd->add_option("--stream", rp.stream_path, "landmark JSONL")->required();
    rp_cmd->add_option("--gesture-model", rp.gesture_model_path, "gesture model bundle")->required();
    rp_cmd->add_option("--movement-model", rp.movement_model_path, "movement model bundle")->required();
    rp_cmd->add_option("--out", rp.out_path, "output CSV (stdout if omitted)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (gen_cmd->parsed()) return run_gen_data(gen);
        if (tg_cmd->parsed()) return run_train_gesture(tg);
        if (tm_cmd->parsed()) return run_train_movement(tm);
        if (ev_cmd->parsed()) return run_eval(ev);
        if (st_cmd->parsed()) return run_step_response(st);
        if (si_cmd->parsed()) return run_simulate(si);
        if (rp_cmd->parsed()) return run_replay(rp);
    } catch (const handover::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    }
    return kExitUsage;
}
