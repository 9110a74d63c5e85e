#pragma once

#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "handover/errors.hpp"
#include "handover/landmark_stream.hpp"
#include "handover/neurnet.hpp"

namespace handover::classify {

using landmarks::MotionWindow;
using landmarks::NormalizedPose;

// ---------------------------------------------------------------------------
// Labels
// ---------------------------------------------------------------------------

enum class GestureLabel { no_hand, open, closed, occupied };
enum class MovementLabel { low_urgency, medium_urgency, high_urgency, go_away };

inline const char* to_string(GestureLabel g) {
    switch (g) {
        case GestureLabel::no_hand: return "no_hand";
        case GestureLabel::open: return "open";
        case GestureLabel::closed: return "closed";
        case GestureLabel::occupied: return "occupied";
    }
    return "?";
}

inline const char* to_string(MovementLabel m) {
    switch (m) {
        case MovementLabel::low_urgency: return "low_urgency";
        case MovementLabel::medium_urgency: return "medium_urgency";
        case MovementLabel::high_urgency: return "high_urgency";
        case MovementLabel::go_away: return "go_away";
    }
    return "?";
}

/// Class order of the trained gesture network (no_hand is a rule, not a class).
inline const std::vector<std::string>& gesture_net_labels() {
    static const std::vector<std::string> names = {"open", "closed", "occupied"};
    return names;
}

inline const std::vector<std::string>& movement_net_labels() {
    static const std::vector<std::string> names = {"low_urgency", "medium_urgency", "high_urgency",
                                                   "go_away"};
    return names;
}

inline GestureLabel gesture_from_net_index(int i) {
    switch (i) {
        case 0: return GestureLabel::open;
        case 1: return GestureLabel::closed;
        case 2: return GestureLabel::occupied;
    }
    throw DomainError("gesture class index out of range");
}

inline MovementLabel movement_from_index(int i) {
    if (i < 0 || i > 3) throw DomainError("movement class index out of range");
    return MovementLabel(i);
}

inline GestureLabel gesture_label_from_string(const std::string& s) {
    for (int i = 0; i <= int(GestureLabel::occupied); ++i)
        if (s == to_string(GestureLabel(i))) return GestureLabel(i);
    throw DomainError("unknown gesture label '" + s + "'");
}

inline MovementLabel movement_label_from_string(const std::string& s) {
    for (int i = 0; i <= int(MovementLabel::go_away); ++i)
        if (s == to_string(MovementLabel(i))) return MovementLabel(i);
    throw DomainError("unknown movement label '" + s + "'");
}

/// Index of a gesture in the trained network's 3-class output order.
inline int gesture_net_index(GestureLabel g) {
    if (g == GestureLabel::no_hand) throw DomainError("no_hand is decided by rule, not by the network");
    return int(g) - 1;
}

// ---------------------------------------------------------------------------
// Network construction
// ---------------------------------------------------------------------------

/// 63 -> 64 relu -> 32 relu -> 3 logits over {open, closed, occupied}.
inline nn::ModelBundle make_gesture_net(std::uint32_t seed) {
    std::mt19937 rng(seed);
    nn::Mlp mlp;
    mlp.layers.push_back(nn::make_dense(landmarks::kFeatureCount, 64, nn::Activation::relu, rng));
    mlp.layers.push_back(nn::make_dense(64, 32, nn::Activation::relu, rng));
    mlp.layers.push_back(nn::make_dense(32, 3, nn::Activation::none, rng));
    nn::ModelBundle bundle;
    bundle.model = std::move(mlp);
    bundle.labels = gesture_net_labels();
    bundle.meta.seed = seed;
    return bundle;
}

/// LSTM(63 -> 64) alongside Conv1d(63 -> 64, kernel 5) with global average
/// pooling, concatenated into a 128 -> 4 dense head.
inline nn::ModelBundle make_movement_net(std::uint32_t seed) {
    std::mt19937 rng(seed);
    nn::LstmFcn net;
    net.lstm = nn::make_lstm(landmarks::kFeatureCount, 64, rng);
    net.conv = nn::make_conv1d(landmarks::kFeatureCount, 64, 5, rng);
    net.head = nn::make_dense(128, 4, nn::Activation::none, rng);
    nn::ModelBundle bundle;
    bundle.model = std::move(net);
    bundle.labels = movement_net_labels();
    bundle.meta.seed = seed;
    return bundle;
}

// ---------------------------------------------------------------------------
// Classification
// ---------------------------------------------------------------------------

struct GestureResult {
    GestureLabel label = GestureLabel::no_hand;
    Eigen::Vector4d probabilities = Eigen::Vector4d::Zero(); // indexed by GestureLabel order
};

struct MovementResult {
    MovementLabel label = MovementLabel::low_urgency;
    Eigen::Vector4d probabilities = Eigen::Vector4d::Zero();
};

/// Absent hand short-circuits to no_hand with probability one; otherwise the
/// network decides among open/closed/occupied.
inline GestureResult classify_gesture(const nn::ModelBundle& bundle,
                                      const std::optional<NormalizedPose>& pose) {
    if (bundle.labels != gesture_net_labels())
        throw ConfigError("model labels do not match the gesture label set");

    GestureResult result;
    if (!pose) {
        result.label = GestureLabel::no_hand;
        result.probabilities[0] = 1.0;
        return result;
    }
    const auto& mlp = std::get<nn::Mlp>(bundle.model);
    const nn::VectorXd probs = nn::softmax(mlp.forward(pose->features));

    int best = 0;
    probs.maxCoeff(&best);
    result.label = gesture_from_net_index(best);
    result.probabilities[1] = probs[0];
    result.probabilities[2] = probs[1];
    result.probabilities[3] = probs[2];
    return result;
}

inline MovementResult classify_movement(const nn::ModelBundle& bundle, const MotionWindow& window) {
    if (bundle.labels != movement_net_labels())
        throw ConfigError("model labels do not match the movement label set");
    const auto& net = std::get<nn::LstmFcn>(bundle.model);
    const nn::VectorXd probs = nn::softmax(net.forward(window.as_matrix()));

    MovementResult result;
    int best = 0;
    probs.maxCoeff(&best);
    result.label = movement_from_index(best);
    result.probabilities = probs;
    return result;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

struct ConfusionMatrix {
    std::vector<std::string> labels;
    Eigen::MatrixXi counts; // rows = true class, cols = predicted class

    double accuracy() const {
        const int total = counts.sum();
        if (total == 0) throw DomainError("confusion matrix is empty");
        return double(counts.trace()) / double(total);
    }

    double precision(int cls) const {
        const int col = counts.col(cls).sum();
        return col == 0 ? 0.0 : double(counts(cls, cls)) / double(col);
    }

    double recall(int cls) const {
        const int row = counts.row(cls).sum();
        return row == 0 ? 0.0 : double(counts(cls, cls)) / double(row);
    }

    void write_csv(std::ostream& out) const {
        out << "true\\pred";
        for (const auto& l : labels) out << ',' << l;
        out << '\n';
        for (Eigen::Index r = 0; r < counts.rows(); ++r) {
            out << labels[std::size_t(r)];
            for (Eigen::Index c = 0; c < counts.cols(); ++c) out << ',' << counts(r, c);
            out << '\n';
        }
    }

    nlohmann::json summary_json() const {
        nlohmann::json per_class = nlohmann::json::object();
        for (std::size_t i = 0; i < labels.size(); ++i)
            per_class[labels[i]] = {{"precision", precision(int(i))}, {"recall", recall(int(i))}};
        return {{"accuracy", accuracy()}, {"per_class", per_class}};
    }
};

/// Confusion counts of model predictions over a labeled dataset. Labels are
/// indices into the model's own label set.
template <class Sample>
ConfusionMatrix evaluate(const nn::ModelBundle& bundle, const std::vector<Sample>& inputs,
                         const std::vector<int>& labels) {
    if (inputs.empty()) throw DomainError("evaluation dataset is empty");
    if (inputs.size() != labels.size()) throw DomainError("inputs/labels size mismatch");

    const int n = bundle.num_classes();
    ConfusionMatrix cm;
    cm.labels = bundle.labels;
    cm.counts = Eigen::MatrixXi::Zero(n, n);

    for (std::size_t i = 0; i < inputs.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= n) throw DomainError("dataset label outside the model's set");
        nn::VectorXd logits;
        if constexpr (std::is_same_v<Sample, nn::VectorXd>) {
            logits = std::get<nn::Mlp>(bundle.model).forward(inputs[i]);
        } else {
            logits = std::get<nn::LstmFcn>(bundle.model).forward(inputs[i]);
        }
        int pred = 0;
        logits.maxCoeff(&pred);
        cm.counts(labels[i], pred) += 1;
    }
    return cm;
}

// ---------------------------------------------------------------------------
// Debounce gate
// ---------------------------------------------------------------------------

/// A classification is actionable only after the same label wins with
/// probability >= threshold for `required` consecutive ticks.
template <class Label>
class ConfidenceGate {
public:
    explicit ConfidenceGate(double threshold = 0.7, int required = 3)
        : threshold_(threshold), required_(required) {}

    std::optional<Label> update(Label label, double probability) {
        if (probability < threshold_) {
            streak_ = 0;
            return actionable_;
        }
        if (candidate_ && *candidate_ == label) {
            ++streak_;
        } else {
            candidate_ = label;
            streak_ = 1;
        }
        if (streak_ >= required_) actionable_ = label;
        return actionable_;
    }

    std::optional<Label> actionable() const { return actionable_; }

    void reset() {
        candidate_.reset();
        actionable_.reset();
        streak_ = 0;
    }

private:
    double threshold_;
    int required_;
    std::optional<Label> candidate_;
    std::optional<Label> actionable_;
    int streak_ = 0;
};

} // namespace handover::classify
