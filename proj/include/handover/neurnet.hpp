#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "handover/detail/base64.hpp"
#include "handover/errors.hpp"

namespace handover::nn {

using Eigen::MatrixXd;
using Eigen::VectorXd;

enum class Activation { none, relu };

inline std::string activation_name(Activation a) { return a == Activation::relu ? "relu" : "none"; }

inline Activation activation_from_name(const std::string& s) {
    if (s == "relu") return Activation::relu;
    if (s == "none") return Activation::none;
    throw ConfigError("unknown activation '" + s + "'");
}

namespace detail {

inline VectorXd activate(Activation a, const VectorXd& z) {
    if (a == Activation::relu) return z.cwiseMax(0.0);
    return z;
}

inline VectorXd activate_grad(Activation a, const VectorXd& z, const VectorXd& dy) {
    if (a == Activation::relu) return (z.array() > 0.0).select(dy, VectorXd::Zero(dy.size()));
    return dy;
}

inline VectorXd sigmoid(const VectorXd& z) {
    return (1.0 / (1.0 + (-z.array()).exp())).matrix();
}

/// Glorot-uniform matrix, row-major fill so init is independent of storage order.
inline MatrixXd glorot(Eigen::Index rows, Eigen::Index cols, double fan_in, double fan_out,
                       std::mt19937& rng) {
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-bound, bound);
    MatrixXd m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = dist(rng);
    return m;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Dense layer
// ---------------------------------------------------------------------------

struct DenseLayer {
    MatrixXd weights; // out x in
    VectorXd bias;    // out
    Activation activation = Activation::none;

    struct Cache {
        VectorXd input;
        VectorXd pre; // Wx + b, before activation
    };

    VectorXd forward(const VectorXd& x) const {
        if (x.size() != weights.cols()) throw DomainError("dense forward: input size mismatch");
        return detail::activate(activation, weights * x + bias);
    }

    VectorXd forward(const VectorXd& x, Cache& cache) const {
        if (x.size() != weights.cols()) throw DomainError("dense forward: input size mismatch");
        cache.input = x;
        cache.pre = weights * x + bias;
        return detail::activate(activation, cache.pre);
    }

    /// Accumulates parameter gradients, returns dL/dinput.
    VectorXd backward(const Cache& cache, const VectorXd& d_out, MatrixXd& d_weights,
                      VectorXd& d_bias) const {
        const VectorXd dz = detail::activate_grad(activation, cache.pre, d_out);
        d_weights.noalias() += dz * cache.input.transpose();
        d_bias.noalias() += dz;
        return weights.transpose() * dz;
    }
};

inline DenseLayer make_dense(int in, int out, Activation act, std::mt19937& rng) {
    DenseLayer layer;
    layer.weights = detail::glorot(out, in, in, out, rng);
    layer.bias = VectorXd::Zero(out);
    layer.activation = act;
    return layer;
}

// ---------------------------------------------------------------------------
// LSTM layer
// ---------------------------------------------------------------------------

/// Standard LSTM with sigmoid gates and tanh cell candidate. Gate blocks in
/// the stacked weights are ordered input, forget, cell, output. State starts
/// at zero; forward returns the final hidden state.
struct LstmLayer {
    int input_size = 0;
    int hidden_size = 0;
    MatrixXd w_input;  // 4h x input_size
    MatrixXd w_hidden; // 4h x hidden_size
    VectorXd bias;     // 4h

    struct Cache {
        MatrixXd inputs; // T x input_size
        std::vector<VectorXd> gate_i, gate_f, gate_g, gate_o, cell, hidden;
    };

    VectorXd forward(const MatrixXd& sequence) const {
        Cache cache;
        return forward(sequence, cache);
    }

    VectorXd forward(const MatrixXd& sequence, Cache& cache) const {
        if (sequence.rows() == 0) throw DomainError("lstm forward: empty sequence");
        if (sequence.cols() != input_size) throw DomainError("lstm forward: feature size mismatch");
        const Eigen::Index steps = sequence.rows();
        const int h = hidden_size;

        cache.inputs = sequence;
        cache.gate_i.resize(std::size_t(steps));
        cache.gate_f.resize(std::size_t(steps));
        cache.gate_g.resize(std::size_t(steps));
        cache.gate_o.resize(std::size_t(steps));
        cache.cell.resize(std::size_t(steps));
        cache.hidden.resize(std::size_t(steps));

        VectorXd h_prev = VectorXd::Zero(h);
        VectorXd c_prev = VectorXd::Zero(h);
        for (Eigen::Index t = 0; t < steps; ++t) {
            const VectorXd z = w_input * sequence.row(t).transpose() + w_hidden * h_prev + bias;
            const VectorXd i = detail::sigmoid(z.segment(0, h));
            const VectorXd f = detail::sigmoid(z.segment(h, h));
            const VectorXd g = z.segment(2 * h, h).array().tanh();
            const VectorXd o = detail::sigmoid(z.segment(3 * h, h));
            const VectorXd c = f.cwiseProduct(c_prev) + i.cwiseProduct(g);
            const VectorXd hv = o.cwiseProduct(c.array().tanh().matrix());

            const auto idx = std::size_t(t);
            cache.gate_i[idx] = i;
            cache.gate_f[idx] = f;
            cache.gate_g[idx] = g;
            cache.gate_o[idx] = o;
            cache.cell[idx] = c;
            cache.hidden[idx] = hv;
            c_prev = c;
            h_prev = hv;
        }
        return h_prev;
    }

    /// Backprop through time from a gradient on the final hidden state.
    void backward(const Cache& cache, const VectorXd& d_hidden_final, MatrixXd& d_w_input,
                  MatrixXd& d_w_hidden, VectorXd& d_bias) const {
        const Eigen::Index steps = cache.inputs.rows();
        const int h = hidden_size;

        VectorXd dh = d_hidden_final;
        VectorXd dc = VectorXd::Zero(h);
        for (Eigen::Index t = steps - 1; t >= 0; --t) {
            const auto idx = std::size_t(t);
            const VectorXd& i = cache.gate_i[idx];
            const VectorXd& f = cache.gate_f[idx];
            const VectorXd& g = cache.gate_g[idx];
            const VectorXd& o = cache.gate_o[idx];
            const VectorXd& c = cache.cell[idx];
            const VectorXd c_prev = (t > 0) ? cache.cell[idx - 1] : VectorXd::Zero(h);
            const VectorXd h_prev = (t > 0) ? cache.hidden[idx - 1] : VectorXd::Zero(h);

            const VectorXd tanh_c = c.array().tanh();
            const VectorXd d_o = dh.cwiseProduct(tanh_c);
            dc += dh.cwiseProduct(o).cwiseProduct((1.0 - tanh_c.array().square()).matrix());

            const VectorXd d_i = dc.cwiseProduct(g);
            const VectorXd d_g = dc.cwiseProduct(i);
            const VectorXd d_f = dc.cwiseProduct(c_prev);

            VectorXd dz(4 * h);
            dz.segment(0, h) = d_i.cwiseProduct(i).cwiseProduct((1.0 - i.array()).matrix());
            dz.segment(h, h) = d_f.cwiseProduct(f).cwiseProduct((1.0 - f.array()).matrix());
            dz.segment(2 * h, h) = d_g.cwiseProduct((1.0 - g.array().square()).matrix());
            dz.segment(3 * h, h) = d_o.cwiseProduct(o).cwiseProduct((1.0 - o.array()).matrix());

            d_w_input.noalias() += dz * cache.inputs.row(t);
            d_w_hidden.noalias() += dz * h_prev.transpose();
            d_bias.noalias() += dz;

            dh = w_hidden.transpose() * dz;
            dc = dc.cwiseProduct(f);
        }
    }
};

inline LstmLayer make_lstm(int input_size, int hidden_size, std::mt19937& rng) {
    LstmLayer layer;
    layer.input_size = input_size;
    layer.hidden_size = hidden_size;
    layer.w_input = detail::glorot(4 * hidden_size, input_size, input_size, hidden_size, rng);
    layer.w_hidden = detail::glorot(4 * hidden_size, hidden_size, hidden_size, hidden_size, rng);
    layer.bias = VectorXd::Zero(4 * hidden_size);
    layer.bias.segment(hidden_size, hidden_size).setOnes(); // forget gate opens at init
    return layer;
}

// ---------------------------------------------------------------------------
// 1-D convolution with relu and global average pooling
// ---------------------------------------------------------------------------

/// Same-padding temporal convolution. Filters are stored as one matrix of
/// shape out_channels x (in_channels * kernel); the column block for input
/// channel c occupies [c*kernel, (c+1)*kernel).
struct Conv1dLayer {
    int in_channels = 0;
    int out_channels = 0;
    int kernel = 0; // odd
    MatrixXd filters; // out_channels x (in_channels * kernel)
    VectorXd bias;    // out_channels

    struct Cache {
        MatrixXd patches; // (in_channels*kernel) x T, im2col of the padded input
        MatrixXd pre;     // out_channels x T preactivation
    };

    VectorXd forward(const MatrixXd& sequence) const {
        Cache cache;
        return forward(sequence, cache);
    }

    VectorXd forward(const MatrixXd& sequence, Cache& cache) const {
        if (sequence.cols() != in_channels) throw DomainError("conv1d forward: channel mismatch");
        const Eigen::Index steps = sequence.rows();
        if (steps < kernel) throw DomainError("conv1d forward: sequence shorter than kernel");
        const int half = kernel / 2;

        cache.patches = MatrixXd::Zero(Eigen::Index(in_channels) * kernel, steps);
        for (Eigen::Index t = 0; t < steps; ++t) {
            for (int k = 0; k < kernel; ++k) {
                const Eigen::Index src = t + k - half;
                if (src < 0 || src >= steps) continue; // zero padding
                for (int c = 0; c < in_channels; ++c)
                    cache.patches(Eigen::Index(c) * kernel + k, t) = sequence(src, c);
            }
        }
        cache.pre = filters * cache.patches;
        cache.pre.colwise() += bias;

        const MatrixXd activated = cache.pre.cwiseMax(0.0);
        return activated.rowwise().mean();
    }

    void backward(const Cache& cache, const VectorXd& d_pooled, MatrixXd& d_filters,
                  VectorXd& d_bias) const {
        const Eigen::Index steps = cache.pre.cols();
        // d(mean over time) spreads 1/T to every active time step.
        MatrixXd d_pre = (cache.pre.array() > 0.0)
                             .select((d_pooled / double(steps)).replicate(1, steps), MatrixXd::Zero(out_channels, steps));
        d_filters.noalias() += d_pre * cache.patches.transpose();
        d_bias.noalias() += d_pre.rowwise().sum();
    }
};

inline Conv1dLayer make_conv1d(int in_channels, int out_channels, int kernel, std::mt19937& rng) {
    if (kernel % 2 == 0) throw ConfigError("conv1d kernel must be odd");
    Conv1dLayer layer;
    layer.in_channels = in_channels;
    layer.out_channels = out_channels;
    layer.kernel = kernel;
    const double fan_in = double(in_channels) * kernel;
    const double fan_out = double(out_channels) * kernel;
    layer.filters = detail::glorot(out_channels, Eigen::Index(in_channels) * kernel, fan_in, fan_out, rng);
    layer.bias = VectorXd::Zero(out_channels);
    return layer;
}

// ---------------------------------------------------------------------------
// Softmax + cross entropy
// ---------------------------------------------------------------------------

struct SoftmaxResult {
    VectorXd probabilities;
    double loss = 0.0;
    VectorXd grad; // d loss / d logits = p - onehot(label)
};

inline VectorXd softmax(const VectorXd& logits) {
    if (logits.size() < 2) throw DomainError("softmax needs at least two logits");
    const double m = logits.maxCoeff();
    const VectorXd shifted = (logits.array() - m).exp();
    return shifted / shifted.sum();
}

inline SoftmaxResult softmax_xent(const VectorXd& logits, int label) {
    if (logits.size() < 2) throw DomainError("softmax needs at least two logits");
    if (label < 0 || label >= logits.size()) throw DomainError("label out of range");
    const double m = logits.maxCoeff();
    VectorXd shifted = (logits.array() - m).exp();
    const double total = shifted.sum();
    SoftmaxResult r;
    r.probabilities = shifted / total;
    r.loss = -(logits[label] - m - std::log(total));
    r.grad = r.probabilities;
    r.grad[label] -= 1.0;
    return r;
}

// ---------------------------------------------------------------------------
// Models
// ---------------------------------------------------------------------------

/// Feedforward classifier over a fixed-size feature vector.
struct Mlp {
    using Sample = VectorXd;

    std::vector<DenseLayer> layers;

    struct Grads {
        std::vector<MatrixXd> d_weights;
        std::vector<VectorXd> d_bias;
    };

    VectorXd forward(const VectorXd& x) const {
        VectorXd v = x;
        for (const auto& layer : layers) v = layer.forward(v);
        return v;
    }

    Grads zero_grads() const {
        Grads g;
        for (const auto& layer : layers) {
            g.d_weights.emplace_back(MatrixXd::Zero(layer.weights.rows(), layer.weights.cols()));
            g.d_bias.emplace_back(VectorXd::Zero(layer.bias.size()));
        }
        return g;
    }

    double loss_and_grads(const Sample& x, int label, Grads& grads) const {
        std::vector<DenseLayer::Cache> caches(layers.size());
        VectorXd v = x;
        for (std::size_t i = 0; i < layers.size(); ++i) v = layers[i].forward(v, caches[i]);

        const SoftmaxResult sm = softmax_xent(v, label);
        VectorXd d = sm.grad;
        for (std::size_t i = layers.size(); i-- > 0;)
            d = layers[i].backward(caches[i], d, grads.d_weights[i], grads.d_bias[i]);
        return sm.loss;
    }

    void apply_update(const Grads& grads, double lr) {
        for (std::size_t i = 0; i < layers.size(); ++i) {
            layers[i].weights.noalias() -= lr * grads.d_weights[i];
            layers[i].bias.noalias() -= lr * grads.d_bias[i];
        }
    }

    static void scale_grads(Grads& g, double s) {
        for (auto& m : g.d_weights) m *= s;
        for (auto& v : g.d_bias) v *= s;
    }

    static double grads_sq_norm(const Grads& g) {
        double n = 0.0;
        for (const auto& m : g.d_weights) n += m.squaredNorm();
        for (const auto& v : g.d_bias) n += v.squaredNorm();
        return n;
    }
};

/// LSTM branch and convolutional branch over the same sequence, concatenated
/// into a dense classification head. Input samples are T x features matrices.
struct LstmFcn {
    using Sample = MatrixXd;

    LstmLayer lstm;
    Conv1dLayer conv;
    DenseLayer head;

    struct Grads {
        MatrixXd d_w_input, d_w_hidden;
        VectorXd d_lstm_bias;
        MatrixXd d_filters;
        VectorXd d_conv_bias;
        MatrixXd d_head_weights;
        VectorXd d_head_bias;
    };

    VectorXd forward(const MatrixXd& sequence) const {
        const VectorXd hidden = lstm.forward(sequence);
        const VectorXd pooled = conv.forward(sequence);
        VectorXd merged(hidden.size() + pooled.size());
        merged << hidden, pooled;
        return head.forward(merged);
    }

    Grads zero_grads() const {
        Grads g;
        g.d_w_input = MatrixXd::Zero(lstm.w_input.rows(), lstm.w_input.cols());
        g.d_w_hidden = MatrixXd::Zero(lstm.w_hidden.rows(), lstm.w_hidden.cols());
        g.d_lstm_bias = VectorXd::Zero(lstm.bias.size());
        g.d_filters = MatrixXd::Zero(conv.filters.rows(), conv.filters.cols());
        g.d_conv_bias = VectorXd::Zero(conv.bias.size());
        g.d_head_weights = MatrixXd::Zero(head.weights.rows(), head.weights.cols());
        g.d_head_bias = VectorXd::Zero(head.bias.size());
        return g;
    }

    double loss_and_grads(const Sample& sequence, int label, Grads& grads) const {
        LstmLayer::Cache lstm_cache;
        Conv1dLayer::Cache conv_cache;
        DenseLayer::Cache head_cache;

        const VectorXd hidden = lstm.forward(sequence, lstm_cache);
        const VectorXd pooled = conv.forward(sequence, conv_cache);
        VectorXd merged(hidden.size() + pooled.size());
        merged << hidden, pooled;
        const VectorXd logits = head.forward(merged, head_cache);

        const SoftmaxResult sm = softmax_xent(logits, label);
        const VectorXd d_merged =
            head.backward(head_cache, sm.grad, grads.d_head_weights, grads.d_head_bias);

        lstm.backward(lstm_cache, d_merged.head(hidden.size()), grads.d_w_input, grads.d_w_hidden,
                      grads.d_lstm_bias);
        conv.backward(conv_cache, d_merged.tail(pooled.size()), grads.d_filters, grads.d_conv_bias);
        return sm.loss;
    }

    void apply_update(const Grads& g, double lr) {
        lstm.w_input.noalias() -= lr * g.d_w_input;
        lstm.w_hidden.noalias() -= lr * g.d_w_hidden;
        lstm.bias.noalias() -= lr * g.d_lstm_bias;
        conv.filters.noalias() -= lr * g.d_filters;
        conv.bias.noalias() -= lr * g.d_conv_bias;
        head.weights.noalias() -= lr * g.d_head_weights;
        head.bias.noalias() -= lr * g.d_head_bias;
    }

    static void scale_grads(Grads& g, double s) {
        g.d_w_input *= s;
        g.d_w_hidden *= s;
        g.d_lstm_bias *= s;
        g.d_filters *= s;
        g.d_conv_bias *= s;
        g.d_head_weights *= s;
        g.d_head_bias *= s;
    }

    static double grads_sq_norm(const Grads& g) {
        return g.d_w_input.squaredNorm() + g.d_w_hidden.squaredNorm() + g.d_lstm_bias.squaredNorm() +
               g.d_filters.squaredNorm() + g.d_conv_bias.squaredNorm() +
               g.d_head_weights.squaredNorm() + g.d_head_bias.squaredNorm();
    }
};

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainConfig {
    double learning_rate = 0.05;
    int epochs = 30;
    int batch_size = 32;
    std::uint32_t seed = 0;
    double grad_clip_norm = 5.0;
};

struct TrainReport {
    std::vector<double> epoch_loss;
    double final_loss = 0.0;
};

/// Deterministic minibatch SGD. Same seed and data give bit-identical models.
template <class Model>
TrainReport train(Model& model, const std::vector<typename Model::Sample>& inputs,
                  const std::vector<int>& labels, const TrainConfig& cfg) {
    if (inputs.empty()) throw DomainError("training dataset is empty");
    if (inputs.size() != labels.size()) throw DomainError("inputs/labels size mismatch");

    std::mt19937 rng(cfg.seed ^ 0x9e3779b9u);
    std::vector<std::size_t> order(inputs.size());
    std::iota(order.begin(), order.end(), std::size_t(0));

    TrainReport report;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += std::size_t(cfg.batch_size)) {
            const std::size_t end = std::min(order.size(), start + std::size_t(cfg.batch_size));
            auto grads = model.zero_grads();
            double batch_loss = 0.0;
            for (std::size_t i = start; i < end; ++i)
                batch_loss += model.loss_and_grads(inputs[order[i]], labels[order[i]], grads);

            const double inv = 1.0 / double(end - start);
            Model::scale_grads(grads, inv);
            const double norm = std::sqrt(Model::grads_sq_norm(grads));
            if (norm > cfg.grad_clip_norm) Model::scale_grads(grads, cfg.grad_clip_norm / norm);
            model.apply_update(grads, cfg.learning_rate);
            epoch_loss += batch_loss;
        }
        epoch_loss /= double(inputs.size());
        if (!std::isfinite(epoch_loss))
            throw TrainingDiverged(std::size_t(epoch), "non-finite training loss");
        report.epoch_loss.push_back(epoch_loss);
    }
    report.final_loss = report.epoch_loss.empty() ? 0.0 : report.epoch_loss.back();
    return report;
}

// ---------------------------------------------------------------------------
// Model bundle (serialization)
// ---------------------------------------------------------------------------

inline constexpr int kBundleFormatVersion = 1;

struct TrainingMeta {
    std::uint32_t seed = 0;
    int epochs = 0;
    double final_loss = 0.0;
};

struct ModelBundle {
    std::variant<Mlp, LstmFcn> model;
    std::vector<std::string> labels;
    TrainingMeta meta;

    int num_classes() const {
        if (const auto* mlp = std::get_if<Mlp>(&model))
            return int(mlp->layers.back().bias.size());
        return int(std::get<LstmFcn>(model).head.bias.size());
    }
};

namespace detail {

inline void append_matrix(std::vector<double>& out, const MatrixXd& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) out.push_back(m(r, c));
}

inline void append_vector(std::vector<double>& out, const VectorXd& v) {
    for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
}

class ParamReader {
public:
    explicit ParamReader(std::vector<double> values) : values_(std::move(values)) {}

    MatrixXd matrix(Eigen::Index rows, Eigen::Index cols) {
        MatrixXd m(rows, cols);
        for (Eigen::Index r = 0; r < rows; ++r)
            for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = next();
        return m;
    }

    VectorXd vector(Eigen::Index n) {
        VectorXd v(n);
        for (Eigen::Index i = 0; i < n; ++i) v[i] = next();
        return v;
    }

    bool exhausted() const { return pos_ == values_.size(); }

private:
    double next() {
        if (pos_ >= values_.size())
            throw ConfigError("model bundle parameter blob is truncated");
        return values_[pos_++];
    }

    std::vector<double> values_;
    std::size_t pos_ = 0;
};

} // namespace detail

inline void save(const ModelBundle& bundle, std::ostream& out) {
    nlohmann::json j;
    j["format_version"] = kBundleFormatVersion;
    j["labels"] = bundle.labels;
    j["training"] = {{"seed", bundle.meta.seed},
                     {"epochs", bundle.meta.epochs},
                     {"final_loss", bundle.meta.final_loss}};

    std::vector<double> params;
    if (const auto* mlp = std::get_if<Mlp>(&bundle.model)) {
        nlohmann::json arch = nlohmann::json::array();
        for (const auto& layer : mlp->layers) {
            arch.push_back({{"type", "dense"},
                            {"in", layer.weights.cols()},
                            {"out", layer.weights.rows()},
                            {"activation", activation_name(layer.activation)}});
            detail::append_matrix(params, layer.weights);
            detail::append_vector(params, layer.bias);
        }
        j["kind"] = "mlp";
        j["architecture"] = std::move(arch);
    } else {
        const auto& net = std::get<LstmFcn>(bundle.model);
        j["kind"] = "lstm_fcn";
        j["architecture"] = {{{"type", "lstm"}, {"in", net.lstm.input_size}, {"hidden", net.lstm.hidden_size}},
                             {{"type", "conv1d"},
                              {"in", net.conv.in_channels},
                              {"out", net.conv.out_channels},
                              {"kernel", net.conv.kernel}},
                             {{"type", "dense"},
                              {"in", net.head.weights.cols()},
                              {"out", net.head.weights.rows()},
                              {"activation", activation_name(net.head.activation)}}};
        detail::append_matrix(params, net.lstm.w_input);
        detail::append_matrix(params, net.lstm.w_hidden);
        detail::append_vector(params, net.lstm.bias);
        detail::append_matrix(params, net.conv.filters);
        detail::append_vector(params, net.conv.bias);
        detail::append_matrix(params, net.head.weights);
        detail::append_vector(params, net.head.bias);
    }
    j["params_b64"] = handover::detail::base64_encode_doubles(params);
    out << j.dump(2) << '\n';
}

inline ModelBundle load(std::istream& in) {
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("model bundle is not valid JSON: ") + e.what());
    }
    const int version = j.value("format_version", -1);
    if (version != kBundleFormatVersion)
        throw ConfigError("unsupported model bundle format_version " + std::to_string(version));

    ModelBundle bundle;
    bundle.labels = j.at("labels").get<std::vector<std::string>>();
    if (j.contains("training")) {
        bundle.meta.seed = j["training"].value("seed", 0u);
        bundle.meta.epochs = j["training"].value("epochs", 0);
        bundle.meta.final_loss = j["training"].value("final_loss", 0.0);
    }

    detail::ParamReader reader(
        handover::detail::base64_decode_doubles(j.at("params_b64").get<std::string>()));
    const std::string kind = j.at("kind").get<std::string>();
    const auto& arch = j.at("architecture");

    if (kind == "mlp") {
        Mlp mlp;
        for (const auto& spec : arch) {
            if (spec.at("type") != "dense") throw ConfigError("mlp architecture may only contain dense layers");
            DenseLayer layer;
            const auto in_n = spec.at("in").get<Eigen::Index>();
            const auto out_n = spec.at("out").get<Eigen::Index>();
            layer.activation = activation_from_name(spec.at("activation").get<std::string>());
            layer.weights = reader.matrix(out_n, in_n);
            layer.bias = reader.vector(out_n);
            mlp.layers.push_back(std::move(layer));
        }
        bundle.model = std::move(mlp);
    } else if (kind == "lstm_fcn") {
        if (arch.size() != 3) throw ConfigError("lstm_fcn architecture must have lstm, conv1d, dense");
        LstmFcn net;
        net.lstm.input_size = arch[0].at("in").get<int>();
        net.lstm.hidden_size = arch[0].at("hidden").get<int>();
        net.lstm.w_input = reader.matrix(4 * net.lstm.hidden_size, net.lstm.input_size);
        net.lstm.w_hidden = reader.matrix(4 * net.lstm.hidden_size, net.lstm.hidden_size);
        net.lstm.bias = reader.vector(4 * net.lstm.hidden_size);
        net.conv.in_channels = arch[1].at("in").get<int>();
        net.conv.out_channels = arch[1].at("out").get<int>();
        net.conv.kernel = arch[1].at("kernel").get<int>();
        net.conv.filters = reader.matrix(net.conv.out_channels,
                                         Eigen::Index(net.conv.in_channels) * net.conv.kernel);
        net.conv.bias = reader.vector(net.conv.out_channels);
        const auto head_in = arch[2].at("in").get<Eigen::Index>();
        const auto head_out = arch[2].at("out").get<Eigen::Index>();
        net.head.activation = activation_from_name(arch[2].at("activation").get<std::string>());
        net.head.weights = reader.matrix(head_out, head_in);
        net.head.bias = reader.vector(head_out);
        bundle.model = std::move(net);
    } else {
        throw ConfigError("unknown model kind '" + kind + "'");
    }
    if (!reader.exhausted())
        throw ConfigError("model bundle parameter count does not match the architecture");
    return bundle;
}

} // namespace handover::nn
