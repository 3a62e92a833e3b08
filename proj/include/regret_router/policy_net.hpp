// policy_net.hpp
//
// Two-hidden-layer GELU perceptron shared by every learned router and outcome
// regressor, with hand-written reverse-mode gradients, Adam and early
// stopping.
#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "activations.hpp"
#include "core_types.hpp"
#include "io.hpp"
#include "surrogates.hpp"

namespace rr {

struct NetworkParams {
    Matrix W1;  // hidden x d
    Vector b1;
    Matrix W2;  // hidden x hidden
    Vector b2;
    Matrix W3;  // out x hidden
    Vector b3;

    std::size_t input_dim() const { return static_cast<std::size_t>(W1.cols()); }
    std::size_t hidden_dim() const { return static_cast<std::size_t>(W1.rows()); }
    std::size_t output_dim() const { return static_cast<std::size_t>(W3.rows()); }

    /// Visits every parameter block as (name, data, size) in a fixed order.
    template <typename F>
    void for_each_block(F&& f) {
        f("W1", W1.data(), W1.size());
        f("b1", b1.data(), b1.size());
        f("W2", W2.data(), W2.size());
        f("b2", b2.data(), b2.size());
        f("W3", W3.data(), W3.size());
        f("b3", b3.data(), b3.size());
    }
    template <typename F>
    void for_each_block(F&& f) const {
        f("W1", W1.data(), W1.size());
        f("b1", b1.data(), b1.size());
        f("W2", W2.data(), W2.size());
        f("b2", b2.data(), b2.size());
        f("W3", W3.data(), W3.size());
        f("b3", b3.data(), b3.size());
    }

    Eigen::Index parameter_count() const { return W1.size() + b1.size() + W2.size() + b2.size() + W3.size() + b3.size(); }

    static NetworkParams zeros(std::size_t d, std::size_t hidden, std::size_t out) {
        const auto D = static_cast<Eigen::Index>(d), H = static_cast<Eigen::Index>(hidden), O = static_cast<Eigen::Index>(out);
        return {Matrix::Zero(H, D), Vector::Zero(H), Matrix::Zero(H, H), Vector::Zero(H), Matrix::Zero(O, H), Vector::Zero(O)};
    }

    NetworkParams zeros_like() const { return zeros(input_dim(), hidden_dim(), output_dim()); }

    friend bool operator==(const NetworkParams& a, const NetworkParams& b) {
        return a.W1 == b.W1 && a.b1 == b.b1 && a.W2 == b.W2 && a.b2 == b.b2 && a.W3 == b.W3 && a.b3 == b.b3;
    }
};

namespace detail {
inline void glorot_fill(Matrix& W, std::mt19937_64& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(W.rows() + W.cols()));
    for (Eigen::Index k = 0; k < W.size(); ++k) W.data()[k] = (2.0 * uniform01(rng) - 1.0) * limit;
}
}  // namespace detail

/// Glorot-uniform weights, zero biases.
inline NetworkParams init_network(std::size_t d, std::size_t hidden, std::size_t out, std::uint64_t seed) {
    if (d == 0 || hidden == 0 || out == 0) throw ConfigError("network dimensions must be positive");
    NetworkParams p = NetworkParams::zeros(d, hidden, out);
    std::mt19937_64 rng(seed);
    detail::glorot_fill(p.W1, rng);
    detail::glorot_fill(p.W2, rng);
    detail::glorot_fill(p.W3, rng);
    return p;
}

struct ForwardCache {
    Matrix Z1, A1, Z2, A2, S;
};

inline ForwardCache forward_cached(const NetworkParams& p, const Matrix& X) {
    if (static_cast<std::size_t>(X.rows()) != p.input_dim()) throw DataError("forward: input dimension mismatch");
    ForwardCache c;
    c.Z1 = (p.W1 * X).colwise() + p.b1;
    c.A1 = c.Z1.unaryExpr([](double v) { return gelu(v); });
    c.Z2 = (p.W2 * c.A1).colwise() + p.b2;
    c.A2 = c.Z2.unaryExpr([](double v) { return gelu(v); });
    c.S = (p.W3 * c.A2).colwise() + p.b3;
    return c;
}

/// Scores for a batch laid out d x B; returns out x B.
inline Matrix forward_batch(const NetworkParams& p, const Matrix& X) { return forward_cached(p, X).S; }

inline Vector forward(const NetworkParams& p, const FeatureVector& x) {
    if (x.size() != p.input_dim()) throw DataError("forward: input dimension mismatch");
    const Matrix X = Eigen::Map<const Matrix>(x.data(), static_cast<Eigen::Index>(x.size()), 1);
    return forward_batch(p, X).col(0);
}

struct BackwardResult {
    NetworkParams grads;
    double loss = 0.0;  // mean over the batch
};

/// Exact gradient of the mean batch loss. targets holds one target row per
/// column, aligned with the columns of X.
inline BackwardResult backward(const NetworkParams& p, const Matrix& X, const Matrix& targets, const LossSpec& spec) {
    spec.validated();
    if (X.cols() != targets.cols()) throw DataError("backward: batch and target column counts differ");
    if (X.cols() == 0) throw DataError("backward: empty batch");
    const ForwardCache c = forward_cached(p, X);
    const auto B = X.cols();
    const double inv_b = 1.0 / static_cast<double>(B);

    Matrix dS(c.S.rows(), B);
    double loss = 0.0;
    Vector g(c.S.rows());
    for (Eigen::Index j = 0; j < B; ++j) {
        loss += loss_with_gradient(spec, c.S.col(j), targets.col(j), g);
        dS.col(j) = g * inv_b;
    }

    BackwardResult r;
    r.loss = loss * inv_b;
    r.grads.W3 = dS * c.A2.transpose();
    r.grads.b3 = dS.rowwise().sum();
    const Matrix dZ2 = (p.W3.transpose() * dS).cwiseProduct(c.Z2.unaryExpr([](double v) { return gelu_derivative(v); }));
    r.grads.W2 = dZ2 * c.A1.transpose();
    r.grads.b2 = dZ2.rowwise().sum();
    const Matrix dZ1 = (p.W2.transpose() * dZ2).cwiseProduct(c.Z1.unaryExpr([](double v) { return gelu_derivative(v); }));
    r.grads.W1 = dZ1 * X.transpose();
    r.grads.b1 = dZ1.rowwise().sum();
    return r;
}

inline double batch_loss(const NetworkParams& p, const Matrix& X, const Matrix& targets, const LossSpec& spec) {
    const Matrix S = forward_batch(p, X);
    double loss = 0.0;
    for (Eigen::Index j = 0; j < S.cols(); ++j) loss += loss_value(spec, S.col(j), targets.col(j));
    return S.cols() ? loss / static_cast<double>(S.cols()) : 0.0;
}

struct AdamState {
    NetworkParams m, v;
    std::uint64_t step = 0;
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    static AdamState for_params(const NetworkParams& p, double lr) {
        AdamState s;
        s.m = p.zeros_like();
        s.v = p.zeros_like();
        s.lr = lr;
        return s;
    }
};

/// Bias-corrected Adam update, in place.
inline void adam_step(NetworkParams& params, const NetworkParams& grads, AdamState& s) {
    ++s.step;
    const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
    const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
    std::vector<double*> pw, mw, vw;
    std::vector<const double*> gw;
    std::vector<Eigen::Index> sizes;
    params.for_each_block([&](std::string_view, double* d, Eigen::Index n) { pw.push_back(d); sizes.push_back(n); });
    grads.for_each_block([&](std::string_view, const double* d, Eigen::Index) { gw.push_back(d); });
    s.m.for_each_block([&](std::string_view, double* d, Eigen::Index) { mw.push_back(d); });
    s.v.for_each_block([&](std::string_view, double* d, Eigen::Index) { vw.push_back(d); });
    for (std::size_t b = 0; b < pw.size(); ++b) {
        for (Eigen::Index k = 0; k < sizes[b]; ++k) {
            const double g = gw[b][k];
            double& m = mw[b][k];
            double& v = vw[b][k];
            m = s.beta1 * m + (1.0 - s.beta1) * g;
            v = s.beta2 * v + (1.0 - s.beta2) * g * g;
            pw[b][k] -= s.lr * (m / c1) / (std::sqrt(v / c2) + s.eps);
        }
    }
}

/// Which validation quantity early stopping tracks.
enum class Selection { regret, loss };

struct TrainConfig {
    std::size_t max_epochs = 10000;
    std::size_t patience = 100;
    std::size_t batch_size = 128;
    double tau = 100.0;
    double lr = 1e-4;
    std::size_t hidden = 200;
    std::uint64_t seed = 0;

    void validate() const {
        if (patience == 0 || batch_size == 0 || hidden == 0) throw ConfigError("patience, batch_size and hidden must be positive");
        if (!(tau > 0.0) || !(lr > 0.0)) throw ConfigError("tau and lr must be positive");
    }
};

struct TrainResult {
    NetworkParams params;
    std::size_t best_epoch = 0;  // 0 means the initialization was never beaten
    std::size_t epochs_run = 0;
    double best_metric = 0.0;
    std::vector<double> val_history;  // metric after each epoch, index 0 = init
};

namespace detail {
inline Matrix gather_columns(const Matrix& M, const std::vector<std::size_t>& cols, std::size_t begin, std::size_t end) {
    Matrix out(M.rows(), static_cast<Eigen::Index>(end - begin));
    for (std::size_t k = begin; k < end; ++k) out.col(static_cast<Eigen::Index>(k - begin)) = M.col(static_cast<Eigen::Index>(cols[k]));
    return out;
}

// Hard-argmax regret where targets hold utility rows as columns.
inline double column_regret(const Matrix& scores, const Matrix& utility_cols) {
    double sum = 0.0;
    for (Eigen::Index j = 0; j < scores.cols(); ++j) {
        const auto t = static_cast<Eigen::Index>(argmax_lowest(Vector(scores.col(j))));
        sum += utility_cols.col(j).maxCoeff() - utility_cols(t, j);
    }
    return scores.cols() ? sum / static_cast<double>(scores.cols()) : 0.0;
}

inline double validation_metric(const NetworkParams& p, const Matrix& X, const Matrix& Y, const LossSpec& spec, Selection sel) {
    if (sel == Selection::regret) return column_regret(forward_batch(p, X), Y);
    return batch_loss(p, X, Y, spec);
}
}  // namespace detail

/// Mini-batch Adam with early stopping. Returns the snapshot with the best
/// validation metric; among equal metrics the later epoch wins. The patience
/// counter only resets on a strict improvement.
inline TrainResult train_network(const Matrix& X_train, const Matrix& Y_train, const Matrix& X_val, const Matrix& Y_val,
                                 const LossSpec& spec, const TrainConfig& cfg, Selection sel,
                                 std::optional<NetworkParams> initial = std::nullopt) {
    spec.validated();
    cfg.validate();
    if (X_train.cols() == 0) throw DataError("train: empty training split");
    if (X_val.cols() == 0) throw DataError("train: empty validation split");
    if (X_train.cols() != Y_train.cols() || X_val.cols() != Y_val.cols()) throw DataError("train: feature/target count mismatch");

    const std::size_t out = static_cast<std::size_t>(Y_train.rows());
    NetworkParams params = initial ? std::move(*initial)
                                   : init_network(static_cast<std::size_t>(X_train.rows()), cfg.hidden, out, cfg.seed);
    AdamState adam = AdamState::for_params(params, cfg.lr);
    std::mt19937_64 rng(cfg.seed ^ 0x9E3779B97F4A7C15ULL);

    TrainResult res;
    res.best_metric = detail::validation_metric(params, X_val, Y_val, spec, sel);
    res.val_history.push_back(res.best_metric);
    res.params = params;

    const auto n = static_cast<std::size_t>(X_train.cols());
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::size_t since_improvement = 0;

    for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[static_cast<std::size_t>(rng() % i)]);
        for (std::size_t begin = 0; begin < n; begin += cfg.batch_size) {
            const std::size_t end = std::min(n, begin + cfg.batch_size);
            const auto br = backward(params, detail::gather_columns(X_train, order, begin, end),
                                     detail::gather_columns(Y_train, order, begin, end), spec);
            adam_step(params, br.grads, adam);
        }
        res.epochs_run = epoch;
        const double metric = detail::validation_metric(params, X_val, Y_val, spec, sel);
        res.val_history.push_back(metric);
        if (metric < res.best_metric - 1e-12) {
            res.best_metric = metric;
            res.best_epoch = epoch;
            res.params = params;
            since_improvement = 0;
        } else {
            if (metric <= res.best_metric) {
                res.best_epoch = epoch;
                res.params = params;
            }
            if (++since_improvement >= cfg.patience) break;
        }
    }
    return res;
}

/// Trains a policy on the train split of ds against utility rows of um,
/// stopping on hard-argmax validation regret.
inline TrainResult train(const Dataset& ds, const UtilityMatrix& um, const LossSpec& spec, const TrainConfig& cfg) {
    if (um.rows() != ds.size()) throw DataError("train: utility matrix rows do not match dataset");
    const auto tr = ds.indices(Split::train);
    const auto va = ds.indices(Split::validation);
    if (tr.empty()) throw DataError("train: empty training split");
    if (va.empty()) throw DataError("train: empty validation split");
    const Matrix Y_train = um.subset(tr).values.transpose();
    const Matrix Y_val = um.subset(va).values.transpose();
    return train_network(ds.features(tr), Y_train, ds.features(va), Y_val, spec, cfg, Selection::regret);
}

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr int kCheckpointVersion = 1;

inline nlohmann::json config_to_json(const TrainConfig& c) {
    return {{"max_epochs", c.max_epochs}, {"patience", c.patience}, {"batch_size", c.batch_size},
            {"tau", c.tau}, {"lr", c.lr}, {"hidden", c.hidden}, {"seed", c.seed}};
}

inline TrainConfig config_from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.max_epochs = j.at("max_epochs").get<std::size_t>();
    c.patience = j.at("patience").get<std::size_t>();
    c.batch_size = j.at("batch_size").get<std::size_t>();
    c.tau = j.at("tau").get<double>();
    c.lr = j.at("lr").get<double>();
    c.hidden = j.at("hidden").get<std::size_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
}

inline nlohmann::json params_to_json(const NetworkParams& p) {
    nlohmann::json blocks = nlohmann::json::object();
    p.for_each_block([&](std::string_view name, const double* d, Eigen::Index n) {
        blocks[std::string(name)] = std::vector<double>(d, d + n);
    });
    return {{"shape", {{"input", p.input_dim()}, {"hidden", p.hidden_dim()}, {"output", p.output_dim()}}}, {"blocks", blocks}};
}

inline NetworkParams params_from_json(const nlohmann::json& j) {
    const auto& shape = j.at("shape");
    NetworkParams p = NetworkParams::zeros(shape.at("input").get<std::size_t>(), shape.at("hidden").get<std::size_t>(),
                                           shape.at("output").get<std::size_t>());
    const auto& blocks = j.at("blocks");
    p.for_each_block([&](std::string_view name, double* d, Eigen::Index n) {
        const auto values = blocks.at(std::string(name)).get<std::vector<double>>();
        if (static_cast<Eigen::Index>(values.size()) != n) throw DataError("checkpoint block '" + std::string(name) + "' has wrong size");
        std::copy(values.begin(), values.end(), d);
    });
    return p;
}

struct Checkpoint {
    NetworkParams params;
    TrainConfig config;
    std::string loss;  // LossKind name
};

inline nlohmann::json checkpoint_to_json(const Checkpoint& c) {
    return {{"format", "regret_router.mlp"}, {"version", kCheckpointVersion}, {"loss", c.loss},
            {"seed", c.config.seed}, {"config", config_to_json(c.config)}, {"params", params_to_json(c.params)}};
}

inline Checkpoint checkpoint_from_json(const nlohmann::json& j) {
    if (j.value("format", "") != "regret_router.mlp") throw DataError("not a network checkpoint");
    if (j.at("version").get<int>() != kCheckpointVersion) throw DataError("unsupported checkpoint version");
    return {params_from_json(j.at("params")), config_from_json(j.at("config")), j.at("loss").get<std::string>()};
}

inline void save_checkpoint(const std::string& path, const Checkpoint& c) {
    write_file_atomic(path, checkpoint_to_json(c).dump(1) + '\n');
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot read checkpoint " + path);
    try {
        return checkpoint_from_json(nlohmann::json::parse(is));
    } catch (const nlohmann::json::exception& e) {
        throw DataError("malformed checkpoint " + path + ": " + e.what());
    }
}

}  // namespace rr
