// counterfactual.hpp
//
// Counterfactual utility estimation from logged data: per-treatment outcome
// regression, a multinomial-logistic propensity model and the doubly robust
// combination with percentile clipping of inverse-propensity weights.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <utility>
#include <vector>

#include "core_types.hpp"
#include "policy_net.hpp"
#include "surrogates.hpp"

namespace rr {

/// Batch predictor: features d x n in, per-treatment values T x n out.
using BatchPredictor = std::function<Matrix(const Matrix&)>;

class OutcomeModel {
public:
    OutcomeModel() = default;

    /// Wraps fitted single-output regressors, one per treatment.
    explicit OutcomeModel(std::vector<NetworkParams> regressors) : networks_(std::move(regressors)) {
        auto nets = networks_;
        predict_ = [nets](const Matrix& X) {
            Matrix out(static_cast<Eigen::Index>(nets.size()), X.cols());
            for (std::size_t t = 0; t < nets.size(); ++t) out.row(static_cast<Eigen::Index>(t)) = forward_batch(nets[t], X).row(0);
            return out;
        };
        treatments_ = networks_.size();
    }

    /// Any regression function can stand in, e.g. ground truth in tests.
    static OutcomeModel from_function(std::size_t T, BatchPredictor f) {
        OutcomeModel m;
        m.treatments_ = T;
        m.predict_ = std::move(f);
        return m;
    }

    static OutcomeModel zero(std::size_t T) {
        return from_function(T, [T](const Matrix& X) { return Matrix::Zero(static_cast<Eigen::Index>(T), X.cols()).eval(); });
    }

    std::size_t treatments() const { return treatments_; }
    const std::vector<NetworkParams>& networks() const { return networks_; }
    Matrix predict_batch(const Matrix& X) const { return predict_(X); }

private:
    std::vector<NetworkParams> networks_;
    BatchPredictor predict_;
    std::size_t treatments_ = 0;
};

class PropensityModel {
public:
    PropensityModel() = default;

    /// Multinomial logistic model p(t|x) = softmax(W x + b).
    PropensityModel(Matrix W, Vector b) : W_(std::move(W)), b_(std::move(b)), treatments_(static_cast<std::size_t>(W_.rows())) {
        const Matrix Wc = W_;
        const Vector bc = b_;
        predict_ = [Wc, bc](const Matrix& X) {
            Matrix logits = (Wc * X).colwise() + bc;
            for (Eigen::Index j = 0; j < logits.cols(); ++j) logits.col(j) = softmax_temp(logits.col(j), 1.0);
            return logits;
        };
    }

    /// Hook for any probabilistic classifier; columns must be distributions.
    static PropensityModel from_function(std::size_t T, BatchPredictor f) {
        PropensityModel m;
        m.treatments_ = T;
        m.predict_ = std::move(f);
        return m;
    }

    static PropensityModel uniform(std::size_t T) {
        return from_function(T, [T](const Matrix& X) {
            return Matrix::Constant(static_cast<Eigen::Index>(T), X.cols(), 1.0 / static_cast<double>(T)).eval();
        });
    }

    std::size_t treatments() const { return treatments_; }
    const Matrix& weights() const { return W_; }
    const Vector& bias() const { return b_; }
    Matrix predict_batch(const Matrix& X) const { return predict_(X); }

    Vector predict(const FeatureVector& x) const {
        const Matrix X = Eigen::Map<const Matrix>(x.data(), static_cast<Eigen::Index>(x.size()), 1);
        return predict_(X).col(0);
    }

private:
    Matrix W_;
    Vector b_;
    std::size_t treatments_ = 0;
    BatchPredictor predict_;
};

inline Vector observed_utilities(const Dataset& ds, const std::vector<std::size_t>& rows, CostSensitivity lambda) {
    Vector y(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t k = 0; k < rows.size(); ++k) {
        const auto& s = ds.samples[rows[k]];
        y(static_cast<Eigen::Index>(k)) = utility(s.a, s.c, lambda);
    }
    return y;
}

namespace detail {
inline std::vector<std::size_t> rows_with_treatment(const Dataset& ds, const std::vector<std::size_t>& rows, TreatmentId t) {
    std::vector<std::size_t> out;
    for (auto i : rows)
        if (ds.samples[i].t == t) out.push_back(i);
    return out;
}

/// Fits one single-output regressor per treatment on the logged cells only;
/// value(sample) picks the regression target.
template <typename Target>
std::vector<NetworkParams> fit_per_treatment(const Dataset& ds, const TrainConfig& cfg, Target value) {
    const auto tr = ds.indices(Split::train);
    const auto va = ds.indices(Split::validation);
    std::vector<NetworkParams> nets;
    nets.reserve(ds.T);
    for (TreatmentId t = 0; t < ds.T; ++t) {
        const auto tr_t = rows_with_treatment(ds, tr, t);
        if (tr_t.empty())
            throw DataError("support violation: treatment " + std::to_string(t) + " has no training samples");
        auto va_t = rows_with_treatment(ds, va, t);
        if (va_t.empty()) va_t = tr_t;
        auto targets = [&](const std::vector<std::size_t>& rows) {
            Matrix Y(1, static_cast<Eigen::Index>(rows.size()));
            for (std::size_t k = 0; k < rows.size(); ++k) Y(0, static_cast<Eigen::Index>(k)) = value(ds.samples[rows[k]]);
            return Y;
        };
        TrainConfig c = cfg;
        c.seed = cfg.seed + 7919 * (t + 1);
        nets.push_back(train_network(ds.features(tr_t), targets(tr_t), ds.features(va_t), targets(va_t),
                                     LossSpec::cf_regression(), c, Selection::loss)
                           .params);
    }
    return nets;
}
}  // namespace detail

/// r_t(x) regresses y = a - lambda c on the samples logged under t.
inline OutcomeModel fit_outcome(const Dataset& ds, CostSensitivity lambda, const TrainConfig& cfg) {
    return OutcomeModel(detail::fit_per_treatment(ds, cfg, [lambda](const ObservationalSample& s) { return utility(s.a, s.c, lambda); }));
}

struct PropensityConfig {
    std::size_t iterations = 500;
    double lr = 0.1;
    double l2 = 1e-4;
};

/// Full-batch Adam on the mean multinomial cross-entropy over the train split.
inline PropensityModel fit_propensity(const Dataset& ds, const PropensityConfig& cfg = {}) {
    if (ds.T < 2) throw DataError("fit_propensity: need at least two treatments");
    const auto tr = ds.indices(Split::train);
    if (tr.empty()) throw DataError("fit_propensity: empty training split");
    std::vector<std::size_t> counts(ds.T, 0);
    for (auto i : tr) ++counts[ds.samples[i].t];
    if (std::count_if(counts.begin(), counts.end(), [](std::size_t c) { return c > 0; }) < 2)
        throw DataError("fit_propensity: degenerate dataset, a single treatment was logged");

    const Matrix X = ds.features(tr);
    const auto n = X.cols();
    const auto T = static_cast<Eigen::Index>(ds.T);
    Matrix onehot = Matrix::Zero(T, n);
    for (Eigen::Index j = 0; j < n; ++j) onehot(static_cast<Eigen::Index>(ds.samples[tr[static_cast<std::size_t>(j)]].t), j) = 1.0;

    Matrix W = Matrix::Zero(T, X.rows());
    Vector b = Vector::Zero(T);
    // initialise the bias at the log class frequencies
    for (Eigen::Index t = 0; t < T; ++t)
        b(t) = std::log((static_cast<double>(counts[static_cast<std::size_t>(t)]) + 0.5) / (static_cast<double>(n) + 0.5 * static_cast<double>(T)));
    Matrix mW = Matrix::Zero(T, X.rows()), vW = mW;
    Vector mb = Vector::Zero(T), vb = mb;
    const double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    for (std::size_t it = 1; it <= cfg.iterations; ++it) {
        Matrix P = (W * X).colwise() + b;
        for (Eigen::Index j = 0; j < n; ++j) P.col(j) = softmax_temp(P.col(j), 1.0);
        const Matrix G = (P - onehot) / static_cast<double>(n);
        const Matrix gW = G * X.transpose() + cfg.l2 * W;
        const Vector gb = G.rowwise().sum();
        const double c1 = 1.0 - std::pow(beta1, static_cast<double>(it));
        const double c2 = 1.0 - std::pow(beta2, static_cast<double>(it));
        mW = beta1 * mW + (1.0 - beta1) * gW;
        vW = beta2 * vW + (1.0 - beta2) * gW.cwiseProduct(gW);
        mb = beta1 * mb + (1.0 - beta1) * gb;
        vb = beta2 * vb + (1.0 - beta2) * gb.cwiseProduct(gb);
        W.array() -= cfg.lr * (mW.array() / c1) / ((vW.array() / c2).sqrt() + eps);
        b.array() -= cfg.lr * (mb.array() / c1) / ((vb.array() / c2).sqrt() + eps);
    }
    return PropensityModel(std::move(W), std::move(b));
}

inline constexpr double kPropensityFloor = 1e-6;

/// Nearest-rank percentile of an ascending list: element ceil(pct/100 * N).
inline double nearest_rank_percentile(const std::vector<double>& sorted, double pct) {
    if (sorted.empty()) throw DataError("percentile of an empty list");
    const auto N = static_cast<double>(sorted.size());
    auto rank = static_cast<std::size_t>(std::ceil(pct / 100.0 * N));
    rank = std::clamp<std::size_t>(rank, 1, sorted.size());
    return sorted[rank - 1];
}

struct ClipOptions {
    bool enabled = true;
    double lower_pct = 5.0;
    double upper_pct = 95.0;
};

inline std::pair<double, double> clip_bounds(std::vector<double> weights, double lower_pct, double upper_pct) {
    if (weights.empty()) throw DataError("clip_weights: empty weight list");
    for (double w : weights)
        if (!std::isfinite(w) || w <= 0.0) throw DataError("clip_weights: weights must be positive and finite");
    std::sort(weights.begin(), weights.end());
    return {nearest_rank_percentile(weights, lower_pct), nearest_rank_percentile(weights, upper_pct)};
}

/// Clamps each weight into [P_lower, P_upper] of the list itself.
inline std::vector<double> clip_weights(const std::vector<double>& weights, double lower_pct = 5.0, double upper_pct = 95.0) {
    const auto [lo, hi] = clip_bounds(weights, lower_pct, upper_pct);
    std::vector<double> out(weights.size());
    std::transform(weights.begin(), weights.end(), out.begin(), [lo = lo, hi = hi](double w) { return std::clamp(w, lo, hi); });
    return out;
}

/// Doubly robust potential-utility estimates for every sample in ds:
///   Y_i(t) = (y_i - r_t(x_i)) 1[t_i = t] w_i + r_t(x_i),  w_i = 1 / p(t_i | x_i),
/// with w_i floored through the propensity and clipped to percentiles of the
/// training-split weights.
inline UtilityMatrix dr_estimate(const Dataset& ds, const OutcomeModel& outcome, const PropensityModel& propensity,
                                 CostSensitivity lambda, const ClipOptions& clip = {}) {
    if (outcome.treatments() != ds.T || propensity.treatments() != ds.T) throw DataError("dr_estimate: treatment count mismatch");
    const Matrix X = ds.features();
    const Matrix R = outcome.predict_batch(X);
    const Matrix P = propensity.predict_batch(X);
    if (!P.allFinite()) throw DataError("dr_estimate: non-finite propensity");
    const auto n = ds.size();

    std::vector<double> w(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double p = P(static_cast<Eigen::Index>(ds.samples[i].t), static_cast<Eigen::Index>(i));
        w[i] = 1.0 / std::max(p, kPropensityFloor);
    }
    if (clip.enabled) {
        std::vector<double> train_w;
        for (auto i : ds.indices(Split::train)) train_w.push_back(w[i]);
        if (train_w.empty()) train_w = w;
        const auto [lo, hi] = clip_bounds(train_w, clip.lower_pct, clip.upper_pct);
        for (double& v : w) v = std::clamp(v, lo, hi);
    }

    UtilityMatrix um{R.transpose(), lambda};
    for (std::size_t i = 0; i < n; ++i) {
        const auto& s = ds.samples[i];
        const auto r = static_cast<Eigen::Index>(i), t = static_cast<Eigen::Index>(s.t);
        um.values(r, t) += (utility(s.a, s.c, lambda) - R(t, r)) * w[i];
    }
    if (!um.values.allFinite()) throw DataError("dr_estimate: non-finite utility estimate");
    return um;
}

}  // namespace rr
