// surrogates.hpp
//
// Regret and its differentiable stand-ins. Utility rows are fixed targets:
// nothing here differentiates through the counterfactual estimates.
#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "activations.hpp"
#include "core_types.hpp"

namespace rr {

enum class LossKind { rm_classification, rm_softmax, cf_regression };

inline const char* to_string(LossKind k) {
    switch (k) {
        case LossKind::rm_classification: return "rm_classification";
        case LossKind::rm_softmax: return "rm_softmax";
        case LossKind::cf_regression: return "cf_regression";
    }
    return "?";
}

inline LossKind parse_loss_kind(std::string_view name) {
    if (name == "rm_classification") return LossKind::rm_classification;
    if (name == "rm_softmax") return LossKind::rm_softmax;
    if (name == "cf_regression") return LossKind::cf_regression;
    throw ConfigError("unknown loss '" + std::string(name) + "'");
}

/// A registered training loss. Only rm_softmax carries a temperature.
struct LossSpec {
    LossKind kind = LossKind::rm_softmax;
    std::optional<double> tau;

    static LossSpec rm_softmax(double tau) { return LossSpec{LossKind::rm_softmax, tau}.validated(); }
    static LossSpec rm_classification() { return {LossKind::rm_classification, std::nullopt}; }
    static LossSpec cf_regression() { return {LossKind::cf_regression, std::nullopt}; }

    LossSpec validated() const {
        if (kind == LossKind::rm_softmax) {
            if (!tau || !(*tau > 0.0) || !std::isfinite(*tau))
                throw ConfigError("rm_softmax needs a positive temperature");
        } else if (tau) {
            throw ConfigError(std::string(to_string(kind)) + " does not take a temperature");
        }
        return *this;
    }
};

inline constexpr double kProbabilityFloor = 1e-12;

/// -log probs[t_star], with probabilities floored to avoid -log 0.
inline double rm_classification_loss(const Eigen::Ref<const Vector>& probs, TreatmentId t_star) {
    return -std::log(std::max(probs(static_cast<Eigen::Index>(t_star)), kProbabilityFloor));
}

/// max_t Y(t) - <Y, softmax_temp(scores, tau)>.
inline double rm_softmax_loss(const Eigen::Ref<const Vector>& scores, const Eigen::Ref<const Vector>& row, double tau) {
    const Vector p = softmax_temp(scores, tau);
    // clamp the rounding residue; the exact value is never negative
    return std::max(0.0, row.maxCoeff() - row.dot(p));
}

inline double cf_regression_loss(const Eigen::Ref<const Vector>& scores, const Eigen::Ref<const Vector>& row) {
    return (row - scores).squaredNorm();
}

/// Lipschitz constant of the utility row over the simplex (l1 norm).
inline double lipschitz_constant(const Eigen::Ref<const Vector>& row) { return row.cwiseAbs().maxCoeff(); }

inline TreatmentId optimal_treatment(const UtilityMatrix& um, std::size_t i) {
    if (i >= um.rows()) throw DataError("optimal_treatment: row out of range");
    return argmax_lowest(Vector(um.values.row(static_cast<Eigen::Index>(i)).transpose()));
}

/// Mean gap between the best estimated utility and the chosen treatment's.
inline double empirical_regret(const std::vector<TreatmentId>& decisions, const UtilityMatrix& um) {
    if (decisions.size() != um.rows()) throw DataError("empirical_regret: decision count does not match rows");
    if (decisions.empty()) return 0.0;
    double sum = 0.0;
    for (std::size_t i = 0; i < decisions.size(); ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        sum += um.values.row(r).maxCoeff() - um.values(r, static_cast<Eigen::Index>(decisions[i]));
    }
    return sum / static_cast<double>(decisions.size());
}

/// Hard-argmax regret from a score matrix laid out T x n (one column per row of um).
inline double empirical_regret(const Matrix& scores, const UtilityMatrix& um) {
    std::vector<TreatmentId> decisions(static_cast<std::size_t>(scores.cols()));
    for (Eigen::Index j = 0; j < scores.cols(); ++j) decisions[static_cast<std::size_t>(j)] = argmax_lowest(Vector(scores.col(j)));
    return empirical_regret(decisions, um);
}

/// Regret of a stochastic policy: probs is n x T, one distribution per row.
inline double distributional_regret(const Matrix& probs, const UtilityMatrix& um) {
    if (probs.rows() != um.values.rows() || probs.cols() != um.values.cols())
        throw DataError("distributional_regret: shape mismatch");
    if (probs.rows() == 0) return 0.0;
    double sum = 0.0;
    for (Eigen::Index i = 0; i < probs.rows(); ++i) sum += um.values.row(i).maxCoeff() - um.values.row(i).dot(probs.row(i));
    return sum / static_cast<double>(probs.rows());
}

struct CeRegretBound {
    double per_row = 0.0;  // (1/n) sum_i L_i sqrt(2 CE_i)
    double global = 0.0;   // max_i L_i * (1/n) sum_i sqrt(2 CE_i)
};

inline CeRegretBound ce_regret_bound_detail(const Matrix& probs, const UtilityMatrix& um) {
    if (probs.rows() != um.values.rows() || probs.cols() != um.values.cols())
        throw DataError("ce_regret_bound: shape mismatch");
    CeRegretBound b;
    if (probs.rows() == 0) return b;
    double root_sum = 0.0, max_l = 0.0;
    for (Eigen::Index i = 0; i < probs.rows(); ++i) {
        const Vector row = um.values.row(i).transpose();
        const double ce = rm_classification_loss(Vector(probs.row(i).transpose()), argmax_lowest(row));
        const double root = std::sqrt(2.0 * ce);
        const double l = lipschitz_constant(row);
        b.per_row += l * root;
        root_sum += root;
        max_l = std::max(max_l, l);
    }
    const auto n = static_cast<double>(probs.rows());
    b.per_row /= n;
    b.global = max_l * root_sum / n;
    return b;
}

inline double ce_regret_bound(const Matrix& probs, const UtilityMatrix& um) { return ce_regret_bound_detail(probs, um).per_row; }

/// Loss of a single score vector against its target row, writing dLoss/dscores.
/// For rm_classification the target row is a utility row and t* is its argmax;
/// for cf_regression the row holds the regression targets.
inline double loss_with_gradient(const LossSpec& spec, const Eigen::Ref<const Vector>& scores,
                                 const Eigen::Ref<const Vector>& row, Eigen::Ref<Vector> grad) {
    switch (spec.kind) {
        case LossKind::rm_softmax: {
            const double tau = *spec.tau;
            const Vector p = softmax_temp(scores, tau);
            const double expected = row.dot(p);
            grad = -tau * (p.array() * (row.array() - expected)).matrix();
            return std::max(0.0, row.maxCoeff() - expected);
        }
        case LossKind::rm_classification: {
            const auto t_star = static_cast<Eigen::Index>(argmax_lowest(Vector(row)));
            const Vector logp = log_softmax_temp(scores, 1.0);
            if (logp(t_star) < std::log(kProbabilityFloor)) {
                grad.setZero();
                return -std::log(kProbabilityFloor);
            }
            grad = logp.array().exp().matrix();
            grad(t_star) -= 1.0;
            return -logp(t_star);
        }
        case LossKind::cf_regression: {
            grad = 2.0 * (scores - row);
            return (row - scores).squaredNorm();
        }
    }
    throw ConfigError("unknown loss");
}

/// Scalar loss alone; mirrors loss_with_gradient.
inline double loss_value(const LossSpec& spec, const Eigen::Ref<const Vector>& scores, const Eigen::Ref<const Vector>& row) {
    switch (spec.kind) {
        case LossKind::rm_softmax: return rm_softmax_loss(scores, row, *spec.tau);
        case LossKind::rm_classification: {
            const auto t_star = static_cast<Eigen::Index>(argmax_lowest(Vector(row)));
            return -std::max(log_softmax_temp(scores, 1.0)(t_star), std::log(kProbabilityFloor));
        }
        case LossKind::cf_regression: return cf_regression_loss(scores, row);
    }
    throw ConfigError("unknown loss");
}

}  // namespace rr
