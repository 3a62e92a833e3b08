// activations.hpp
#pragma once

#include <cmath>
#include <vector>

#include "core_types.hpp"

namespace rr {

namespace detail {
inline constexpr double kGeluScale = 0.7978845608028654;  // sqrt(2 / pi)
inline constexpr double kGeluCubic = 0.044715;
}  // namespace detail

/// tanh approximation of GELU.
inline double gelu(double x) {
    using namespace detail;
    return 0.5 * x * (1.0 + std::tanh(kGeluScale * (x + kGeluCubic * x * x * x)));
}

inline double gelu_derivative(double x) {
    using namespace detail;
    const double th = std::tanh(kGeluScale * (x + kGeluCubic * x * x * x));
    return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * kGeluScale * (1.0 + 3.0 * kGeluCubic * x * x);
}

/// p_t = exp(tau z_t - m) / sum_j exp(tau z_j - m), m = max_j tau z_j.
inline Vector softmax_temp(const Eigen::Ref<const Vector>& scores, double tau) {
    if (!(tau > 0.0)) throw ConfigError("softmax temperature must be positive");
    const Vector scaled = tau * scores;
    const double m = scaled.maxCoeff();
    Vector p = (scaled.array() - m).exp().matrix();
    return p / p.sum();
}

inline std::vector<double> softmax_temp(const std::vector<double>& scores, double tau) {
    const Vector p = softmax_temp(Eigen::Map<const Vector>(scores.data(), static_cast<Eigen::Index>(scores.size())), tau);
    return {p.data(), p.data() + p.size()};
}

/// log of softmax_temp, computed without forming the probabilities.
inline Vector log_softmax_temp(const Eigen::Ref<const Vector>& scores, double tau) {
    const Vector scaled = tau * scores;
    const double m = scaled.maxCoeff();
    const double lse = m + std::log((scaled.array() - m).exp().sum());
    return (scaled.array() - lse).matrix();
}

}  // namespace rr
