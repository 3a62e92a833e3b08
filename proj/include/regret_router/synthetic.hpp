// synthetic.hpp
//
// A world with known potential outcomes:
//   a_t(x) = sigmoid(<w_t, x> + b_t),  c_t(x) = softplus(<v_t, x>) * scale_t,
// x ~ N(0, I_d), and treatment drawn from a logging policy that depends on x
// only, so ignorability holds by construction.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "core_types.hpp"
#include "io.hpp"
#include "counterfactual.hpp"

namespace rr {

enum class LoggingKind { uniform, softmax_accuracy, adversarial };

inline const char* to_string(LoggingKind k) {
    switch (k) {
        case LoggingKind::uniform: return "uniform";
        case LoggingKind::softmax_accuracy: return "softmax_accuracy";
        case LoggingKind::adversarial: return "adversarial";
    }
    return "?";
}

inline LoggingKind parse_logging_kind(std::string_view s) {
    if (s == "uniform") return LoggingKind::uniform;
    if (s == "softmax_accuracy") return LoggingKind::softmax_accuracy;
    if (s == "adversarial") return LoggingKind::adversarial;
    throw ConfigError("unknown logging policy '" + std::string(s) + "'");
}

/// Knobs for drawing a random world.
struct WorldSpec {
    std::size_t d = 8;
    std::size_t T = 4;
    LoggingKind logging = LoggingKind::softmax_accuracy;
    double weight_scale = 1.5;    // std of <w_t, x>
    double bias_spread = 1.0;     // b_t ramps over [-spread/2, spread/2]
    double cost_weight_scale = 0.5;
    double min_cost_scale = 1e-4;
    double max_cost_scale = 1e-3;
    double noise_sigma = 0.05;    // 0 for noiseless observations
    std::uint64_t seed = 1;
};

inline constexpr double kAdversarialFloor = 0.02;

struct SyntheticWorld {
    std::size_t d = 0;
    std::size_t T = 0;
    Matrix W;  // T x d accuracy weights
    Vector b;
    Matrix V;  // T x d cost weights
    Vector cost_scale;
    LoggingKind logging = LoggingKind::softmax_accuracy;
    double noise_sigma = 0.05;
    std::uint64_t seed = 1;

    std::vector<double> accuracy(const FeatureVector& x) const {
        std::vector<double> a(T);
        for (std::size_t t = 0; t < T; ++t) a[t] = 1.0 / (1.0 + std::exp(-(dot(W, t, x) + b(static_cast<Eigen::Index>(t)))));
        return a;
    }

    std::vector<double> cost(const FeatureVector& x) const {
        std::vector<double> c(T);
        for (std::size_t t = 0; t < T; ++t) {
            const double z = dot(V, t, x);
            const double softplus = z > 30.0 ? z : std::log1p(std::exp(z));
            c[t] = softplus * cost_scale(static_cast<Eigen::Index>(t));
        }
        return c;
    }

    std::vector<double> true_utilities(const FeatureVector& x, CostSensitivity lambda) const {
        const auto a = accuracy(x);
        const auto c = cost(x);
        std::vector<double> y(T);
        for (std::size_t t = 0; t < T; ++t) y[t] = utility(a[t], c[t], lambda);
        return y;
    }

    std::vector<double> logging_probabilities(const FeatureVector& x) const {
        switch (logging) {
            case LoggingKind::uniform: return std::vector<double>(T, 1.0 / static_cast<double>(T));
            case LoggingKind::softmax_accuracy: return softmax_accuracy_logging(accuracy(x));
            case LoggingKind::adversarial: {
                // rank 0 = most accurate; probability grows with rank and the
                // best treatment keeps only the floor
                const auto a = accuracy(x);
                std::vector<std::size_t> order(T);
                std::iota(order.begin(), order.end(), std::size_t{0});
                std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return a[i] > a[j]; });
                const double rank_sum = static_cast<double>(T * (T - 1)) / 2.0;
                std::vector<double> p(T);
                for (std::size_t r = 0; r < T; ++r)
                    p[order[r]] = kAdversarialFloor + (1.0 - static_cast<double>(T) * kAdversarialFloor) * static_cast<double>(r) / rank_sum;
                return p;
            }
        }
        return {};
    }

    /// E[observed accuracy]: the noisy observation is clip(a + sigma Z, 0, 1).
    double expected_observed_accuracy(double a) const {
        if (noise_sigma <= 0.0) return a;
        const double s = noise_sigma;
        const double alpha = -a / s, beta = (1.0 - a) / s;
        auto Phi = [](double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); };
        auto phi = [](double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * 3.14159265358979323846); };
        return (1.0 - Phi(beta)) + a * (Phi(beta) - Phi(alpha)) + s * (phi(alpha) - phi(beta));
    }

    FeatureVector draw_x(std::mt19937_64& rng) const {
        FeatureVector x(d);
        for (auto& v : x) v = standard_normal(rng);
        return x;
    }

private:
    static double dot(const Matrix& M, std::size_t t, const FeatureVector& x) {
        double s = 0.0;
        for (std::size_t k = 0; k < x.size(); ++k) s += M(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(k)) * x[k];
        return s;
    }
};

inline SyntheticWorld make_world(const WorldSpec& spec) {
    if (spec.d == 0 || spec.T < 2) throw ConfigError("world needs d >= 1 and T >= 2");
    if (!(spec.min_cost_scale > 0.0) || spec.max_cost_scale < spec.min_cost_scale) throw ConfigError("invalid cost scale range");
    SyntheticWorld w;
    w.d = spec.d;
    w.T = spec.T;
    w.logging = spec.logging;
    w.noise_sigma = spec.noise_sigma;
    w.seed = spec.seed;
    const auto T = static_cast<Eigen::Index>(spec.T), D = static_cast<Eigen::Index>(spec.d);
    std::mt19937_64 rng(spec.seed);
    const double ws = spec.weight_scale / std::sqrt(static_cast<double>(spec.d));
    const double vs = spec.cost_weight_scale / std::sqrt(static_cast<double>(spec.d));
    w.W.resize(T, D);
    w.V.resize(T, D);
    w.b.resize(T);
    w.cost_scale.resize(T);
    for (Eigen::Index t = 0; t < T; ++t) {
        for (Eigen::Index k = 0; k < D; ++k) w.W(t, k) = ws * standard_normal(rng);
        for (Eigen::Index k = 0; k < D; ++k) w.V(t, k) = vs * standard_normal(rng);
        const double frac = static_cast<double>(t) / static_cast<double>(T - 1);
        // more accurate treatments are the more expensive ones
        w.b(t) = spec.bias_spread * (frac - 0.5);
        w.cost_scale(t) = spec.min_cost_scale * std::pow(spec.max_cost_scale / spec.min_cost_scale, frac);
    }
    return w;
}

struct GeneratedData {
    std::vector<FullFeedbackRecord> records;
    Dataset observational;
};

/// Fresh log over fixed records: one treatment per record from the world's
/// logging policy, with observation noise on the logged accuracy.
inline Dataset observe(const SyntheticWorld& w, const std::vector<FullFeedbackRecord>& records, std::uint64_t seed) {
    validate_records(records);
    Dataset ds;
    ds.d = w.d;
    ds.T = w.T;
    ds.samples.reserve(records.size());
    std::mt19937_64 rng(seed);
    for (const auto& r : records) {
        if (r.x.size() != w.d || r.treatments() != w.T) throw DataError("observe: record shape does not match the world");
        const TreatmentId t = sample_discrete(w.logging_probabilities(r.x), rng);
        double a = r.accuracy[t];
        if (w.noise_sigma > 0.0) a = std::clamp(a + w.noise_sigma * standard_normal(rng), 0.0, 1.0);
        ds.samples.push_back({r.x, t, a, r.cost[t]});
    }
    ds.split.assign(records.size(), Split::train);
    return ds;
}

/// n records with exact outcomes plus the matching log under the world's
/// logging policy. Logged accuracy carries the observation noise.
inline GeneratedData generate(const SyntheticWorld& w, std::size_t n, std::uint64_t seed) {
    if (n == 0) throw ConfigError("generate: n must be >= 1");
    GeneratedData g;
    g.records.reserve(n);
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i < n; ++i) {
        FullFeedbackRecord r{w.draw_x(rng), {}, {}};
        r.accuracy = w.accuracy(r.x);
        r.cost = w.cost(r.x);
        g.records.push_back(std::move(r));
    }
    g.observational = observe(w, g.records, seed ^ 0xA5A5A5A55A5A5A5AULL);
    return g;
}

inline TreatmentId true_optimal_policy(const SyntheticWorld& w, const FeatureVector& x, CostSensitivity lambda) {
    return argmax_lowest(w.true_utilities(x, lambda));
}

/// Logging probabilities of the world as a propensity model.
inline PropensityModel true_propensity_model(const SyntheticWorld& w) {
    return PropensityModel::from_function(w.T, [w](const Matrix& X) {
        Matrix P(static_cast<Eigen::Index>(w.T), X.cols());
        for (Eigen::Index j = 0; j < X.cols(); ++j) {
            const FeatureVector x(X.col(j).data(), X.col(j).data() + X.rows());
            const auto p = w.logging_probabilities(x);
            for (std::size_t t = 0; t < w.T; ++t) P(static_cast<Eigen::Index>(t), j) = p[t];
        }
        return P;
    });
}

/// E[y | x, t] of the logged utility, as an outcome model.
inline OutcomeModel true_outcome_model(const SyntheticWorld& w, CostSensitivity lambda) {
    return OutcomeModel::from_function(w.T, [w, lambda](const Matrix& X) {
        Matrix R(static_cast<Eigen::Index>(w.T), X.cols());
        for (Eigen::Index j = 0; j < X.cols(); ++j) {
            const FeatureVector x(X.col(j).data(), X.col(j).data() + X.rows());
            const auto a = w.accuracy(x);
            const auto c = w.cost(x);
            for (std::size_t t = 0; t < w.T; ++t)
                R(static_cast<Eigen::Index>(t), j) = w.expected_observed_accuracy(a[t]) - lambda.value() * c[t];
        }
        return R;
    });
}

/// Monte Carlo estimate of E_X[E[y | X, t]] per treatment.
inline std::vector<double> monte_carlo_mean_utility(const SyntheticWorld& w, CostSensitivity lambda, std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<double> sum(w.T, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const auto x = w.draw_x(rng);
        const auto a = w.accuracy(x);
        const auto c = w.cost(x);
        for (std::size_t t = 0; t < w.T; ++t) sum[t] += w.expected_observed_accuracy(a[t]) - lambda.value() * c[t];
    }
    for (auto& s : sum) s /= static_cast<double>(n);
    return sum;
}

// ---------------------------------------------------------------------------
// Serialization

namespace detail {
inline std::vector<double> flat(const Matrix& M) { return {M.data(), M.data() + M.size()}; }
inline Matrix unflat(const std::vector<double>& v, std::size_t rows, std::size_t cols) {
    if (v.size() != rows * cols) throw DataError("world file: array has wrong length");
    return Eigen::Map<const Matrix>(v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}
}  // namespace detail

inline nlohmann::json world_to_json(const SyntheticWorld& w) {
    return {{"format", "regret_router.world"}, {"version", 1}, {"d", w.d}, {"T", w.T},
            {"logging", to_string(w.logging)}, {"noise_sigma", w.noise_sigma}, {"seed", w.seed},
            {"W", detail::flat(w.W)}, {"b", detail::flat(w.b)}, {"V", detail::flat(w.V)},
            {"cost_scale", detail::flat(w.cost_scale)}};
}

inline SyntheticWorld world_from_json(const nlohmann::json& j) {
    if (j.value("format", "") != "regret_router.world") throw DataError("not a world file");
    SyntheticWorld w;
    w.d = j.at("d").get<std::size_t>();
    w.T = j.at("T").get<std::size_t>();
    if (w.d == 0 || w.T < 2) throw DataError("world file: invalid dimensions");
    w.logging = parse_logging_kind(j.at("logging").get<std::string>());
    w.noise_sigma = j.at("noise_sigma").get<double>();
    w.seed = j.at("seed").get<std::uint64_t>();
    w.W = detail::unflat(j.at("W").get<std::vector<double>>(), w.T, w.d);
    w.b = detail::unflat(j.at("b").get<std::vector<double>>(), w.T, 1);
    w.V = detail::unflat(j.at("V").get<std::vector<double>>(), w.T, w.d);
    w.cost_scale = detail::unflat(j.at("cost_scale").get<std::vector<double>>(), w.T, 1);
    return w;
}

inline void save_world(const std::string& path, const SyntheticWorld& w) {
    write_file_atomic(path, world_to_json(w).dump(1) + '\n');
}

inline SyntheticWorld load_world(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot read world file " + path);
    try {
        return world_from_json(nlohmann::json::parse(is));
    } catch (const nlohmann::json::exception& e) {
        throw DataError("malformed world file " + path + ": " + e.what());
    }
}

}  // namespace rr
