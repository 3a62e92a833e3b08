// core_types.hpp
//
// Data model for cost-aware routing: queries, treatments (candidate models),
// full-feedback and observational records, the utility y = a - lambda * c,
// the softmax-of-accuracy logging policy and deterministic dataset splits.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace rr {

// Errors are grouped by the CLI exit code they map to.
struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

using FeatureVector = std::vector<double>;
using TreatmentId = std::size_t;

/// Willingness-to-pay: how many utility units one unit of cost is worth.
class CostSensitivity {
public:
    constexpr CostSensitivity() = default;
    explicit CostSensitivity(double lambda) : lambda_(lambda) {
        if (!std::isfinite(lambda) || lambda < 0.0)
            throw ConfigError("cost sensitivity must be finite and >= 0, got " + std::to_string(lambda));
    }
    constexpr double value() const { return lambda_; }
    friend constexpr bool operator==(CostSensitivity, CostSensitivity) = default;

private:
    double lambda_ = 0.0;
};

struct FullFeedbackRecord {
    FeatureVector x;
    std::vector<double> accuracy;  // a_x(t) for every treatment
    std::vector<double> cost;      // c_x(t) for every treatment
    std::size_t treatments() const { return accuracy.size(); }
};

struct ObservationalSample {
    FeatureVector x;
    TreatmentId t = 0;
    double a = 0.0;
    double c = 0.0;
};

enum class Split : std::uint8_t { train, validation, test };

inline const char* to_string(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::validation: return "validation";
        case Split::test: return "test";
    }
    return "?";
}

struct Dataset {
    std::vector<ObservationalSample> samples;
    std::size_t d = 0;
    std::size_t T = 0;
    std::vector<Split> split;  // one tag per sample; defaults to train

    std::size_t size() const { return samples.size(); }

    std::vector<std::size_t> indices(Split s) const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < samples.size(); ++i)
            if (split.at(i) == s) out.push_back(i);
        return out;
    }

    /// Column-major feature block (d x |rows|) for the given sample rows.
    Matrix features(const std::vector<std::size_t>& rows) const {
        Matrix X(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(rows.size()));
        for (std::size_t j = 0; j < rows.size(); ++j) {
            const auto& x = samples[rows[j]].x;
            for (std::size_t k = 0; k < d; ++k) X(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j)) = x[k];
        }
        return X;
    }

    Matrix features() const {
        std::vector<std::size_t> all(samples.size());
        std::iota(all.begin(), all.end(), std::size_t{0});
        return features(all);
    }

    /// Throws DataError unless every sample agrees on d and T.
    void validate() const {
        if (T < 2) throw DataError("dataset needs at least two treatments");
        if (d == 0) throw DataError("dataset feature dimension must be positive");
        if (split.size() != samples.size()) throw DataError("split tags do not cover every sample");
        for (const auto& s : samples) {
            if (s.x.size() != d) throw DataError("sample feature dimension mismatch");
            if (s.t >= T) throw DataError("treatment index out of range");
            if (!std::isfinite(s.a) || !std::isfinite(s.c) || s.c < 0.0)
                throw DataError("sample outcome must be finite with non-negative cost");
            for (double v : s.x)
                if (!std::isfinite(v)) throw DataError("non-finite feature value");
        }
    }
};

/// Estimated potential utilities, one row per sample and one column per
/// treatment, under a fixed cost sensitivity.
struct UtilityMatrix {
    Matrix values;  // n x T
    CostSensitivity lambda;

    std::size_t rows() const { return static_cast<std::size_t>(values.rows()); }
    std::size_t treatments() const { return static_cast<std::size_t>(values.cols()); }

    /// Rows restricted to the given sample indices, in order.
    UtilityMatrix subset(const std::vector<std::size_t>& rows_idx) const {
        UtilityMatrix out{Matrix(static_cast<Eigen::Index>(rows_idx.size()), values.cols()), lambda};
        for (std::size_t k = 0; k < rows_idx.size(); ++k)
            out.values.row(static_cast<Eigen::Index>(k)) = values.row(static_cast<Eigen::Index>(rows_idx[k]));
        return out;
    }
};

inline double utility(double a, double c, CostSensitivity lambda) {
    if (!std::isfinite(a) || !std::isfinite(c)) throw DataError("utility: non-finite input");
    if (c < 0.0) throw DataError("utility: negative cost");
    return a - lambda.value() * c;
}

inline void validate_records(const std::vector<FullFeedbackRecord>& records) {
    if (records.empty()) throw DataError("no full-feedback records");
    const std::size_t T = records.front().treatments();
    const std::size_t d = records.front().x.size();
    if (T < 2) throw DataError("full-feedback records need at least two treatments");
    if (d == 0) throw DataError("full-feedback records need a non-empty embedding");
    for (const auto& r : records) {
        if (r.accuracy.size() != T || r.cost.size() != T) throw DataError("inconsistent treatment count across records");
        if (r.x.size() != d) throw DataError("inconsistent feature dimension across records");
        for (std::size_t t = 0; t < T; ++t)
            if (!std::isfinite(r.accuracy[t]) || !std::isfinite(r.cost[t]) || r.cost[t] < 0.0)
                throw DataError("record outcomes must be finite with non-negative costs");
    }
}

/// P[t] = exp(a_t) / sum_t' exp(a_t'), shifted by max for stability.
inline std::vector<double> softmax_accuracy_logging(const std::vector<double>& accuracy) {
    const double m = *std::max_element(accuracy.begin(), accuracy.end());
    std::vector<double> p(accuracy.size());
    double z = 0.0;
    for (std::size_t t = 0; t < p.size(); ++t) z += p[t] = std::exp(accuracy[t] - m);
    for (double& v : p) v /= z;
    return p;
}

// Random variates are derived from raw engine output so that seeded runs are
// reproducible across standard library implementations.
inline double uniform01(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double standard_normal(std::mt19937_64& rng) {
    const double u1 = 1.0 - uniform01(rng);  // (0, 1]
    const double u2 = uniform01(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

/// Inverse-CDF draw from a discrete distribution using one uniform variate.
inline TreatmentId sample_discrete(const std::vector<double>& p, std::mt19937_64& rng) {
    const double u = uniform01(rng);
    double acc = 0.0;
    for (std::size_t t = 0; t + 1 < p.size(); ++t) {
        acc += p[t];
        if (u < acc) return t;
    }
    return p.size() - 1;
}

/// Convert full-feedback records to a single-treatment-per-query log under the
/// softmax-of-accuracy logging policy. Every sample starts in the train split.
inline Dataset make_observational(const std::vector<FullFeedbackRecord>& records, std::uint64_t seed) {
    validate_records(records);
    Dataset ds;
    ds.d = records.front().x.size();
    ds.T = records.front().treatments();
    ds.samples.reserve(records.size());
    std::mt19937_64 rng(seed);
    for (const auto& r : records) {
        const TreatmentId t = sample_discrete(softmax_accuracy_logging(r.accuracy), rng);
        ds.samples.push_back({r.x, t, r.accuracy[t], r.cost[t]});
    }
    ds.split.assign(ds.samples.size(), Split::train);
    return ds;
}

struct SplitFractions {
    double train = 0.8;
    double validation = 0.1;
    double test = 0.1;
};

struct SplitSizes {
    std::size_t train = 0, validation = 0, test = 0;
};

/// floor(fraction * n) for validation and test; the remainder goes to train.
inline SplitSizes split_sizes(std::size_t n, SplitFractions f) {
    if (!(f.train > 0.0 && f.validation > 0.0 && f.test > 0.0))
        throw ConfigError("split fractions must be positive");
    if (std::abs(f.train + f.validation + f.test - 1.0) > 1e-9)
        throw ConfigError("split fractions must sum to 1");
    SplitSizes s;
    s.validation = static_cast<std::size_t>(std::floor(f.validation * static_cast<double>(n)));
    s.test = static_cast<std::size_t>(std::floor(f.test * static_cast<double>(n)));
    s.train = n - s.validation - s.test;
    return s;
}

/// Seeded random permutation, then the first block is train, the next
/// validation, the rest test.
inline Dataset split_dataset(Dataset ds, SplitFractions f, std::uint64_t seed) {
    const std::size_t n = ds.samples.size();
    const SplitSizes sizes = split_sizes(n, f);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    // Fisher-Yates with an explicit draw so the permutation does not depend on
    // the standard library's shuffle implementation.
    for (std::size_t i = n; i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng() % i);
        std::swap(order[i - 1], order[j]);
    }
    ds.split.assign(n, Split::train);
    for (std::size_t k = 0; k < n; ++k) {
        if (k < sizes.train) ds.split[order[k]] = Split::train;
        else if (k < sizes.train + sizes.validation) ds.split[order[k]] = Split::validation;
        else ds.split[order[k]] = Split::test;
    }
    return ds;
}

/// Lowest-index maximizer of a finite range.
template <typename Range>
TreatmentId argmax_lowest(const Range& values) {
    TreatmentId best = 0;
    std::size_t i = 0;
    double best_v = 0.0;
    for (const auto v : values) {
        if (i == 0 || v > best_v) {
            best = i;
            best_v = v;
        }
        ++i;
    }
    return best;
}

inline TreatmentId argmax_lowest(const Vector& v) {
    TreatmentId best = 0;
    for (Eigen::Index t = 1; t < v.size(); ++t)
        if (v(t) > v(static_cast<Eigen::Index>(best))) best = static_cast<TreatmentId>(t);
    return best;
}

}  // namespace rr
