#include <gtest/gtest.h>

#include <filesystem>

#include "test_util.hpp"

using namespace rr;

namespace {

// E[f(z)] for z ~ N(mu, sd^2) by trapezoid quadrature.
template <typename F>
double gaussian_expectation(F f, double mu, double sd) {
    if (sd == 0.0) return f(mu);
    const int n = 40001;
    const double lo = -12.0, hi = 12.0, h = (hi - lo) / (n - 1);
    double s = 0.0;
    for (int k = 0; k < n; ++k) {
        const double u = lo + h * k;
        const double wgt = (k == 0 || k == n - 1) ? 0.5 : 1.0;
        s += wgt * f(mu + sd * u) * std::exp(-0.5 * u * u);
    }
    return s * h / std::sqrt(2.0 * M_PI);
}

SyntheticWorld symmetric_world() {
    WorldSpec spec;
    spec.T = 3;
    SyntheticWorld w = make_world(spec);
    w.W.setZero();
    w.V.setZero();
    w.b.setConstant(0.2);
    w.cost_scale.setConstant(1e-3);
    return w;
}

}  // namespace

TEST(World, Invariants) {
    for (auto kind : {LoggingKind::uniform, LoggingKind::softmax_accuracy, LoggingKind::adversarial}) {
        WorldSpec spec;
        spec.T = 5;
        spec.logging = kind;
        const SyntheticWorld w = make_world(spec);
        std::mt19937_64 rng(1);
        for (int i = 0; i < 200; ++i) {
            const auto x = w.draw_x(rng);
            const auto a = w.accuracy(x), c = w.cost(x), p = w.logging_probabilities(x);
            double sum = 0.0;
            for (std::size_t t = 0; t < w.T; ++t) {
                EXPECT_GT(a[t], 0.0);
                EXPECT_LT(a[t], 1.0);
                EXPECT_GE(c[t], 0.0);
                EXPECT_GE(p[t], kind == LoggingKind::adversarial ? kAdversarialFloor - 1e-15 : 1e-12);
                sum += p[t];
            }
            EXPECT_NEAR(sum, 1.0, 1e-12);
        }
    }
}

TEST(World, AdversarialFavoursWorseModels) {
    WorldSpec spec;
    spec.logging = LoggingKind::adversarial;
    spec.T = 4;
    const SyntheticWorld w = make_world(spec);
    std::mt19937_64 rng(2);
    const auto x = w.draw_x(rng);
    const auto a = w.accuracy(x), p = w.logging_probabilities(x);
    const auto best = argmax_lowest(a);
    EXPECT_NEAR(p[best], kAdversarialFloor, 1e-15);
    for (std::size_t s = 0; s < 4; ++s)
        for (std::size_t t = 0; t < 4; ++t) {
            if (a[s] < a[t]) EXPECT_GT(p[s], p[t]);
        }
}

TEST(Generate, SingleRecordUniform) {
    WorldSpec spec;
    spec.logging = LoggingKind::uniform;
    const SyntheticWorld w = make_world(spec);
    const auto g = generate(w, 1, 3);
    ASSERT_EQ(g.records.size(), 1u);
    ASSERT_EQ(g.observational.size(), 1u);
    EXPECT_LT(g.observational.samples[0].t, w.T);
    EXPECT_THROW(generate(w, 0, 3), ConfigError);
}

TEST(Generate, DeterministicAndConsistent) {
    const SyntheticWorld w = make_world({});
    const auto a = generate(w, 300, 11), b = generate(w, 300, 11);
    for (std::size_t i = 0; i < 300; ++i) {
        EXPECT_EQ(a.records[i].x, b.records[i].x);
        EXPECT_EQ(a.observational.samples[i].t, b.observational.samples[i].t);
        EXPECT_EQ(a.observational.samples[i].a, b.observational.samples[i].a);
        const auto& s = a.observational.samples[i];
        EXPECT_EQ(s.x, a.records[i].x);
        EXPECT_EQ(s.c, a.records[i].cost[s.t]);
        EXPECT_GE(s.a, 0.0);
        EXPECT_LE(s.a, 1.0);
        EXPECT_EQ(a.records[i].accuracy, w.accuracy(s.x));
    }
}

TEST(Generate, NoiselessModeLogsExactAccuracy) {
    WorldSpec spec;
    spec.noise_sigma = 0.0;
    const SyntheticWorld w = make_world(spec);
    const auto g = generate(w, 100, 4);
    for (std::size_t i = 0; i < 100; ++i) EXPECT_EQ(g.observational.samples[i].a, g.records[i].accuracy[g.observational.samples[i].t]);
}

TEST(Generate, MeanUtilityMatchesQuadrature) {
    WorldSpec spec;
    spec.d = 6;
    spec.T = 3;
    spec.seed = 9;
    const SyntheticWorld w = make_world(spec);
    const CostSensitivity lambda(300);
    const auto g = generate(w, 100000, 10);
    for (std::size_t t = 0; t < w.T; ++t) {
        const auto r = static_cast<Eigen::Index>(t);
        // <w_t, x> + b_t ~ N(b_t, |w_t|^2) for x ~ N(0, I)
        const double acc = gaussian_expectation([](double z) { return 1.0 / (1.0 + std::exp(-z)); }, w.b(r), w.W.row(r).norm());
        const double sp = gaussian_expectation([](double z) { return std::log1p(std::exp(z)); }, 0.0, w.V.row(r).norm());
        const double truth = acc - lambda.value() * sp * w.cost_scale(r);
        double mc = 0.0;
        for (const auto& rec : g.records) mc += utility(rec.accuracy[t], rec.cost[t], lambda);
        mc /= static_cast<double>(g.records.size());
        EXPECT_LT(std::abs(mc - truth) / std::abs(truth), 0.005) << "t=" << t;
    }
}

TEST(Noise, ExpectedObservedAccuracyClosedForm) {
    WorldSpec spec;
    spec.noise_sigma = 0.05;
    const SyntheticWorld w = make_world(spec);
    for (double a : {0.01, 0.3, 0.97}) {
        const double quad = gaussian_expectation([](double z) { return std::clamp(z, 0.0, 1.0); }, a, 0.05);
        EXPECT_NEAR(w.expected_observed_accuracy(a), quad, 1e-8);
    }
}

TEST(TrueOptimal, SymmetricWorldPicksZero) {
    const SyntheticWorld w = symmetric_world();
    std::mt19937_64 rng(5);
    for (int i = 0; i < 20; ++i) EXPECT_EQ(true_optimal_policy(w, w.draw_x(rng), CostSensitivity(500)), 0u);
    const auto g = generate(w, 50, 1);
    const UtilityMatrix um = true_utility_matrix(g.records, CostSensitivity(500));
    std::vector<TreatmentId> any;
    for (std::size_t i = 0; i < 50; ++i) any.push_back(i % 3);
    EXPECT_EQ(empirical_regret(any, um), 0.0);
}

TEST(TrueOptimal, BruteForceAndLambdaZero) {
    const SyntheticWorld w = make_world({});
    std::mt19937_64 rng(6);
    for (int i = 0; i < 200; ++i) {
        const auto x = w.draw_x(rng);
        const double lv = 2000.0 * uniform01(rng);
        const auto a = w.accuracy(x), c = w.cost(x);
        std::size_t best = 0;
        for (std::size_t t = 1; t < w.T; ++t)
            if (a[t] - lv * c[t] > a[best] - lv * c[best]) best = t;
        EXPECT_EQ(true_optimal_policy(w, x, CostSensitivity(lv)), best);
        EXPECT_EQ(true_optimal_policy(w, x, CostSensitivity(0)), argmax_lowest(a));
    }
}

TEST(World, JsonRoundTrip) {
    WorldSpec spec;
    spec.logging = LoggingKind::adversarial;
    spec.noise_sigma = 0.0;
    const SyntheticWorld w = make_world(spec);
    const auto path = (std::filesystem::temp_directory_path() / "rr_world_test.json").string();
    save_world(path, w);
    const SyntheticWorld v = load_world(path);
    std::filesystem::remove(path);
    EXPECT_EQ(v.W, w.W);
    EXPECT_EQ(v.V, w.V);
    EXPECT_EQ(v.b, w.b);
    EXPECT_EQ(v.cost_scale, w.cost_scale);
    EXPECT_EQ(v.logging, w.logging);
    EXPECT_EQ(v.noise_sigma, 0.0);
    EXPECT_EQ(parse_logging_kind("uniform"), LoggingKind::uniform);
    EXPECT_THROW(parse_logging_kind("greedy"), ConfigError);
}
