#include <gtest/gtest.h>

#include <limits>
#include <set>

#include "test_util.hpp"

using namespace rr;

TEST(Utility, Examples) {
    EXPECT_NEAR(utility(0.8, 0.001, CostSensitivity(100)), 0.7, 1e-15);
    EXPECT_EQ(utility(0.5, 0.3, CostSensitivity(0)), 0.5);
    EXPECT_EQ(utility(0.0, 0.0, CostSensitivity(1000)), 0.0);
}

TEST(Utility, RejectsBadInputs) {
    const double inf = std::numeric_limits<double>::infinity();
    EXPECT_THROW(utility(inf, 0.0, CostSensitivity(1)), DataError);
    EXPECT_THROW(utility(0.5, std::nan(""), CostSensitivity(1)), DataError);
    EXPECT_THROW((void)CostSensitivity(-1.0), ConfigError);
    EXPECT_THROW((void)CostSensitivity(inf), ConfigError);
}

TEST(Utility, AffineInLambda) {
    std::mt19937_64 rng(3);
    for (int k = 0; k < 1000; ++k) {
        const double a = uniform01(rng), c = uniform01(rng) * 1e-2;
        const double l1 = 1000 * uniform01(rng), l2 = 1000 * uniform01(rng), al = uniform01(rng);
        const double l = al * l1 + (1 - al) * l2;
        const double lhs = utility(a, c, CostSensitivity(l));
        const double rhs = al * utility(a, c, CostSensitivity(l1)) + (1 - al) * utility(a, c, CostSensitivity(l2));
        EXPECT_NEAR(lhs, rhs, 1e-12);
    }
}

TEST(Logging, ClosedForms) {
    const auto p = softmax_accuracy_logging({0.0, 0.0});
    EXPECT_DOUBLE_EQ(p[0], 0.5);
    const auto q = softmax_accuracy_logging({1.0, 0.0});
    EXPECT_NEAR(q[0], std::exp(1.0) / (std::exp(1.0) + 1.0), 1e-15);
    EXPECT_NEAR(q[0], 0.7311, 1e-4);
    const auto r = softmax_accuracy_logging({0.2, 0.9, 0.4, 0.0});
    for (double v : r) EXPECT_GT(v, 0.0);
}

TEST(MakeObservational, MonteCarloFrequency) {
    std::vector<FullFeedbackRecord> recs(10000, FullFeedbackRecord{{0.5}, {1.0, 0.0}, {0.01, 0.02}});
    const Dataset ds = make_observational(recs, 42);
    std::size_t zeros = 0;
    for (const auto& s : ds.samples) zeros += s.t == 0;
    EXPECT_NEAR(static_cast<double>(zeros) / 10000.0, 0.7311, 0.02);
}

TEST(MakeObservational, PreservesRecordsAndIsSeeded) {
    std::mt19937_64 rng(5);
    std::vector<FullFeedbackRecord> recs;
    for (int i = 0; i < 200; ++i) recs.push_back(fixtures::random_record(3, 4, rng));
    const Dataset a = make_observational(recs, 9), b = make_observational(recs, 9);
    ASSERT_EQ(a.size(), recs.size());
    EXPECT_EQ(a.T, 4u);
    EXPECT_EQ(a.d, 3u);
    std::set<TreatmentId> seen;
    for (std::size_t i = 0; i < recs.size(); ++i) {
        const auto& s = a.samples[i];
        EXPECT_EQ(s.x, recs[i].x);
        EXPECT_EQ(s.a, recs[i].accuracy[s.t]);
        EXPECT_EQ(s.c, recs[i].cost[s.t]);
        EXPECT_EQ(s.t, b.samples[i].t);
        seen.insert(s.t);
    }
    EXPECT_EQ(seen.size(), 4u);
}

TEST(MakeObservational, Errors) {
    EXPECT_THROW(make_observational({}, 1), DataError);
    std::vector<FullFeedbackRecord> bad{{{0.0}, {0.1, 0.2}, {0.0, 0.0}}, {{0.0}, {0.1, 0.2, 0.3}, {0.0, 0.0, 0.0}}};
    EXPECT_THROW(make_observational(bad, 1), DataError);
}

TEST(Split, SmallExample) {
    const auto s = split_sizes(10, {});
    EXPECT_EQ(s.train, 8u);
    EXPECT_EQ(s.validation, 1u);
    EXPECT_EQ(s.test, 1u);
}

TEST(Split, LargeExampleMatchesFloorRule) {
    const std::size_t n = 44241;
    // independent recomputation in integer arithmetic: floor(n/10)
    const std::size_t tenth = n / 10;
    const auto s = split_sizes(n, {0.8, 0.1, 0.1});
    EXPECT_EQ(s.validation, tenth);
    EXPECT_EQ(s.test, tenth);
    EXPECT_EQ(s.train, n - 2 * tenth);
    EXPECT_EQ(s.train, 35393u);
}

TEST(Split, TagsDeterministicAndCounted) {
    std::vector<FullFeedbackRecord> recs(1000, FullFeedbackRecord{{0.0}, {0.5, 0.5}, {0.0, 0.0}});
    const Dataset base = make_observational(recs, 1);
    const Dataset a = split_dataset(base, {}, 7), b = split_dataset(base, {}, 7), c = split_dataset(base, {}, 8);
    EXPECT_EQ(a.split, b.split);
    EXPECT_NE(a.split, c.split);
    EXPECT_EQ(a.indices(Split::train).size(), 800u);
    EXPECT_EQ(a.indices(Split::validation).size(), 100u);
    EXPECT_EQ(a.indices(Split::test).size(), 100u);
}

TEST(Split, FractionErrors) {
    EXPECT_THROW(split_sizes(10, {0.8, 0.1, 0.2}), ConfigError);
    EXPECT_THROW(split_sizes(10, {1.0, 0.0, 0.0}), ConfigError);
    EXPECT_NO_THROW(split_sizes(10, {0.7, 0.2, 0.1}));
}

TEST(Dataset, FeaturesLayout) {
    Dataset ds;
    ds.d = 2;
    ds.T = 2;
    ds.samples = {{{1.0, 2.0}, 0, 0.5, 0.0}, {{3.0, 4.0}, 1, 0.5, 0.0}};
    ds.split = {Split::train, Split::test};
    ds.validate();
    const Matrix X = ds.features();
    EXPECT_EQ(X.rows(), 2);
    EXPECT_EQ(X(0, 1), 3.0);
    EXPECT_EQ(X(1, 0), 2.0);
    ds.samples[1].t = 2;
    EXPECT_THROW(ds.validate(), DataError);
}

TEST(Argmax, LowestIndexTieBreak) {
    EXPECT_EQ(argmax_lowest(std::vector<double>{0.5, 0.5}), 0u);
    EXPECT_EQ(argmax_lowest(std::vector<double>{0.1, 0.9, 0.9}), 1u);
}
