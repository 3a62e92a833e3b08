#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>

#include "test_util.hpp"

using namespace rr;
namespace fs = std::filesystem;

namespace {

int run(const std::string& args) {
    const std::string cmd = std::string(RROUTER_BIN) + " " + args + " 2>/dev/null";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

class CliTest : public ::testing::Test {
protected:
    void SetUp() override {
        root_ = fs::temp_directory_path() / ("rr_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
        fs::remove_all(root_);
        fs::create_directories(root_);
    }
    void TearDown() override { fs::remove_all(root_); }

    std::string path(const std::string& name) const { return (root_ / name).string(); }

    std::string gen(const std::string& dir, std::size_t n = 300, const std::string& extra = "") {
        EXPECT_EQ(run("gen-data --out " + path(dir) + " --n " + std::to_string(n) + " --seed 7 --dim 4 --treatments 3 " + extra), 0);
        return path(dir + "/full_feedback.csv");
    }

    static std::string quick() { return " --max-epochs 3 --patience 2 --hidden 8 --lr 1e-3 --propensity-iterations 20"; }

    fs::path root_;
};

std::size_t data_lines(const std::string& file) {
    const auto text = read_file(file);
    std::size_t n = 0;
    for (char ch : text) n += ch == '\n';
    return n;
}

}  // namespace

TEST_F(CliTest, GenDataWritesBothFilesWithNRows) {
    gen("d", 250);
    EXPECT_EQ(data_lines(path("d/full_feedback.csv")), 251u);
    EXPECT_EQ(data_lines(path("d/observational.csv")), 251u);
    EXPECT_EQ(read_full_feedback(path("d/full_feedback.csv")).size(), 250u);
    EXPECT_EQ(read_observational(path("d/observational.csv")).size(), 250u);
    EXPECT_EQ(load_world(path("d/world.json")).T, 3u);
    for (const auto& e : fs::directory_iterator(path("d"))) EXPECT_NE(e.path().extension(), ".tmp");
}

TEST_F(CliTest, GenDataJsonl) {
    EXPECT_EQ(run("gen-data --out " + path("j") + " --n 20 --format jsonl"), 0);
    EXPECT_EQ(read_full_feedback(path("j/full_feedback.jsonl")).size(), 20u);
    EXPECT_EQ(read_observational(path("j/observational.jsonl")).size(), 20u);
}

TEST_F(CliTest, GenDataIsByteIdenticalOnRerun) {
    gen("a");
    gen("b");
    for (const char* f : {"full_feedback.csv", "observational.csv", "world.json"})
        EXPECT_EQ(read_file(path(std::string("a/") + f)), read_file(path(std::string("b/") + f))) << f;
}

TEST_F(CliTest, GenDataBadPathFailsWithoutPartialFiles) {
    write_file_atomic(path("blocker"), "x");
    EXPECT_NE(run("gen-data --out " + path("blocker/sub") + " --n 10"), 0);
    EXPECT_FALSE(fs::exists(path("blocker/sub")));
    EXPECT_EQ(run("gen-data --out " + path("bad") + " --n 0"), 2);
    EXPECT_FALSE(fs::exists(path("bad/full_feedback.csv")));
    EXPECT_EQ(run("gen-data --out " + path("bad") + " --logging sideways"), 2);
    EXPECT_EQ(run("gen-data --out " + path("bad") + " --format xml"), 2);
}

TEST_F(CliTest, UsageErrorsExitTwo) {
    EXPECT_EQ(run(""), 2);
    EXPECT_EQ(run("frobnicate"), 2);
    EXPECT_EQ(run("gen-data"), 2);
    EXPECT_EQ(run("--help"), 0);
}

TEST_F(CliTest, TrainWritesCheckpointMetricsAndHistory) {
    const auto data = gen("d");
    EXPECT_EQ(run("train --data " + data + " --method rm_softmax --lambda 100 --out " + path("t") + quick()), 0);
    const auto policy = load_policy(path("t/policy.json"));
    EXPECT_EQ(policy.kind(), PolicyKind::rm_softmax);
    const auto metrics = read_file(path("t/metrics.txt"));
    EXPECT_NE(metrics.find("validation_regret="), std::string::npos);
    EXPECT_NE(metrics.find("test_utility="), std::string::npos);
    EXPECT_EQ(read_file(path("t/history.csv")).rfind("epoch,validation_metric\n0,", 0), 0u);

    EXPECT_EQ(run("train --data " + data + " --method rm_softmax --lambda 100 --out " + path("t2") + quick()), 0);
    for (const char* f : {"policy.json", "metrics.txt", "history.csv"})
        EXPECT_EQ(read_file(path(std::string("t/") + f)), read_file(path(std::string("t2/") + f))) << f;
}

TEST_F(CliTest, TrainOnObservationalFile) {
    gen("d");
    EXPECT_EQ(run("train --data " + path("d/observational.csv") + " --method baseline_decoupled --out " + path("t") + quick()), 0);
    EXPECT_TRUE(fs::exists(path("t/policy.json")));
    EXPECT_EQ(read_file(path("t/metrics.txt")).find("test_utility"), std::string::npos);
}

TEST_F(CliTest, TrainErrors) {
    const auto data = gen("d");
    EXPECT_EQ(run("train --data " + data + " --method route_llm --out " + path("t")), 2);
    EXPECT_EQ(run("train --data " + data + " --method rm_softmax,cf_regression --out " + path("t")), 2);
    EXPECT_EQ(run("train --data " + data + " --lambda -1 --out " + path("t")), 2);
    EXPECT_EQ(run("train --data " + path("missing.csv") + " --out " + path("t")), 3);
    EXPECT_FALSE(fs::exists(path("t/policy.json")));
}

TEST_F(CliTest, EstimateWritesOneMatrixPerLambda) {
    const auto data = gen("d");
    EXPECT_EQ(run("estimate --data " + data + " --lambda-grid 0,500 --out " + path("e") + quick()), 0);
    const auto um = read_utility_matrix(path("e/utility_lambda_500.csv"), CostSensitivity(500));
    EXPECT_EQ(um.rows(), 300u);
    EXPECT_EQ(um.treatments(), 3u);
    EXPECT_TRUE(fs::exists(path("e/utility_lambda_0.csv")));
    EXPECT_EQ(data_lines(path("e/split.txt")), 300u);
    EXPECT_NE(read_file(path("e/metrics.txt")).find("dr_mean_lambda_0_t0="), std::string::npos);
}

TEST_F(CliTest, SweepCardinalityReportsAndDeterminism) {
    const auto data = gen("d", 200);
    const std::string args =
        "sweep --data " + data + " --method baseline_decoupled,rm_softmax --lambda-grid 0,100,200,300,400,500,600,700,800,900,1000 --trials 3" + quick();
    EXPECT_EQ(run(args + " --out " + path("s")), 0);
    const auto trials = parse_trials_csv(read_file(path("s/trials.csv")));
    EXPECT_EQ(trials.size(), 66u);
    const auto report = parse_report_csv(read_file(path("s/report.csv")));
    EXPECT_EQ(report.size(), 22u);
    for (const auto& row : report) EXPECT_TRUE(std::isfinite(row.mean));
    EXPECT_EQ(parse_csv(read_file(path("s/curves.csv"))).rows.size(), 22u);
    EXPECT_EQ(parse_csv(read_file(path("s/auc.csv"))).rows.size(), 2u);
    EXPECT_NE(read_file(path("s/report.txt")).find("λ=1000"), std::string::npos);

    EXPECT_EQ(run(args + " --jobs 2 --out " + path("s2")), 0);
    for (const char* f : {"trials.csv", "report.csv", "report.txt", "curves.csv", "auc.csv"})
        EXPECT_EQ(read_file(path(std::string("s/") + f)), read_file(path(std::string("s2/") + f))) << f;
}

TEST_F(CliTest, SweepReadsConfigFile) {
    const auto data = gen("d", 200);
    write_file_atomic(path("run.ini"), "[sweep]\nmethod=rm_softmax\nlambda-grid=0,500\ntrials=2\nmax-epochs=2\nhidden=8\npropensity-iterations=10\n");
    EXPECT_EQ(run("--config " + path("run.ini") + " sweep --data " + data + " --out " + path("s")), 0);
    EXPECT_EQ(parse_trials_csv(read_file(path("s/trials.csv"))).size(), 4u);
}

TEST_F(CliTest, SweepRejectsObservationalInputAndBadGrid) {
    gen("d", 100);
    EXPECT_EQ(run("sweep --data " + path("d/observational.csv") + " --out " + path("s") + quick()), 3);
    EXPECT_EQ(run("sweep --data " + path("d/full_feedback.csv") + " --lambda-grid 0,abc --out " + path("s") + quick()), 2);
    EXPECT_FALSE(fs::exists(path("s/trials.csv")));
}

TEST_F(CliTest, IntervalHeldOutReport) {
    const auto data = gen("d", 200);
    const std::string args = "interval --data " + data + " --world " + path("d/world.json") +
                             " --lambda-grid 0,200,400,600,800,1000 --eval-lambdas 100,300,500,700,900 --trials 1" + quick();
    EXPECT_EQ(run(args + " --out " + path("i")), 0);
    const auto trials = parse_trials_csv(read_file(path("i/trials.csv")));
    EXPECT_EQ(trials.size(), 15u);
    EXPECT_EQ(trials.front().method, kIntervalMethod);
    EXPECT_EQ(parse_report_csv(read_file(path("i/report.csv"))).size(), 15u);
    EXPECT_EQ(run(args + " --out " + path("i2")), 0);
    for (const char* f : {"trials.csv", "report.csv", "report.txt"})
        EXPECT_EQ(read_file(path(std::string("i/") + f)), read_file(path(std::string("i2/") + f))) << f;
    EXPECT_EQ(run("interval --data " + data + " --eval-lambdas 1100 --out " + path("bad") + quick()), 2);
}
