#include <gtest/gtest.h>

#include <filesystem>

#include "test_util.hpp"

using namespace rr;

namespace {

class TempDir {
public:
    explicit TempDir(const std::string& name) : path_(std::filesystem::temp_directory_path() / name) {
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() { std::filesystem::remove_all(path_); }
    std::string file(const std::string& name) const { return (path_ / name).string(); }

private:
    std::filesystem::path path_;
};

std::vector<FullFeedbackRecord> sample_records(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<FullFeedbackRecord> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(fixtures::random_record(4, 3, rng));
    return out;
}

void expect_same_records(const std::vector<FullFeedbackRecord>& a, const std::vector<FullFeedbackRecord>& b) {
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].x, b[i].x);
        EXPECT_EQ(a[i].accuracy, b[i].accuracy);
        EXPECT_EQ(a[i].cost, b[i].cost);
    }
}

void expect_same_samples(const Dataset& a, const Dataset& b) {
    ASSERT_EQ(a.size(), b.size());
    EXPECT_EQ(a.d, b.d);
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a.samples[i].x, b.samples[i].x);
        EXPECT_EQ(a.samples[i].t, b.samples[i].t);
        EXPECT_EQ(a.samples[i].a, b.samples[i].a);
        EXPECT_EQ(a.samples[i].c, b.samples[i].c);
    }
}

}  // namespace

TEST(Numbers, ShortestFormRoundTrips) {
    std::mt19937_64 rng(1);
    for (int k = 0; k < 1000; ++k) {
        const double v = (uniform01(rng) - 0.5) * std::pow(10.0, static_cast<int>(rng() % 20) - 10);
        EXPECT_EQ(parse_double(format_double(v), "v"), v);
    }
    EXPECT_EQ(format_double(0.5), "0.5");
    EXPECT_EQ(format_double(100.0), "100");
    EXPECT_EQ(parse_double(" 1e-3 ", "v"), 1e-3);
    EXPECT_EQ(parse_double("+2", "v"), 2.0);
    EXPECT_THROW(parse_double("", "v"), DataError);
    EXPECT_THROW(parse_double("1,5", "v"), DataError);
    EXPECT_THROW(parse_double("abc", "v"), DataError);
    EXPECT_THROW(parse_double("nan", "v"), DataError);
    EXPECT_THROW(parse_double("inf", "v"), DataError);
}

TEST(Csv, SplitsQuotedFields) {
    EXPECT_EQ(split_csv_line("a,b,c"), (std::vector<std::string>{"a", "b", "c"}));
    EXPECT_EQ(split_csv_line("\"[1,2]\",3"), (std::vector<std::string>{"[1,2]", "3"}));
    EXPECT_EQ(split_csv_line("\"say \"\"hi\"\"\",x\r"), (std::vector<std::string>{"say \"hi\"", "x"}));
    EXPECT_EQ(split_csv_line(""), (std::vector<std::string>{""}));
    EXPECT_EQ(split_csv_line("a,"), (std::vector<std::string>{"a", ""}));
    EXPECT_THROW(split_csv_line("\"open,field"), DataError);
}

TEST(Csv, ParsesTableAndRejectsRaggedRows) {
    const auto t = parse_csv("x,y\n1,2\n\n3,4\n");
    EXPECT_EQ(t.header, (std::vector<std::string>{"x", "y"}));
    ASSERT_EQ(t.rows.size(), 2u);
    EXPECT_EQ(t.column("y"), 1u);
    EXPECT_TRUE(t.has("x"));
    EXPECT_FALSE(t.has("z"));
    EXPECT_THROW(t.column("z"), DataError);
    EXPECT_THROW(parse_csv("x,y\n1\n"), DataError);
    EXPECT_THROW(parse_csv(""), DataError);
}

TEST(Embedding, RoundTripsAndRejectsMalformed) {
    const FeatureVector x{0.25, -1.5, 3e-8};
    EXPECT_EQ(format_embedding(x), "[0.25,-1.5,3e-08]");
    EXPECT_EQ(parse_embedding(format_embedding(x)), x);
    EXPECT_EQ(parse_embedding(" [1, 2 ,3] "), (FeatureVector{1, 2, 3}));
    EXPECT_THROW(parse_embedding("1,2"), DataError);
    EXPECT_THROW(parse_embedding("[]"), DataError);
    EXPECT_THROW(parse_embedding("[1,,2]"), DataError);
    EXPECT_THROW(parse_embedding("[1,x]"), DataError);
}

TEST(FullFeedbackFiles, RoundTripBothFormats) {
    TempDir dir("rr_io_full");
    const auto records = sample_records(25, 3);
    for (const char* name : {"full.csv", "full.jsonl"}) {
        const auto path = dir.file(name);
        write_full_feedback(path, records);
        EXPECT_EQ(detect_kind(path), DataKind::full_feedback);
        expect_same_records(read_full_feedback(path), records);
        EXPECT_FALSE(std::filesystem::exists(path + ".tmp"));
    }
    EXPECT_EQ(full_feedback_text(records, FileFormat::csv).substr(0, 52), "embedding,accuracy_0,accuracy_1,accuracy_2,cost_0,co");
}

TEST(ObservationalFiles, RoundTripBothFormats) {
    TempDir dir("rr_io_obs");
    const auto ds = make_observational(sample_records(30, 4), 5);
    for (const char* name : {"obs.csv", "obs.jsonl"}) {
        const auto path = dir.file(name);
        write_observational(path, ds);
        EXPECT_EQ(detect_kind(path), DataKind::observational);
        const auto back = read_observational(path);
        expect_same_samples(back, ds);
        EXPECT_EQ(back.indices(Split::train).size(), ds.size());
    }
}

TEST(ObservationalFiles, ParsesHandWrittenCsv) {
    TempDir dir("rr_io_hand");
    const auto path = dir.file("obs.csv");
    write_file_atomic(path, "embedding,model,accuracy,cost\n\"[0.1,0.2]\",1,1,0.002\r\n\"[0.3,0.4]\",0,0,0.001\n");
    const auto ds = read_observational(path);
    ASSERT_EQ(ds.size(), 2u);
    EXPECT_EQ(ds.d, 2u);
    EXPECT_EQ(ds.T, 2u);
    EXPECT_EQ(ds.samples[0].x, (FeatureVector{0.1, 0.2}));
    EXPECT_EQ(ds.samples[0].t, 1u);
    EXPECT_EQ(ds.samples[1].c, 0.001);
}

TEST(ObservationalFiles, ParsesColumnsInAnyOrder) {
    TempDir dir("rr_io_order");
    const auto path = dir.file("obs.csv");
    write_file_atomic(path, "cost,accuracy,model,embedding\n0.5,0.25,2,\"[1]\"\n");
    const auto ds = read_observational(path);
    EXPECT_EQ(ds.samples[0].t, 2u);
    EXPECT_EQ(ds.samples[0].a, 0.25);
    EXPECT_EQ(ds.samples[0].c, 0.5);
    EXPECT_EQ(ds.T, 3u);
}

TEST(ObservationalFiles, RejectsBadInput) {
    TempDir dir("rr_io_bad");
    auto expect_bad = [&](const std::string& name, const std::string& content) {
        const auto path = dir.file(name);
        write_file_atomic(path, content);
        EXPECT_THROW(read_observational(path), DataError) << content;
    };
    expect_bad("missing_col.csv", "embedding,model,accuracy\n\"[1]\",0,1\n");
    expect_bad("frac_model.csv", "embedding,model,accuracy,cost\n\"[1]\",0.5,1,0\n");
    expect_bad("neg_model.csv", "embedding,model,accuracy,cost\n\"[1]\",-1,1,0\n");
    expect_bad("bad_num.csv", "embedding,model,accuracy,cost\n\"[1]\",0,high,0\n");
    expect_bad("ragged_dim.csv", "embedding,model,accuracy,cost\n\"[1]\",0,1,0\n\"[1,2]\",0,1,0\n");
    expect_bad("empty.csv", "embedding,model,accuracy,cost\n");
    expect_bad("bad.jsonl", "{\"embedding\":[1],\"model\":0,\"accuracy\":1}\n");
    expect_bad("broken.jsonl", "{\"embedding\":[1],\n");
    EXPECT_THROW(read_observational(dir.file("nope.csv")), DataError);
}

TEST(FullFeedbackFiles, RejectsBadInput) {
    TempDir dir("rr_io_badfull");
    const auto path = dir.file("full.csv");
    write_file_atomic(path, "embedding,accuracy_0,accuracy_1,cost_0\n\"[1]\",1,0,0.1\n");
    EXPECT_THROW(read_full_feedback(path), DataError);
    const auto unknown = dir.file("mystery.csv");
    write_file_atomic(unknown, "a,b\n1,2\n");
    EXPECT_THROW(detect_kind(unknown), DataError);
}

TEST(UtilityMatrixFile, RoundTrip) {
    TempDir dir("rr_io_um");
    std::mt19937_64 rng(6);
    const UtilityMatrix um{fixtures::random_matrix(9, 4, rng), CostSensitivity(300)};
    const auto path = dir.file("u.csv");
    write_utility_matrix(path, um);
    const auto back = read_utility_matrix(path, CostSensitivity(300));
    EXPECT_TRUE(back.values == um.values);
    EXPECT_EQ(back.lambda.value(), 300.0);
    EXPECT_EQ(utility_matrix_text(um).substr(0, 16), "y_0,y_1,y_2,y_3\n");
    write_file_atomic(path, "y_0,z\n1,2\n");
    EXPECT_THROW(read_utility_matrix(path, CostSensitivity(0)), DataError);
}

TEST(AtomicWrite, ReplacesContentAndFailsCleanly) {
    TempDir dir("rr_io_atomic");
    const auto path = dir.file("f.txt");
    write_file_atomic(path, "first");
    write_file_atomic(path, "second");
    EXPECT_EQ(read_file(path), "second");
    EXPECT_THROW(write_file_atomic(dir.file("missing_dir/f.txt"), "x"), DataError);
    EXPECT_FALSE(std::filesystem::exists(dir.file("missing_dir")));
}

TEST(FormatFor, UsesExtension) {
    EXPECT_EQ(format_for("a/b.jsonl"), FileFormat::jsonl);
    EXPECT_EQ(format_for("a/b.csv"), FileFormat::csv);
    EXPECT_EQ(format_for("noext"), FileFormat::csv);
}
