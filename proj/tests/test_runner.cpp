#include "fedpoison/runner.hpp"

#include "fedpoison/errors.hpp"

#include <doctest.h>

#include "helpers.hpp"

#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

using namespace fedpoison;
using namespace fedpoison::testing;

namespace {

SyntheticSpec small_spec(Index n = 120, std::uint64_t seed = 5) {
    SyntheticSpec spec;
    spec.n = n;
    spec.d = 3;
    spec.class_separation = 6.0;
    spec.seed = seed;
    return spec;
}

PrepareOptions synthetic_prepare(const std::filesystem::path& out,
                                 const SyntheticSpec& spec, std::uint64_t seed = 9) {
    PrepareOptions options;
    options.source = SyntheticSource{spec};
    options.seed = seed;
    options.out_dir = out;
    return options;
}

TrainConfig fast_train() {
    TrainConfig train;
    train.batch_size = 24;
    train.learning_rate = 5e-3;
    train.dropout_p = 0.25;
    return train;
}

RunOptions fast_run(const std::filesystem::path& data_dir) {
    RunOptions options;
    options.data_dir = data_dir;
    options.rounds = 2;
    options.train = fast_train();
    options.seed = 77;
    return options;
}

SweepOptions fast_sweep(const std::filesystem::path& data_dir) {
    SweepOptions options;
    options.data_dir = data_dir;
    options.attacks = {AttackKind::kLabelFlip};
    options.percentages = {0.0, 10.0};
    options.rounds = 1;
    options.train = fast_train();
    options.seed = 311;
    return options;
}

long count_lines(const std::filesystem::path& path) {
    std::ifstream file(path);
    long lines = 0;
    std::string line;
    while (std::getline(file, line)) {
        ++lines;
    }
    return lines;
}

/// CSV with one informative column, one constant column, and a header;
/// big enough that stratified shards keep both classes.
std::string constant_column_csv(int n) {
    std::ostringstream out;
    out << "signal,flat,label\n";
    for (int i = 0; i < n; ++i) {
        int label = i % 2;
        out << (label == 0 ? 0.1 + 0.01 * i : 0.9 - 0.01 * i) << ",5.0," << label << "\n";
    }
    return out.str();
}

}  // namespace

TEST_SUITE("runner") {

TEST_CASE("prepare writes shards, holdouts, and a manifest") {
    TempDir dir;
    auto summary = cmd_prepare(synthetic_prepare(dir.file("data"), small_spec()));

    CHECK(summary.dataset_name == "SYN");
    CHECK(summary.train_rows == 96);
    CHECK(summary.validation_rows == 12);
    CHECK(summary.test_rows == 12);
    CHECK(summary.shard_rows == std::vector<Index>{48, 48});
    CHECK(std::filesystem::exists(summary.manifest_path));
    CHECK(std::filesystem::exists(dir.file("data") / "shard_0.csv"));
    CHECK(std::filesystem::exists(dir.file("data") / "shard_1.csv"));
    CHECK(std::filesystem::exists(dir.file("data") / "validation.csv"));
    CHECK(std::filesystem::exists(dir.file("data") / "test.csv"));
}

TEST_CASE("prepared data reloads bit-for-bit") {
    TempDir dir;
    auto spec = small_spec();
    const std::uint64_t split_seed = 9;
    cmd_prepare(synthetic_prepare(dir.file("data"), spec, split_seed));
    auto data = load_prepared(dir.file("data"));

    auto expected = split(gen_synthetic(spec), 2, split_seed);
    REQUIRE(data.bundle.client_shards.size() == 2);
    for (std::size_t i = 0; i < 2; ++i) {
        CHECK(max_abs_diff(data.bundle.client_shards[i].X,
                           expected.client_shards[i].X) == 0.0);
        CHECK(data.bundle.client_shards[i].y == expected.client_shards[i].y);
        CHECK(data.bundle.client_shards[i].feature_names ==
              expected.client_shards[i].feature_names);
    }
    CHECK(max_abs_diff(data.bundle.validation.X, expected.validation.X) == 0.0);
    CHECK(data.bundle.validation.y == expected.validation.y);
    CHECK(max_abs_diff(data.bundle.test.X, expected.test.X) == 0.0);
    CHECK(data.bundle.test.y == expected.test.y);
    CHECK(data.dataset_name == "SYN");
    CHECK(data.seed == split_seed);
}

TEST_CASE("preparing twice produces identical files") {
    TempDir dir;
    cmd_prepare(synthetic_prepare(dir.file("a"), small_spec()));
    cmd_prepare(synthetic_prepare(dir.file("b"), small_spec()));
    for (const char* name :
         {"shard_0.csv", "shard_1.csv", "validation.csv", "test.csv", "manifest.json"}) {
        CHECK(read_file(dir.file("a") / name) == read_file(dir.file("b") / name));
    }
}

TEST_CASE("prepare from a csv uses the uppercased stem as the name") {
    TempDir dir;
    write_file(dir.file("traffic.csv"), constant_column_csv(40));
    PrepareOptions options;
    options.source = CsvSource{dir.file("traffic.csv")};
    options.seed = 3;
    options.out_dir = dir.file("data");
    auto summary = cmd_prepare(options);
    CHECK(summary.dataset_name == "TRAFFIC");
    CHECK(summary.train_rows == 32);
    CHECK(summary.validation_rows == 4);
    CHECK(summary.test_rows == 4);

    auto data = load_prepared(dir.file("data"));
    CHECK(data.bundle.client_shards[0].feature_names ==
          std::vector<std::string>{"signal", "flat"});
}

TEST_CASE("prepare validates its options") {
    TempDir dir;
    auto options = synthetic_prepare("", small_spec());
    CHECK_THROWS_AS(cmd_prepare(options), std::invalid_argument);

    options = synthetic_prepare(dir.file("data"), small_spec());
    options.clients = 0;
    CHECK_THROWS_AS(cmd_prepare(options), std::invalid_argument);
}

TEST_CASE("loading an unprepared directory names the missing step") {
    TempDir dir;
    CHECK_THROWS_WITH_AS(load_prepared(dir.file("nowhere")),
                         doctest::Contains("run the prepare command first"),
                         std::runtime_error);
}

TEST_CASE("a corrupt manifest is reported with its path") {
    TempDir dir;
    std::filesystem::create_directories(dir.file("data"));
    write_file(dir.file("data") / "manifest.json", "{not json");
    CHECK_THROWS_WITH_AS(load_prepared(dir.file("data")),
                         doctest::Contains("corrupt manifest"), std::runtime_error);
}

TEST_CASE("importance ranks the informative synthetic column first") {
    TempDir dir;
    cmd_prepare(synthetic_prepare(dir.file("data"), small_spec(200, 11)));

    ImportanceOptions options;
    options.data_dir = dir.file("data");
    options.forest.n_trees = 20;
    options.forest.max_depth = 6;
    options.seed = 4;
    auto summary = cmd_importance(options);

    CHECK(summary.top == 0);  // informative_feature defaults to column 0
    CHECK(summary.report.scores.size() == 3);
    CHECK(summary.report.baseline_accuracy > 0.8);
    REQUIRE(std::filesystem::exists(summary.csv_path));
    auto text = read_file(summary.csv_path);
    CHECK(text.substr(0, 19) == "feature,importance\n");
    CHECK(count_lines(summary.csv_path) == 4);  // header + one row per column

    // Same options, same report.
    auto again = cmd_importance(options);
    CHECK(again.report.scores == summary.report.scores);
}

TEST_CASE("a clean run journals one record and rebuilds results.csv") {
    TempDir dir;
    cmd_prepare(synthetic_prepare(dir.file("data"), small_spec()));
    auto options = fast_run(dir.file("data"));

    std::ostringstream log;
    auto record = cmd_run(options, &log);

    CHECK(record.scenario_id == "N_BAU1^{SYN}");
    CHECK(record.poison_percent == 0.0);
    CHECK(record.client_losses.size() == 2);
    CHECK(!record.asr.has_value());
    CHECK(!record.success.has_value());
    CHECK(record.learning_rate_used == options.train.learning_rate);
    CHECK(record.seed == options.seed);

    CHECK(count_lines(dir.file("data") / "records.jsonl") == 1);
    auto csv = read_file(dir.file("data") / "results.csv");
    CHECK(csv.find("N_BAU1^{SYN},0.0000,") != std::string::npos);

    auto lines = log.str();
    CHECK(lines.find("scenario=N_BAU1^{SYN} percent=0 round=0") != std::string::npos);
    CHECK(lines.find("round=1") != std::string::npos);
    CHECK(lines.find("val_acc=") != std::string::npos);
}

TEST_CASE("an attacked run measures asr and success") {
    TempDir dir;
    cmd_prepare(synthetic_prepare(dir.file("data"), small_spec()));
    auto options = fast_run(dir.file("data"));
    options.attack = AttackKind::kLabelFlip;
    options.percent = 25.0;

    auto record = cmd_run(options);
    CHECK(record.scenario_id == "N_BAU1^{SYN-LF}");
    CHECK(record.poison_percent == 25.0);
    REQUIRE(record.asr.has_value());
    REQUIRE(record.success.has_value());
    CHECK(record.server_accuracy + *record.asr == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("a zero-percent attack reproduces the baseline metrics") {
    TempDir dir;
    cmd_prepare(synthetic_prepare(dir.file("data"), small_spec()));

    auto baseline = cmd_run(fast_run(dir.file("data")));

    auto options = fast_run(dir.file("data"));
    options.attack = AttackKind::kLabelFlip;
    options.percent = 0.0;
    auto flipped = cmd_run(options);

    CHECK(flipped.scenario_id == "N_BAU1^{SYN-LF}");
    CHECK(flipped.server_accuracy == baseline.server_accuracy);
    CHECK(flipped.client_losses == baseline.client_losses);
    CHECK(flipped.asr.has_value());
    CHECK(count_lines(dir.file("data") / "records.jsonl") == 2);
}

TEST_CASE("repeated runs of the same options journal identical records") {
    TempDir dir;
    cmd_prepare(synthetic_prepare(dir.file("data"), small_spec()));
    auto options = fast_run(dir.file("data"));
    options.rounds = 1;
    auto first = cmd_run(options);
    auto second = cmd_run(options);
    CHECK(first.server_accuracy == second.server_accuracy);
    CHECK(first.client_losses == second.client_losses);
    CHECK(first.learning_rate_used == second.learning_rate_used);
}

TEST_CASE("feature poisoning a constant column fails with the attack identity") {
    TempDir dir;
    write_file(dir.file("flatline.csv"), constant_column_csv(60));
    PrepareOptions prepare;
    prepare.source = CsvSource{dir.file("flatline.csv")};
    prepare.preprocess.normalize = false;  // keep the constant column constant
    prepare.seed = 21;
    prepare.out_dir = dir.file("data");
    cmd_prepare(prepare);

    auto options = fast_run(dir.file("data"));
    options.rounds = 1;
    options.attack = AttackKind::kFeaturePoison;
    options.percent = 10.0;
    options.feature_index = 1;  // the "flat" column
    CHECK_THROWS_WITH_AS(cmd_run(options),
                         doctest::Contains("feature-poisoning attack on client 0"),
                         DegenerateColumnError);
    // Nothing was journaled for the failed run.
    CHECK(!std::filesystem::exists(dir.file("data") / "records.jsonl"));
}

TEST_CASE("a corrupt journal line is reported with its line number") {
    TempDir dir;
    cmd_prepare(synthetic_prepare(dir.file("data"), small_spec()));
    write_file(dir.file("data") / "records.jsonl", "not json at all\n");
    auto options = fast_sweep(dir.file("data"));
    CHECK_THROWS_WITH_AS(cmd_sweep(options), doctest::Contains("records.jsonl:1"),
                         std::runtime_error);
}

TEST_CASE("a sweep covers the baseline and every attack cell") {
    TempDir dir;
    cmd_prepare(synthetic_prepare(dir.file("data"), small_spec()));
    std::ostringstream log;
    auto summary = cmd_sweep(fast_sweep(dir.file("data")), &log);

    CHECK(summary.completed == 3);  // baseline + LF at 0 and 10
    CHECK(summary.skipped == 0);
    CHECK(summary.failed == 0);
    CHECK(count_lines(dir.file("data") / "records.jsonl") == 3);
    REQUIRE(std::filesystem::exists(summary.results_path));
    CHECK(count_lines(summary.results_path) == 4);
    CHECK(log.str().find("completed scenario=") != std::string::npos);

    auto records = read_file(dir.file("data") / "records.jsonl");
    CHECK(records.find("N_BAU1^{SYN}") != std::string::npos);
    CHECK(records.find("N_BAU1^{SYN-LF}") != std::string::npos);
}

TEST_CASE("re-running a finished sweep skips everything and keeps the csv") {
    TempDir dir;
    cmd_prepare(synthetic_prepare(dir.file("data"), small_spec()));
    cmd_sweep(fast_sweep(dir.file("data")));
    auto before = read_file(dir.file("data") / "results.csv");

    auto summary = cmd_sweep(fast_sweep(dir.file("data")));
    CHECK(summary.completed == 0);
    CHECK(summary.skipped == 3);
    CHECK(read_file(dir.file("data") / "results.csv") == before);
    CHECK(count_lines(dir.file("data") / "records.jsonl") == 3);
}

TEST_CASE("an interrupted sweep resumes to a byte-identical results.csv") {
    TempDir dir;
    cmd_prepare(synthetic_prepare(dir.file("one-go"), small_spec()));
    cmd_prepare(synthetic_prepare(dir.file("resumed"), small_spec()));

    cmd_sweep(fast_sweep(dir.file("one-go")));

    auto truncated = fast_sweep(dir.file("resumed"));
    truncated.max_records = 1;
    auto partial = cmd_sweep(truncated);
    CHECK(partial.completed == 1);

    auto rest = cmd_sweep(fast_sweep(dir.file("resumed")));
    CHECK(rest.completed == 2);
    CHECK(rest.skipped == 1);

    CHECK(read_file(dir.file("resumed") / "results.csv") ==
          read_file(dir.file("one-go") / "results.csv"));
}

TEST_CASE("worker count changes nothing about the results") {
    TempDir dir;
    cmd_prepare(synthetic_prepare(dir.file("serial"), small_spec()));
    cmd_prepare(synthetic_prepare(dir.file("threaded"), small_spec()));

    cmd_sweep(fast_sweep(dir.file("serial")));
    auto threaded = fast_sweep(dir.file("threaded"));
    threaded.workers = 3;
    auto summary = cmd_sweep(threaded);
    CHECK(summary.completed == 3);

    CHECK(read_file(dir.file("threaded") / "results.csv") ==
          read_file(dir.file("serial") / "results.csv"));
}

TEST_CASE("the sweep sows a zero-percent record identical to the baseline") {
    TempDir dir;
    cmd_prepare(synthetic_prepare(dir.file("data"), small_spec()));
    cmd_sweep(fast_sweep(dir.file("data")));

    std::ifstream journal(dir.file("data") / "records.jsonl");
    std::string line;
    std::string baseline_acc, lf0_acc;
    while (std::getline(journal, line)) {
        auto grab = [&line](const char* key) {
            auto at = line.find(key);
            REQUIRE(at != std::string::npos);
            at = line.find(':', at) + 1;
            return line.substr(at, line.find(',', at) - at);
        };
        if (line.find("SYN-LF") != std::string::npos &&
            line.find("\"poison_percent\":0.0") != std::string::npos) {
            lf0_acc = grab("server_accuracy");
        } else if (line.find("SYN-LF") == std::string::npos) {
            baseline_acc = grab("server_accuracy");
        }
    }
    REQUIRE(!baseline_acc.empty());
    REQUIRE(!lf0_acc.empty());
    CHECK(baseline_acc == lf0_acc);
}

TEST_CASE("one failing cell doesn't derail the rest of the sweep") {
    TempDir dir;
    write_file(dir.file("flatline.csv"), constant_column_csv(60));
    PrepareOptions prepare;
    prepare.source = CsvSource{dir.file("flatline.csv")};
    prepare.preprocess.normalize = false;
    prepare.seed = 21;
    prepare.out_dir = dir.file("data");
    cmd_prepare(prepare);

    auto options = fast_sweep(dir.file("data"));
    options.attacks = {AttackKind::kFeaturePoison};
    options.percentages = {10.0};
    options.feature_index = 1;  // constant column: the FP cell must fail
    std::ostringstream log;
    auto summary = cmd_sweep(options, &log);

    CHECK(summary.completed == 1);  // the baseline
    CHECK(summary.failed == 1);
    REQUIRE(summary.failures.size() == 1);
    CHECK(summary.failures[0].find("FLATLINE-FP") != std::string::npos);
    CHECK(log.str().find("failed scenario=") != std::string::npos);
    CHECK(count_lines(dir.file("data") / "records.jsonl") == 1);
    CHECK(count_lines(dir.file("data") / "results.csv") == 2);
}

TEST_CASE("sweep options are validated before any work") {
    TempDir dir;
    auto options = fast_sweep(dir.file("data"));
    options.workers = 0;
    CHECK_THROWS_AS(cmd_sweep(options), std::invalid_argument);

    options = fast_sweep(dir.file("data"));
    options.percentages = {101.0};
    CHECK_THROWS_AS(cmd_sweep(options), std::invalid_argument);

    options = fast_sweep(dir.file("missing"));
    CHECK_THROWS_WITH_AS(cmd_sweep(options),
                         doctest::Contains("run the prepare command first"),
                         std::runtime_error);
}

}  // TEST_SUITE
