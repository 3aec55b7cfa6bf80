#pragma once

#include "fedpoison/attacks.hpp"
#include "fedpoison/dataset.hpp"
#include "fedpoison/federation.hpp"
#include "fedpoison/forest.hpp"
#include "fedpoison/report.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace fedpoison {

struct CsvSource {
    std::filesystem::path path;
    int label_column = -1;  // negative: last column
};

struct SyntheticSource {
    SyntheticSpec spec;
};

struct PrepareOptions {
    std::variant<CsvSource, SyntheticSource> source;
    PreprocessConfig preprocess;
    int clients = 2;
    std::uint64_t seed = 0;
    std::filesystem::path out_dir;
    /// Name used in scenario ids; defaults to the CSV stem uppercased,
    /// or "SYN" for synthetic data.
    std::string dataset_name;
};

struct PrepareSummary {
    std::string dataset_name;
    Index train_rows = 0;
    Index validation_rows = 0;
    Index test_rows = 0;
    std::vector<Index> shard_rows;
    std::filesystem::path manifest_path;
};

/// Load (or generate), preprocess, split, and write shards, validation,
/// test, and manifest.json into out_dir.
PrepareSummary cmd_prepare(const PrepareOptions& options);

struct PreparedData {
    SplitBundle bundle;
    std::string dataset_name;
    std::uint64_t seed = 0;
};

/// Reads back a cmd_prepare output directory. A missing or incomplete
/// directory raises a std::runtime_error telling the user to run
/// `prepare` first.
PreparedData load_prepared(const std::filesystem::path& dir);

struct ImportanceOptions {
    std::filesystem::path data_dir;
    ForestConfig forest;
    int repeats = 5;
    std::uint64_t seed = 0;
};

struct ImportanceSummary {
    ImportanceReport report;
    Index top = 0;
    std::filesystem::path csv_path;
};

/// Fits a forest on the full training data, scores features by
/// permutation importance on the validation set, writes
/// importance.csv next to the data, and reports the top feature.
ImportanceSummary cmd_importance(const ImportanceOptions& options);

struct RunOptions {
    std::filesystem::path data_dir;
    std::optional<AttackKind> attack;
    double percent = 1.0;
    std::optional<Index> feature_index;
    bool fp_apply_step3 = true;
    int rounds = 20;
    int local_epochs = 1;
    /// learning_rate <= 0 samples one from the seed.
    TrainConfig train;
    std::uint64_t seed = 0;
};

/// One experiment; appends the record to <data_dir>/records.jsonl and
/// rewrites <data_dir>/results.csv from all records. Round logs go to
/// `log` when given.
ExperimentRecord cmd_run(const RunOptions& options, std::ostream* log = nullptr);

struct SweepOptions {
    std::filesystem::path data_dir;
    std::vector<AttackKind> attacks{AttackKind::kLabelFlip, AttackKind::kFeaturePoison};
    std::vector<double> percentages{1, 2, 3, 4, 5, 7, 10, 15, 20, 25};
    std::optional<Index> feature_index;
    bool fp_apply_step3 = true;
    int rounds = 20;
    int local_epochs = 1;
    TrainConfig train;
    std::uint64_t seed = 0;
    int workers = 1;
    /// Stop after completing this many new experiments (for smoke runs);
    /// a later sweep resumes the remainder.
    std::optional<int> max_records;
};

struct SweepSummary {
    int completed = 0;
    int skipped = 0;
    int failed = 0;
    std::vector<std::string> failures;
    std::filesystem::path results_path;
};

/// Baseline plus every (attack, percent) cell. Finished experiments are
/// journaled to records.jsonl as they complete and skipped on re-runs,
/// so an interrupted sweep resumes where it stopped; results.csv is
/// rebuilt sorted at the end either way. Each experiment's seed derives
/// from (sweep seed, percent) only, so a 0% attack run reproduces the
/// baseline exactly.
SweepSummary cmd_sweep(const SweepOptions& options, std::ostream* log = nullptr);

}  // namespace fedpoison
