#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace fedpoison {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// One parsed CSV row. A feature cell that was empty or unparsable is
/// stored as nullopt and filled later by preprocess().
struct RawRow {
    std::vector<std::optional<double>> features;
    int label = 0;
};

struct RawTable {
    std::vector<RawRow> rows;
    std::vector<std::string> feature_names;
    std::string label_name;
};

/// Dense numeric dataset: one sample per matrix row, binary labels.
struct Dataset {
    Matrix X;
    std::vector<int> y;
    std::vector<std::string> feature_names;

    Index rows() const { return X.rows(); }
    Index cols() const { return X.cols(); }
};

struct PreprocessConfig {
    double fill_value = 0.0;
    bool normalize = true;
};

/// Output of split(): per-client training shards plus held-out
/// validation and test sets.
struct SplitBundle {
    std::vector<Dataset> client_shards;
    Dataset validation;
    Dataset test;

    Index train_rows() const;
};

struct ThreeWaySplit {
    Dataset train;
    Dataset validation;
    Dataset test;
};

struct SyntheticSpec {
    Index n = 1000;
    Index d = 8;
    Index informative_feature = 0;
    double class_separation = 4.0;
    double noise_sd = 1.0;
    std::uint64_t seed = 0;
};

/// Parses a CSV file with a header row. `label_column` is a zero-based
/// column index; a negative value selects the last column. Labels must
/// parse as 0 or 1; any other value raises ParseError with the row
/// number. Feature cells that are empty or non-numeric become nullopt.
RawTable load_csv(const std::filesystem::path& path, int label_column = -1);

/// Fills missing feature cells with cfg.fill_value, then (by default)
/// min-max normalizes each column to [0, 1]. Constant columns map to 0.
Dataset preprocess(const RawTable& table, const PreprocessConfig& cfg = {});

/// Stratified 80/10/10 split; validation and test each get floor(0.1 n)
/// rows, the remainder trains. Within each part the label proportions
/// stay within one sample of the input's.
ThreeWaySplit stratified_split(const Dataset& ds, std::uint64_t seed);

/// stratified_split() followed by partition_clients() on the train part.
SplitBundle split(const Dataset& ds, int num_clients, std::uint64_t seed);

/// Shuffles the training rows and deals them into `num_clients` nearly
/// equal shards (sizes differ by at most one, earlier shards larger).
std::vector<Dataset> partition_clients(const Dataset& train, int num_clients,
                                       std::uint64_t seed);

/// Balanced two-class Gaussian blobs on one informative column (then
/// min-max rescaled), uniform noise on the rest.
Dataset gen_synthetic(const SyntheticSpec& spec);

/// Writes a Dataset back out as CSV (features then a `label` column),
/// with enough digits to round-trip doubles exactly.
void save_csv(const Dataset& ds, const std::filesystem::path& path);

}  // namespace fedpoison
