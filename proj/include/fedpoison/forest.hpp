#pragma once

#include "fedpoison/dataset.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace fedpoison {

/// Flat tree storage; nodes[0] is the root. Internal nodes route
/// x[feature] < threshold to `left`, else `right`. Leaves keep their
/// training class counts and predict the majority (ties toward 0).
struct TreeNode {
    Index feature = -1;
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    std::array<long, 2> class_counts{0, 0};

    bool is_leaf() const { return left < 0; }
};

struct Tree {
    std::vector<TreeNode> nodes;
};

struct ForestConfig {
    int n_trees = 50;
    int max_depth = 10;
    int min_samples_split = 10;
    /// Candidate features per split; 0 means ceil(sqrt(d)).
    int features_per_split = 0;
    bool bootstrap = true;
    std::uint64_t seed = 0;
};

struct Forest {
    std::vector<Tree> trees;
    ForestConfig config;
    Index num_features = 0;
};

struct ImportanceReport {
    std::vector<double> scores;
    int repeats = 0;
    double baseline_accuracy = 0.0;
};

/// Gini impurity of a two-class count pair: 1 - p0^2 - p1^2.
double gini(long count0, long count1);

/// Trains a random forest with bootstrap sampling and per-split feature
/// subsets. Splits maximize gini gain; ties break toward the lower
/// feature index, then the lower threshold.
Forest fit_forest(const Dataset& ds, const ForestConfig& cfg);

std::vector<int> predict_tree(const Tree& tree, const Matrix& X);

/// Majority vote over trees; ties toward label 0.
std::vector<int> predict_forest(const Forest& forest, const Matrix& X);

using Classifier = std::function<std::vector<int>(const Matrix&)>;

/// Permutation importance of each column: baseline accuracy minus the
/// accuracy with that column shuffled, averaged over `repeats` draws.
/// Shuffle seeds derive from (seed, feature, repeat), so results do not
/// depend on evaluation order.
ImportanceReport permutation_importance(const Classifier& classify, const Dataset& ds,
                                        int repeats, std::uint64_t seed);

/// Index of the highest score; ties toward the lowest index.
Index top_feature(const ImportanceReport& report);

void save_importance_csv(const ImportanceReport& report,
                         std::span<const std::string> feature_names,
                         const std::filesystem::path& path);

}  // namespace fedpoison
