#include "fedpoison/forest.hpp"

#include "fedpoison/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>

namespace fedpoison {

namespace {

struct SplitChoice {
    double gain = 0.0;
    Index feature = -1;
    double threshold = 0.0;
};

struct TreeBuilder {
    const Matrix& X;
    const std::vector<int>& y;
    const ForestConfig& cfg;
    int features_per_split;
    std::vector<TreeNode>& nodes;
    Rng& rng;

    /// Candidate features for one split: a uniform sample without
    /// replacement, evaluated in ascending order so gain ties resolve to
    /// the lowest feature index.
    std::vector<Index> sample_features() {
        const Index d = X.cols();
        std::vector<Index> all(static_cast<std::size_t>(d));
        std::iota(all.begin(), all.end(), Index{0});
        for (int i = 0; i < features_per_split; ++i) {
            std::uniform_int_distribution<Index> pick(static_cast<Index>(i), d - 1);
            std::swap(all[static_cast<std::size_t>(i)],
                      all[static_cast<std::size_t>(pick(rng))]);
        }
        all.resize(static_cast<std::size_t>(features_per_split));
        std::sort(all.begin(), all.end());
        return all;
    }

    SplitChoice best_split(const std::vector<Index>& rows, double parent_gini) {
        SplitChoice best;
        const double n = static_cast<double>(rows.size());
        std::vector<std::pair<double, int>> column(rows.size());
        for (Index f : sample_features()) {
            for (std::size_t i = 0; i < rows.size(); ++i) {
                column[i] = {X(rows[i], f), y[static_cast<std::size_t>(rows[i])]};
            }
            std::sort(column.begin(), column.end(),
                      [](const auto& a, const auto& b) { return a.first < b.first; });

            long left0 = 0, left1 = 0;
            long total1 = 0;
            for (const auto& [value, label] : column) {
                total1 += label;
            }
            const long total0 = static_cast<long>(column.size()) - total1;
            for (std::size_t i = 0; i + 1 < column.size(); ++i) {
                left0 += column[i].second == 0 ? 1 : 0;
                left1 += column[i].second;
                if (!(column[i].first < column[i + 1].first)) {
                    continue;
                }
                const double nl = static_cast<double>(i + 1);
                const double nr = n - nl;
                double gain = parent_gini - (nl / n) * gini(left0, left1) -
                              (nr / n) * gini(total0 - left0, total1 - left1);
                if (gain > best.gain) {
                    double threshold =
                        column[i].first + (column[i + 1].first - column[i].first) / 2.0;
                    if (!(threshold > column[i].first)) {
                        threshold = column[i + 1].first;
                    }
                    best = SplitChoice{gain, f, threshold};
                }
            }
        }
        return best;
    }

    int build(const std::vector<Index>& rows, int depth) {
        long count1 = 0;
        for (Index row : rows) {
            count1 += y[static_cast<std::size_t>(row)];
        }
        const long count0 = static_cast<long>(rows.size()) - count1;

        const int index = static_cast<int>(nodes.size());
        nodes.push_back(TreeNode{});
        nodes[static_cast<std::size_t>(index)].class_counts = {count0, count1};

        const bool can_split = depth < cfg.max_depth &&
                               static_cast<int>(rows.size()) >= cfg.min_samples_split &&
                               count0 > 0 && count1 > 0;
        if (!can_split) {
            return index;
        }
        SplitChoice choice = best_split(rows, gini(count0, count1));
        if (choice.feature < 0 || choice.gain <= 1e-12) {
            return index;
        }

        std::vector<Index> left_rows, right_rows;
        for (Index row : rows) {
            (X(row, choice.feature) < choice.threshold ? left_rows : right_rows).push_back(row);
        }
        int left = build(left_rows, depth + 1);
        int right = build(right_rows, depth + 1);
        auto& node = nodes[static_cast<std::size_t>(index)];
        node.feature = choice.feature;
        node.threshold = choice.threshold;
        node.left = left;
        node.right = right;
        return index;
    }
};

int leaf_label(const TreeNode& node) {
    return node.class_counts[1] > node.class_counts[0] ? 1 : 0;
}

double accuracy(const std::vector<int>& predicted, const std::vector<int>& truth) {
    long correct = 0;
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        correct += predicted[i] == truth[i] ? 1 : 0;
    }
    return static_cast<double>(correct) / static_cast<double>(predicted.size());
}

}  // namespace

double gini(long count0, long count1) {
    if (count0 < 0 || count1 < 0 || count0 + count1 == 0) {
        throw std::invalid_argument("gini needs non-negative counts with a positive total");
    }
    const double total = static_cast<double>(count0 + count1);
    const double p0 = static_cast<double>(count0) / total;
    const double p1 = static_cast<double>(count1) / total;
    return 1.0 - p0 * p0 - p1 * p1;
}

Forest fit_forest(const Dataset& ds, const ForestConfig& cfg) {
    const Index n = ds.rows();
    const Index d = ds.cols();
    if (cfg.n_trees < 1 || cfg.max_depth < 1 || cfg.min_samples_split < 2) {
        throw std::invalid_argument("forest config out of range");
    }
    if (n < cfg.min_samples_split) {
        throw std::invalid_argument("fit_forest: need at least min_samples_split rows");
    }
    long count1 = 0;
    for (int label : ds.y) {
        if (label != 0 && label != 1) {
            throw std::invalid_argument("fit_forest: labels must be 0 or 1");
        }
        count1 += label;
    }
    if (count1 == 0 || count1 == n) {
        throw std::invalid_argument("fit_forest: both classes must be present");
    }

    int features_per_split =
        cfg.features_per_split > 0
            ? std::min<int>(cfg.features_per_split, static_cast<int>(d))
            : static_cast<int>(std::ceil(std::sqrt(static_cast<double>(d))));

    Forest forest;
    forest.config = cfg;
    forest.num_features = d;
    forest.trees.resize(static_cast<std::size_t>(cfg.n_trees));
    for (int t = 0; t < cfg.n_trees; ++t) {
        Rng rng(derive_seed(cfg.seed, SeedStream::kTree, {static_cast<std::uint64_t>(t)}));
        std::vector<Index> rows(static_cast<std::size_t>(n));
        if (cfg.bootstrap) {
            std::uniform_int_distribution<Index> pick(0, n - 1);
            for (auto& row : rows) {
                row = pick(rng);
            }
        } else {
            std::iota(rows.begin(), rows.end(), Index{0});
        }
        auto& tree = forest.trees[static_cast<std::size_t>(t)];
        TreeBuilder builder{ds.X, ds.y, cfg, features_per_split, tree.nodes, rng};
        builder.build(rows, 0);
    }
    return forest;
}

std::vector<int> predict_tree(const Tree& tree, const Matrix& X) {
    if (tree.nodes.empty()) {
        throw std::invalid_argument("predict_tree: empty tree");
    }
    std::vector<int> out(static_cast<std::size_t>(X.rows()));
    for (Index i = 0; i < X.rows(); ++i) {
        const TreeNode* node = &tree.nodes[0];
        while (!node->is_leaf()) {
            int next = X(i, node->feature) < node->threshold ? node->left : node->right;
            node = &tree.nodes[static_cast<std::size_t>(next)];
        }
        out[static_cast<std::size_t>(i)] = leaf_label(*node);
    }
    return out;
}

std::vector<int> predict_forest(const Forest& forest, const Matrix& X) {
    if (forest.trees.empty()) {
        throw std::invalid_argument("predict_forest: empty forest");
    }
    if (X.cols() != forest.num_features) {
        throw std::invalid_argument("predict_forest: expected " +
                                    std::to_string(forest.num_features) + " features, got " +
                                    std::to_string(X.cols()));
    }
    std::vector<long> votes(static_cast<std::size_t>(X.rows()), 0);
    for (const auto& tree : forest.trees) {
        auto labels = predict_tree(tree, X);
        for (std::size_t i = 0; i < labels.size(); ++i) {
            votes[i] += labels[i];
        }
    }
    std::vector<int> out(votes.size());
    const long total = static_cast<long>(forest.trees.size());
    for (std::size_t i = 0; i < votes.size(); ++i) {
        out[i] = 2 * votes[i] > total ? 1 : 0;
    }
    return out;
}

ImportanceReport permutation_importance(const Classifier& classify, const Dataset& ds,
                                        int repeats, std::uint64_t seed) {
    if (repeats < 1) {
        throw std::invalid_argument("permutation_importance: repeats must be positive");
    }
    if (ds.rows() == 0) {
        throw std::invalid_argument("permutation_importance: empty dataset");
    }

    ImportanceReport report;
    report.repeats = repeats;
    report.baseline_accuracy = accuracy(classify(ds.X), ds.y);
    report.scores.assign(static_cast<std::size_t>(ds.cols()), 0.0);

    const Index n = ds.rows();
    Matrix work = ds.X;
    std::vector<Index> perm(static_cast<std::size_t>(n));
    for (Index f = 0; f < ds.cols(); ++f) {
        Vector original = ds.X.col(f);
        double drop_sum = 0.0;
        for (int r = 0; r < repeats; ++r) {
            std::iota(perm.begin(), perm.end(), Index{0});
            Rng rng(derive_seed(seed, SeedStream::kPermute,
                                {static_cast<std::uint64_t>(f), static_cast<std::uint64_t>(r)}));
            std::shuffle(perm.begin(), perm.end(), rng);
            for (Index i = 0; i < n; ++i) {
                work(i, f) = original(perm[static_cast<std::size_t>(i)]);
            }
            drop_sum += report.baseline_accuracy - accuracy(classify(work), ds.y);
        }
        work.col(f) = original;
        report.scores[static_cast<std::size_t>(f)] = drop_sum / static_cast<double>(repeats);
    }
    return report;
}

Index top_feature(const ImportanceReport& report) {
    if (report.scores.empty()) {
        throw std::invalid_argument("top_feature: empty report");
    }
    auto it = std::max_element(report.scores.begin(), report.scores.end());
    return static_cast<Index>(it - report.scores.begin());
}

void save_importance_csv(const ImportanceReport& report,
                         std::span<const std::string> feature_names,
                         const std::filesystem::path& path) {
    if (feature_names.size() != report.scores.size()) {
        throw std::invalid_argument("feature name count does not match scores");
    }
    std::ofstream file(path);
    if (!file) {
        throw std::runtime_error("cannot write " + path.string());
    }
    file << "feature,importance\n";
    char buffer[64];
    for (std::size_t i = 0; i < report.scores.size(); ++i) {
        std::snprintf(buffer, sizeof(buffer), "%.17g", report.scores[i]);
        file << feature_names[i] << ',' << buffer << '\n';
    }
    if (!file) {
        throw std::runtime_error("write failed for " + path.string());
    }
}

}  // namespace fedpoison
