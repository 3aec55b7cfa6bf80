#include "fedpoison/attacks.hpp"

#include "fedpoison/errors.hpp"
#include "fedpoison/rng.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>
#include <string>

namespace fedpoison {

namespace {

void check_percent(double percent) {
    if (!(percent >= 0.0 && percent <= 100.0)) {
        throw std::invalid_argument("percent must lie in [0, 100], got " +
                                    std::to_string(percent));
    }
}

void check_feature(const Dataset& ds, Index feature_index) {
    if (feature_index < 0 || feature_index >= ds.cols()) {
        throw std::invalid_argument("feature index " + std::to_string(feature_index) +
                                    " out of range for " + std::to_string(ds.cols()) +
                                    " features");
    }
}

}  // namespace

Index num_poison(Index n, double percent) {
    check_percent(percent);
    if (n < 0) {
        throw std::invalid_argument("negative shard size");
    }
    return static_cast<Index>(std::floor(static_cast<double>(n) * percent / 100.0));
}

std::pair<Dataset, PoisonReport> flip_labels(const Dataset& shard, double percent,
                                             std::uint64_t seed) {
    const Index n = shard.rows();
    const Index m = num_poison(n, percent);

    Dataset out = shard;
    // Partial Fisher-Yates: the first m entries become a uniform sample
    // without replacement.
    std::vector<Index> order(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) {
        order[static_cast<std::size_t>(i)] = i;
    }
    Rng rng(seed);
    for (Index i = 0; i < m; ++i) {
        std::uniform_int_distribution<Index> pick(i, n - 1);
        std::swap(order[static_cast<std::size_t>(i)],
                  order[static_cast<std::size_t>(pick(rng))]);
        auto& label = out.y[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])];
        label = 1 - label;
    }

    PoisonReport report;
    report.requested_percent = percent;
    report.num_values = m;
    report.num_actually_modified = m;
    return {std::move(out), report};
}

FpStats compute_fp_stats(const Dataset& shard, Index feature_index) {
    check_feature(shard, feature_index);
    const Index n = shard.rows();
    if (n == 0) {
        throw std::invalid_argument("empty shard");
    }

    FpStats stats;
    stats.min_value = shard.X.col(feature_index).minCoeff();
    stats.max_value = shard.X.col(feature_index).maxCoeff();
    if (!(stats.max_value > stats.min_value)) {
        throw DegenerateColumnError("feature " + std::to_string(feature_index) +
                                    " is constant (" + std::to_string(stats.min_value) +
                                    "), min-max scaling undefined");
    }

    double sum0 = 0.0, sum1 = 0.0;
    long n0 = 0, n1 = 0;
    std::set<double> zeros;
    for (Index i = 0; i < n; ++i) {
        double value = shard.X(i, feature_index);
        if (shard.y[static_cast<std::size_t>(i)] == 0) {
            sum0 += value;
            ++n0;
            zeros.insert(value);
        } else {
            sum1 += value;
            ++n1;
        }
    }
    if (n0 == 0 || n1 == 0) {
        throw std::invalid_argument("feature poisoning needs both labels in the shard");
    }

    const double range = stats.max_value - stats.min_value;
    stats.average_zero = sum0 / static_cast<double>(n0);
    stats.average_one = sum1 / static_cast<double>(n1);
    stats.normalized_avg_zero = (stats.average_zero - stats.min_value) / range;
    stats.normalized_avg_one = (stats.average_one - stats.min_value) / range;
    stats.unique_values.reserve(zeros.size());
    for (double value : zeros) {
        stats.unique_values.push_back((value - stats.min_value) / range);
    }
    return stats;
}

FpPoisonResult fp_poison(const Dataset& shard, const AttackSpec& spec) {
    check_percent(spec.percent);
    if (!spec.feature_index) {
        throw std::invalid_argument("fp_poison needs a resolved feature index");
    }
    const Index f = *spec.feature_index;

    FpPoisonResult result;
    result.stats = compute_fp_stats(shard, f);
    result.shard = shard;

    if (spec.fp_apply_step3) {
        for (Index i = 0; i < shard.rows(); ++i) {
            result.shard.X(i, f) = result.shard.y[static_cast<std::size_t>(i)] == 0
                                       ? result.stats.normalized_avg_zero
                                       : result.stats.normalized_avg_one;
        }
    }

    const Index budget = num_poison(shard.rows(), spec.percent);
    Rng rng(spec.seed);
    std::uniform_int_distribution<std::size_t> pick(0, result.stats.unique_values.size() - 1);
    Index modified = 0;
    for (Index i = 0; i < budget; ++i) {
        // One draw per scanned row, spent or not, so the stream position
        // depends only on the budget.
        std::size_t choice = pick(rng);
        if (result.shard.y[static_cast<std::size_t>(i)] == 1) {
            result.shard.X(i, f) = result.stats.unique_values[choice];
            ++modified;
        }
    }

    result.report.requested_percent = spec.percent;
    result.report.num_values = budget;
    result.report.num_actually_modified = modified;
    return result;
}

Dataset lf_asr_testset(const Dataset& test) {
    Dataset out = test;
    for (auto& label : out.y) {
        if (label != 0 && label != 1) {
            throw std::invalid_argument("labels must be 0 or 1");
        }
        label = 1 - label;
    }
    return out;
}

Dataset fp_asr_testset(const Dataset& test, Index feature_index, const FpStats& stats) {
    check_feature(test, feature_index);
    Dataset out = test;
    for (Index i = 0; i < out.rows(); ++i) {
        out.X(i, feature_index) = out.y[static_cast<std::size_t>(i)] == 0
                                      ? stats.normalized_avg_one
                                      : stats.normalized_avg_zero;
    }
    return out;
}

double asr(const Bau1Params& params, const Dataset& transformed_test) {
    return evaluate(params, transformed_test);
}

}  // namespace fedpoison
