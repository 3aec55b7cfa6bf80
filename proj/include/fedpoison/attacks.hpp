#pragma once

#include "fedpoison/dataset.hpp"
#include "fedpoison/nn.hpp"

#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

namespace fedpoison {

enum class AttackKind { kLabelFlip, kFeaturePoison };

struct AttackSpec {
    AttackKind kind = AttackKind::kLabelFlip;
    double percent = 0.0;
    int target_client = 0;
    /// Feature-poisoning column; when absent the runner picks the most
    /// important feature of the target shard.
    std::optional<Index> feature_index;
    /// Step 3 of the poisoning recipe (rewrite the whole column with
    /// class-conditional means) can be disabled to isolate step 4.
    bool fp_apply_step3 = true;
    std::uint64_t seed = 0;
};

/// Column statistics the feature-poisoning attack is built from. All of
/// them are computed on the shard before any modification.
struct FpStats {
    double min_value = 0.0;
    double max_value = 0.0;
    double average_zero = 0.0;  // mean over label-0 rows
    double average_one = 0.0;
    double normalized_avg_zero = 0.0;
    double normalized_avg_one = 0.0;
    /// Distinct label-0 column values, min-max normalized, ascending.
    std::vector<double> unique_values;
};

struct PoisonReport {
    double requested_percent = 0.0;
    Index num_values = 0;             // floor(n * percent / 100)
    Index num_actually_modified = 0;  // rows whose data changed in the final step
};

struct FpPoisonResult {
    Dataset shard;
    FpStats stats;
    PoisonReport report;
};

/// floor(n * percent / 100), the poison budget for an n-row shard.
Index num_poison(Index n, double percent);

/// Flips exactly num_poison(n, percent) labels, chosen uniformly without
/// replacement. Features are untouched.
std::pair<Dataset, PoisonReport> flip_labels(const Dataset& shard, double percent,
                                             std::uint64_t seed);

/// Throws DegenerateColumnError when the column is constant; requires
/// both labels present.
FpStats compute_fp_stats(const Dataset& shard, Index feature_index);

/// Feature poisoning. Step 3 (when enabled) rewrites every row's target
/// column with its class's normalized mean. Step 4 walks the first
/// num_values rows in shard order, drawing one random index into
/// unique_values per row, and overwrites the column only on label-1
/// rows.
FpPoisonResult fp_poison(const Dataset& shard, const AttackSpec& spec);

/// Test set for label-flip ASR: every label complemented.
Dataset lf_asr_testset(const Dataset& test);

/// Test set for feature-poisoning ASR: the target column carries the
/// opposite class's normalized mean.
Dataset fp_asr_testset(const Dataset& test, Index feature_index, const FpStats& stats);

/// Attack success rate: accuracy on an attack-transformed test set.
double asr(const Bau1Params& params, const Dataset& transformed_test);

}  // namespace fedpoison
