#pragma once

#include "fedpoison/attacks.hpp"
#include "fedpoison/dataset.hpp"
#include "fedpoison/nn.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <utility>
#include <vector>

namespace fedpoison {

struct FederationConfig {
    int num_clients = 2;
    int rounds = 20;
    int local_epochs = 1;
    /// Template for each client's local fit; epochs and seed are filled
    /// in per client per round. A non-positive learning_rate means
    /// "sample one from the seed" (run_experiment resolves it up front).
    TrainConfig train;
    std::uint64_t seed = 0;
};

struct RoundLog {
    int round = 0;
    std::vector<double> client_losses;
    double server_val_accuracy = 0.0;
};

struct ExperimentOutcome {
    Bau1Params final_params;
    std::vector<RoundLog> round_logs;
    double server_test_accuracy = 0.0;
    std::optional<double> asr;
    double learning_rate_used = 0.0;
    std::optional<PoisonReport> poison_report;
    std::optional<Index> fp_feature_index;
};

using RoundObserver = std::function<void(const RoundLog&)>;

/// Weighted average of parameter sets, anchored at the first one:
/// out = x0 + sum_i (w_i / W) (x_i - x0). Weights must be non-negative
/// with a positive sum. Running statistics average like parameters.
Bau1Params fed_avg(std::span<const Bau1Params> params_list,
                   std::span<const double> weights);

/// One federated round: every client fits locally from the server
/// params (seeded by client index and round), then fed_avg with
/// shard-size weights. Returns the new server params and the log entry.
std::pair<Bau1Params, RoundLog> run_round(const Bau1Params& server,
                                          std::span<const Dataset> shards,
                                          const Dataset& validation,
                                          const FederationConfig& cfg,
                                          int round_index);

/// Full pipeline: optionally poison the target client's shard, then run
/// cfg.rounds federated rounds and measure test accuracy (plus ASR when
/// attacked). The learning rate, when not set explicitly, is sampled
/// once from [1e-4, 9.9e-3] off the experiment seed.
ExperimentOutcome run_experiment(const SplitBundle& bundle,
                                 const std::optional<AttackSpec>& attack,
                                 const FederationConfig& cfg,
                                 const RoundObserver& observer = {});

/// The learning rate run_experiment uses when cfg.train.learning_rate
/// is not positive.
double sample_learning_rate(std::uint64_t seed);

}  // namespace fedpoison
