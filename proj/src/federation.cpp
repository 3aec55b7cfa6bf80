#include "fedpoison/federation.hpp"

#include "fedpoison/errors.hpp"
#include "fedpoison/forest.hpp"
#include "fedpoison/rng.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace fedpoison {

namespace {

bool same_shape(const Bau1Params& a, const Bau1Params& b) {
    return a.layer1.weights.rows() == b.layer1.weights.rows() &&
           a.layer1.weights.cols() == b.layer1.weights.cols() &&
           a.layer2.weights.rows() == b.layer2.weights.rows() &&
           a.layer2.weights.cols() == b.layer2.weights.cols() &&
           a.layer3.weights.rows() == b.layer3.weights.rows() &&
           a.layer3.weights.cols() == b.layer3.weights.cols();
}

/// out += frac * (x - anchor), the anchored-average contribution of one
/// participant. Anchoring at the first participant makes averaging
/// identical inputs return them bit-for-bit.
template <typename T>
void blend(T& out, const T& anchor, const T& x, double frac) {
    out += frac * (x - anchor);
}

void blend_params(Bau1Params& out, const Bau1Params& anchor, const Bau1Params& x,
                  double frac) {
    blend(out.layer1.weights, anchor.layer1.weights, x.layer1.weights, frac);
    blend(out.layer1.bias, anchor.layer1.bias, x.layer1.bias, frac);
    blend(out.bn1.gamma, anchor.bn1.gamma, x.bn1.gamma, frac);
    blend(out.bn1.beta, anchor.bn1.beta, x.bn1.beta, frac);
    blend(out.bn1.running_mean, anchor.bn1.running_mean, x.bn1.running_mean, frac);
    blend(out.bn1.running_var, anchor.bn1.running_var, x.bn1.running_var, frac);
    blend(out.layer2.weights, anchor.layer2.weights, x.layer2.weights, frac);
    blend(out.layer2.bias, anchor.layer2.bias, x.layer2.bias, frac);
    blend(out.bn2.gamma, anchor.bn2.gamma, x.bn2.gamma, frac);
    blend(out.bn2.beta, anchor.bn2.beta, x.bn2.beta, frac);
    blend(out.bn2.running_mean, anchor.bn2.running_mean, x.bn2.running_mean, frac);
    blend(out.bn2.running_var, anchor.bn2.running_var, x.bn2.running_var, frac);
    blend(out.layer3.weights, anchor.layer3.weights, x.layer3.weights, frac);
    blend(out.layer3.bias, anchor.layer3.bias, x.layer3.bias, frac);
}

}  // namespace

Bau1Params fed_avg(std::span<const Bau1Params> params_list, std::span<const double> weights) {
    if (params_list.empty()) {
        throw std::invalid_argument("fed_avg: no participants");
    }
    if (weights.size() != params_list.size()) {
        throw std::invalid_argument("fed_avg: " + std::to_string(params_list.size()) +
                                    " participants but " + std::to_string(weights.size()) +
                                    " weights");
    }
    double total = 0.0;
    for (double w : weights) {
        if (!(w >= 0.0) || !std::isfinite(w)) {
            throw std::invalid_argument("fed_avg: weights must be finite and non-negative");
        }
        total += w;
    }
    if (!(total > 0.0)) {
        throw std::invalid_argument("fed_avg: weights sum to zero");
    }
    for (const auto& p : params_list) {
        if (!same_shape(params_list[0], p)) {
            throw std::invalid_argument("fed_avg: participant shapes differ");
        }
    }

    Bau1Params out = params_list[0];
    for (std::size_t i = 1; i < params_list.size(); ++i) {
        blend_params(out, params_list[0], params_list[i], weights[i] / total);
    }
    return out;
}

std::pair<Bau1Params, RoundLog> run_round(const Bau1Params& server,
                                          std::span<const Dataset> shards,
                                          const Dataset& validation,
                                          const FederationConfig& cfg, int round_index) {
    if (shards.empty()) {
        throw std::invalid_argument("run_round: no client shards");
    }

    std::vector<Bau1Params> fitted;
    std::vector<double> weights;
    RoundLog log;
    log.round = round_index;
    fitted.reserve(shards.size());
    for (std::size_t i = 0; i < shards.size(); ++i) {
        TrainConfig client_cfg = cfg.train;
        client_cfg.epochs = cfg.local_epochs;
        client_cfg.seed = derive_seed(cfg.seed, SeedStream::kClient,
                                      {static_cast<std::uint64_t>(i),
                                       static_cast<std::uint64_t>(round_index)});
        LocalFit fit = train_local(server, shards[i], client_cfg);
        log.client_losses.push_back(fit.final_epoch_loss);
        weights.push_back(static_cast<double>(shards[i].rows()));
        fitted.push_back(std::move(fit.params));
    }

    Bau1Params next = fed_avg(fitted, weights);
    log.server_val_accuracy = evaluate(next, validation);
    return {std::move(next), std::move(log)};
}

double sample_learning_rate(std::uint64_t seed) {
    Rng rng(derive_seed(seed, SeedStream::kLearningRate));
    return std::uniform_real_distribution<double>(1e-4, 9.9e-3)(rng);
}

ExperimentOutcome run_experiment(const SplitBundle& bundle,
                                 const std::optional<AttackSpec>& attack,
                                 const FederationConfig& cfg, const RoundObserver& observer) {
    const std::size_t k = bundle.client_shards.size();
    if (k == 0) {
        throw std::invalid_argument("run_experiment: bundle has no client shards");
    }
    if (cfg.num_clients != static_cast<int>(k)) {
        throw std::invalid_argument("run_experiment: cfg.num_clients is " +
                                    std::to_string(cfg.num_clients) + " but the bundle has " +
                                    std::to_string(k) + " shards");
    }
    if (bundle.validation.rows() == 0 || bundle.test.rows() == 0) {
        throw std::invalid_argument("run_experiment: empty validation or test set");
    }
    if (cfg.rounds < 0 || cfg.local_epochs < 0) {
        throw std::invalid_argument("run_experiment: negative rounds or local epochs");
    }

    FederationConfig fed = cfg;
    if (fed.train.learning_rate <= 0.0) {
        fed.train.learning_rate = sample_learning_rate(cfg.seed);
    }

    ExperimentOutcome outcome;
    outcome.learning_rate_used = fed.train.learning_rate;

    std::vector<Dataset> shards = bundle.client_shards;
    std::optional<FpStats> fp_stats;
    std::optional<AttackSpec> resolved = attack;
    if (resolved) {
        if (resolved->target_client < 0 || resolved->target_client >= static_cast<int>(k)) {
            throw std::invalid_argument("run_experiment: target client out of range");
        }
        Dataset& target = shards[static_cast<std::size_t>(resolved->target_client)];
        if (resolved->kind == AttackKind::kLabelFlip) {
            auto [poisoned, report] =
                flip_labels(target, resolved->percent, resolved->seed);
            target = std::move(poisoned);
            outcome.poison_report = report;
        } else {
            if (!resolved->feature_index) {
                // Pick the attacker's best feature: a forest fit on their
                // own shard, scored on the validation set.
                ForestConfig fc;
                fc.seed = derive_seed(resolved->seed, SeedStream::kImportance);
                Forest forest = fit_forest(target, fc);
                auto classify = [&forest](const Matrix& X) {
                    return predict_forest(forest, X);
                };
                auto importance = permutation_importance(
                    classify, bundle.validation, 5,
                    derive_seed(resolved->seed, SeedStream::kImportance, {1}));
                resolved->feature_index = top_feature(importance);
            }
            try {
                FpPoisonResult result = fp_poison(target, *resolved);
                target = std::move(result.shard);
                fp_stats = result.stats;
                outcome.poison_report = result.report;
            } catch (const DegenerateColumnError& e) {
                throw DegenerateColumnError(
                    "feature-poisoning attack on client " +
                    std::to_string(resolved->target_client) + " at " +
                    std::to_string(resolved->percent) + "%: " + e.what());
            }
            outcome.fp_feature_index = resolved->feature_index;
        }
    }

    Bau1Params params = init_params(shards[0].cols(), fed.seed);
    for (int round = 0; round < fed.rounds; ++round) {
        auto [next, log] = run_round(params, shards, bundle.validation, fed, round);
        params = std::move(next);
        outcome.round_logs.push_back(log);
        if (observer) {
            observer(outcome.round_logs.back());
        }
    }

    outcome.server_test_accuracy = evaluate(params, bundle.test);
    if (resolved) {
        if (resolved->kind == AttackKind::kLabelFlip) {
            outcome.asr = evaluate(params, lf_asr_testset(bundle.test));
        } else {
            outcome.asr =
                evaluate(params, fp_asr_testset(bundle.test, *resolved->feature_index,
                                                *fp_stats));
        }
    }
    outcome.final_params = std::move(params);
    return outcome;
}

}  // namespace fedpoison
