#include "fedpoison/runner.hpp"

#include <CLI11.hpp>

#include <cstdint>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace {

using namespace fedpoison;

const std::map<std::string, AttackKind> kAttackNames{
    {"lf", AttackKind::kLabelFlip},
    {"fp", AttackKind::kFeaturePoison},
};

struct EngineFlags {
    double percent = 1.0;
    long feature_index = -1;
    std::string fp_step3 = "on";
    int rounds = 20;
    int local_epochs = 1;
    int batch_size = 1000;
    double learning_rate = 0.0;
    double momentum = 0.9;
    double dropout = 0.5;
    std::uint64_t seed = 0;
    bool quiet = false;
};

void add_engine_flags(CLI::App* cmd, EngineFlags& flags, bool with_percent) {
    if (with_percent) {
        cmd->add_option("--percent", flags.percent, "Poison percentage in [0, 100]")
            ->check(CLI::Range(0.0, 100.0));
    }
    cmd->add_option("--feature-index", flags.feature_index,
                    "Column to poison (fp only); negative lets the attacker pick by "
                    "feature importance");
    cmd->add_option("--fp-step3", flags.fp_step3,
                    "Rewrite the whole poisoned column with class means before the "
                    "random overwrites (fp only)")
        ->check(CLI::IsMember({"on", "off"}));
    cmd->add_option("--rounds", flags.rounds, "Federated rounds")->check(CLI::NonNegativeNumber);
    cmd->add_option("--local-epochs", flags.local_epochs, "Local epochs per round")
        ->check(CLI::NonNegativeNumber);
    cmd->add_option("--batch-size", flags.batch_size, "Mini-batch size (at least 2)");
    cmd->add_option("--lr", flags.learning_rate,
                    "Fixed learning rate; omit (or pass 0) to sample one from "
                    "[1e-4, 9.9e-3] off the seed");
    cmd->add_option("--momentum", flags.momentum, "SGD momentum");
    cmd->add_option("--dropout", flags.dropout, "Dropout probability");
    cmd->add_option("--seed", flags.seed, "Master seed");
    cmd->add_flag("--quiet", flags.quiet, "Suppress per-round progress lines");
}

TrainConfig train_config(const EngineFlags& flags) {
    TrainConfig train;
    train.batch_size = flags.batch_size;
    train.learning_rate = flags.learning_rate;
    train.sgd_momentum = flags.momentum;
    train.dropout_p = flags.dropout;
    return train;
}

std::optional<Index> feature_index(const EngineFlags& flags) {
    if (flags.feature_index < 0) {
        return std::nullopt;
    }
    return static_cast<Index>(flags.feature_index);
}

void print_record(const ExperimentRecord& record) {
    std::cout << "scenario " << record.scenario_id << "\n"
              << "  poison_percent   " << record.poison_percent << "\n"
              << "  server_accuracy  " << record.server_accuracy << "\n";
    if (record.asr) {
        std::cout << "  asr              " << *record.asr << "\n"
                  << "  success          " << (*record.success ? "true" : "false") << "\n";
    }
    std::cout << "  learning_rate    " << record.learning_rate_used << "\n"
              << "  seed             " << record.seed << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Federated-learning data-poisoning simulator (label flipping and "
                 "feature poisoning against a two-client FedAvg MLP)"};
    app.require_subcommand(1);
    app.set_config("--config", "", "Read options from an INI file (command-line flags win)");

    // prepare
    auto* prepare = app.add_subcommand(
        "prepare", "Load or generate a dataset, preprocess, split, and write shards");
    std::string dataset_path;
    bool synthetic = false;
    int label_column = -1;
    std::string name;
    int clients = 2;
    std::uint64_t prep_seed = 0;
    std::string out_dir;
    double fill_value = 0.0;
    bool no_normalize = false;
    long syn_rows = 1000, syn_dims = 8, syn_informative = 0;
    double syn_separation = 4.0, syn_noise_sd = 1.0;
    auto* dataset_opt =
        prepare->add_option("--dataset", dataset_path, "CSV file with a header row");
    prepare->add_flag("--synthetic", synthetic, "Generate synthetic data instead")
        ->excludes(dataset_opt);
    prepare->add_option("--label-column", label_column,
                        "Zero-based label column; negative means the last column");
    prepare->add_option("--name", name, "Dataset name used in scenario ids");
    prepare->add_option("--clients", clients, "Number of federated clients")
        ->check(CLI::PositiveNumber);
    prepare->add_option("--seed", prep_seed, "Master seed for splitting and generation");
    prepare->add_option("--out", out_dir, "Output directory")->required();
    prepare->add_option("--fill", fill_value, "Fill value for missing cells");
    prepare->add_flag("--no-normalize", no_normalize, "Skip min-max normalization");
    prepare->add_option("--rows", syn_rows, "Synthetic: number of rows");
    prepare->add_option("--dims", syn_dims, "Synthetic: number of features");
    prepare->add_option("--informative", syn_informative, "Synthetic: informative column");
    prepare->add_option("--separation", syn_separation,
                        "Synthetic: class separation in noise-sd units");
    prepare->add_option("--noise-sd", syn_noise_sd, "Synthetic: noise standard deviation");

    // importance
    auto* importance =
        app.add_subcommand("importance", "Rank features with a random forest and "
                                         "permutation importance");
    std::string imp_data;
    int imp_trees = 50, imp_depth = 10, imp_min_split = 10, imp_repeats = 5;
    std::uint64_t imp_seed = 0;
    importance->add_option("--data", imp_data, "Prepared data directory")->required();
    importance->add_option("--trees", imp_trees, "Trees in the forest")
        ->check(CLI::PositiveNumber);
    importance->add_option("--depth", imp_depth, "Maximum tree depth")
        ->check(CLI::PositiveNumber);
    importance->add_option("--min-split", imp_min_split, "Minimum samples to split");
    importance->add_option("--repeats", imp_repeats, "Permutation repeats per feature")
        ->check(CLI::PositiveNumber);
    importance->add_option("--seed", imp_seed, "Master seed");

    // run
    auto* run = app.add_subcommand("run", "Run one federated experiment");
    std::string run_data, run_attack;
    EngineFlags run_flags;
    run->add_option("--data", run_data, "Prepared data directory")->required();
    run->add_option("--attack", run_attack, "Attack kind: lf or fp; omit for a clean run")
        ->check(CLI::IsMember({"lf", "fp"}));
    add_engine_flags(run, run_flags, true);

    // sweep
    auto* sweep = app.add_subcommand(
        "sweep", "Run the baseline plus every (attack, percent) combination");
    std::string sweep_data;
    std::vector<std::string> sweep_attacks{"lf", "fp"};
    std::vector<double> sweep_percentages{1, 2, 3, 4, 5, 7, 10, 15, 20, 25};
    int workers = 1;
    int max_records = -1;
    EngineFlags sweep_flags;
    sweep->add_option("--data", sweep_data, "Prepared data directory")->required();
    sweep->add_option("--attacks", sweep_attacks, "Attack kinds to sweep")
        ->delimiter(',')
        ->check(CLI::IsMember({"lf", "fp"}));
    sweep->add_option("--percentages", sweep_percentages, "Poison percentages to sweep")
        ->delimiter(',');
    sweep->add_option("--workers", workers, "Parallel experiments")
        ->check(CLI::PositiveNumber);
    sweep->add_option("--max-records", max_records,
                      "Stop after this many new experiments (resume later)");
    add_engine_flags(sweep, sweep_flags, false);

    CLI11_PARSE(app, argc, argv);

    try {
        if (*prepare) {
            if (dataset_path.empty() && !synthetic) {
                std::cerr << "error: pass --dataset FILE or --synthetic\n";
                return 1;
            }
            PrepareOptions options;
            if (synthetic) {
                SyntheticSpec spec;
                spec.n = syn_rows;
                spec.d = syn_dims;
                spec.informative_feature = syn_informative;
                spec.class_separation = syn_separation;
                spec.noise_sd = syn_noise_sd;
                spec.seed = prep_seed;
                options.source = SyntheticSource{spec};
            } else {
                options.source = CsvSource{dataset_path, label_column};
            }
            options.preprocess = PreprocessConfig{fill_value, !no_normalize};
            options.clients = clients;
            options.seed = prep_seed;
            options.out_dir = out_dir;
            options.dataset_name = name;
            PrepareSummary summary = cmd_prepare(options);
            std::cout << "dataset " << summary.dataset_name << ": train "
                      << summary.train_rows << " (shards";
            for (Index rows : summary.shard_rows) {
                std::cout << ' ' << rows;
            }
            std::cout << "), validation " << summary.validation_rows << ", test "
                      << summary.test_rows << "\nwrote " << summary.manifest_path.string()
                      << "\n";
        } else if (*importance) {
            ImportanceOptions options;
            options.data_dir = imp_data;
            options.forest.n_trees = imp_trees;
            options.forest.max_depth = imp_depth;
            options.forest.min_samples_split = imp_min_split;
            options.repeats = imp_repeats;
            options.seed = imp_seed;
            ImportanceSummary summary = cmd_importance(options);
            std::cout << "baseline validation accuracy "
                      << summary.report.baseline_accuracy << "\n";
            for (std::size_t f = 0; f < summary.report.scores.size(); ++f) {
                std::cout << "  feature " << f << "  importance "
                          << summary.report.scores[f] << "\n";
            }
            std::cout << "top feature: " << summary.top << "\nwrote "
                      << summary.csv_path.string() << "\n";
        } else if (*run) {
            RunOptions options;
            options.data_dir = run_data;
            if (!run_attack.empty()) {
                options.attack = kAttackNames.at(run_attack);
            }
            options.percent = run_flags.percent;
            options.feature_index = feature_index(run_flags);
            options.fp_apply_step3 = run_flags.fp_step3 == "on";
            options.rounds = run_flags.rounds;
            options.local_epochs = run_flags.local_epochs;
            options.train = train_config(run_flags);
            options.seed = run_flags.seed;
            ExperimentRecord record =
                cmd_run(options, run_flags.quiet ? nullptr : &std::cout);
            print_record(record);
        } else if (*sweep) {
            SweepOptions options;
            options.data_dir = sweep_data;
            options.attacks.clear();
            for (const auto& kind : sweep_attacks) {
                options.attacks.push_back(kAttackNames.at(kind));
            }
            options.percentages = sweep_percentages;
            options.feature_index = feature_index(sweep_flags);
            options.fp_apply_step3 = sweep_flags.fp_step3 == "on";
            options.rounds = sweep_flags.rounds;
            options.local_epochs = sweep_flags.local_epochs;
            options.train = train_config(sweep_flags);
            options.seed = sweep_flags.seed;
            options.workers = workers;
            if (max_records >= 0) {
                options.max_records = max_records;
            }
            SweepSummary summary =
                cmd_sweep(options, sweep_flags.quiet ? nullptr : &std::cout);
            std::cout << "sweep finished: " << summary.completed << " completed, "
                      << summary.skipped << " skipped, " << summary.failed << " failed\n"
                      << "results: " << summary.results_path.string() << "\n";
            for (const auto& failure : summary.failures) {
                std::cerr << "failed: " << failure << "\n";
            }
            if (summary.failed > 0) {
                return 1;
            }
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
