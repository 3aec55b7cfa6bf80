#include "fedpoison/runner.hpp"

#include "fedpoison/errors.hpp"
#include "fedpoison/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>
#include <utility>

namespace fedpoison {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string upper(std::string s) {
    for (char& c : s) {
        c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    }
    return s;
}

long long percent_key(double percent) {
    return std::llround(percent * 1e6);
}

/// Experiment seeds depend on the master seed and the poison percent
/// only — not the attack kind — so a 0% attack run and the baseline see
/// identical randomness end to end.
std::uint64_t experiment_seed(std::uint64_t master, double percent) {
    return derive_seed(master, SeedStream::kExperiment,
                       {static_cast<std::uint64_t>(percent_key(percent))});
}

json record_to_json(const ExperimentRecord& record) {
    json j;
    j["scenario_id"] = record.scenario_id;
    j["poison_percent"] = record.poison_percent;
    j["client_losses"] = record.client_losses;
    j["server_accuracy"] = record.server_accuracy;
    j["asr"] = record.asr ? json(*record.asr) : json(nullptr);
    j["success"] = record.success ? json(*record.success) : json(nullptr);
    j["learning_rate_used"] = record.learning_rate_used;
    j["seed"] = record.seed;
    return j;
}

ExperimentRecord record_from_json(const json& j) {
    ExperimentRecord record;
    record.scenario_id = j.at("scenario_id").get<std::string>();
    record.poison_percent = j.at("poison_percent").get<double>();
    record.client_losses = j.at("client_losses").get<std::vector<double>>();
    record.server_accuracy = j.at("server_accuracy").get<double>();
    if (!j.at("asr").is_null()) {
        record.asr = j.at("asr").get<double>();
    }
    if (!j.at("success").is_null()) {
        record.success = j.at("success").get<bool>();
    }
    record.learning_rate_used = j.at("learning_rate_used").get<double>();
    record.seed = j.at("seed").get<std::uint64_t>();
    return record;
}

std::vector<ExperimentRecord> read_journal(const fs::path& path) {
    std::vector<ExperimentRecord> records;
    std::ifstream file(path);
    if (!file) {
        return records;
    }
    std::string line;
    long line_number = 0;
    while (std::getline(file, line)) {
        ++line_number;
        if (line.empty()) {
            continue;
        }
        try {
            records.push_back(record_from_json(json::parse(line)));
        } catch (const json::exception& e) {
            throw std::runtime_error(path.string() + ":" + std::to_string(line_number) +
                                     ": corrupt journal entry: " + e.what());
        }
    }
    return records;
}

void append_journal(const fs::path& path, const ExperimentRecord& record) {
    std::ofstream file(path, std::ios::app);
    if (!file) {
        throw std::runtime_error("cannot append to " + path.string());
    }
    file << record_to_json(record).dump() << '\n';
    file.flush();
    if (!file) {
        throw std::runtime_error("write failed for " + path.string());
    }
}

void rebuild_results(const fs::path& dir) {
    export_csv(read_journal(dir / "records.jsonl"), dir / "results.csv");
}

Dataset concat_shards(const std::vector<Dataset>& shards) {
    Index total = 0;
    for (const auto& shard : shards) {
        total += shard.rows();
    }
    Dataset train;
    train.feature_names = shards[0].feature_names;
    train.X.resize(total, shards[0].cols());
    train.y.reserve(static_cast<std::size_t>(total));
    Index at = 0;
    for (const auto& shard : shards) {
        train.X.middleRows(at, shard.rows()) = shard.X;
        train.y.insert(train.y.end(), shard.y.begin(), shard.y.end());
        at += shard.rows();
    }
    return train;
}

struct EngineOptions {
    int rounds = 20;
    int local_epochs = 1;
    TrainConfig train;
    std::uint64_t master_seed = 0;
    std::optional<Index> feature_index;
    bool fp_apply_step3 = true;
};

std::optional<AttackSpec> build_attack(std::optional<AttackKind> kind, double percent,
                                       const EngineOptions& eo, std::uint64_t eseed) {
    if (!kind) {
        return std::nullopt;
    }
    AttackSpec spec;
    spec.kind = *kind;
    spec.percent = percent;
    spec.target_client = 0;
    spec.feature_index = eo.feature_index;
    spec.fp_apply_step3 = eo.fp_apply_step3;
    spec.seed = derive_seed(eseed, SeedStream::kAttack);
    return spec;
}

ExperimentRecord run_one(const PreparedData& data, std::optional<AttackKind> kind,
                         double percent, const EngineOptions& eo,
                         const RoundObserver& observer) {
    const std::uint64_t eseed = experiment_seed(eo.master_seed, kind ? percent : 0.0);
    auto attack = build_attack(kind, percent, eo, eseed);

    FederationConfig fed;
    fed.num_clients = static_cast<int>(data.bundle.client_shards.size());
    fed.rounds = eo.rounds;
    fed.local_epochs = eo.local_epochs;
    fed.train = eo.train;
    fed.seed = eseed;

    ExperimentOutcome outcome = run_experiment(data.bundle, attack, fed, observer);
    return make_record(data.dataset_name, attack, outcome, eo.master_seed);
}

RoundObserver make_observer(std::ostream* log, std::mutex* mutex,
                            const std::string& scenario, double percent) {
    if (!log) {
        return {};
    }
    return [log, mutex, scenario, percent](const RoundLog& rl) {
        std::ostringstream line;
        line << "scenario=" << scenario << " percent=" << percent << " round=" << rl.round
             << " losses=";
        for (std::size_t i = 0; i < rl.client_losses.size(); ++i) {
            line << (i ? "," : "") << rl.client_losses[i];
        }
        line << " val_acc=" << rl.server_val_accuracy << '\n';
        if (mutex) {
            std::lock_guard<std::mutex> lock(*mutex);
            *log << line.str() << std::flush;
        } else {
            *log << line.str() << std::flush;
        }
    };
}

}  // namespace

PrepareSummary cmd_prepare(const PrepareOptions& options) {
    if (options.out_dir.empty()) {
        throw std::invalid_argument("prepare needs an output directory");
    }

    Dataset ds;
    std::string name = options.dataset_name;
    if (const auto* csv = std::get_if<CsvSource>(&options.source)) {
        RawTable table = load_csv(csv->path, csv->label_column);
        ds = preprocess(table, options.preprocess);
        if (name.empty()) {
            name = upper(csv->path.stem().string());
        }
    } else {
        ds = gen_synthetic(std::get<SyntheticSource>(options.source).spec);
        if (name.empty()) {
            name = "SYN";
        }
    }

    SplitBundle bundle = split(ds, options.clients, options.seed);
    fs::create_directories(options.out_dir);

    PrepareSummary summary;
    summary.dataset_name = name;
    summary.train_rows = bundle.train_rows();
    summary.validation_rows = bundle.validation.rows();
    summary.test_rows = bundle.test.rows();

    json manifest;
    manifest["dataset_name"] = name;
    manifest["seed"] = options.seed;
    manifest["clients"] = options.clients;
    manifest["feature_names"] = ds.feature_names;
    std::vector<std::string> shard_files;
    for (std::size_t i = 0; i < bundle.client_shards.size(); ++i) {
        std::string file = "shard_" + std::to_string(i) + ".csv";
        save_csv(bundle.client_shards[i], options.out_dir / file);
        shard_files.push_back(file);
        summary.shard_rows.push_back(bundle.client_shards[i].rows());
    }
    save_csv(bundle.validation, options.out_dir / "validation.csv");
    save_csv(bundle.test, options.out_dir / "test.csv");
    manifest["files"] = {{"shards", shard_files},
                         {"validation", "validation.csv"},
                         {"test", "test.csv"}};
    manifest["rows"] = {{"train", summary.train_rows},
                        {"validation", summary.validation_rows},
                        {"test", summary.test_rows}};
    manifest["shard_rows"] = summary.shard_rows;

    summary.manifest_path = options.out_dir / "manifest.json";
    std::ofstream file(summary.manifest_path);
    if (!file) {
        throw std::runtime_error("cannot write " + summary.manifest_path.string());
    }
    file << manifest.dump(2) << '\n';
    if (!file) {
        throw std::runtime_error("write failed for " + summary.manifest_path.string());
    }
    return summary;
}

PreparedData load_prepared(const std::filesystem::path& dir) {
    const fs::path manifest_path = dir / "manifest.json";
    std::ifstream file(manifest_path);
    if (!file) {
        throw std::runtime_error("no prepared data at " + dir.string() +
                                 " (missing manifest.json); run the prepare command first");
    }
    json manifest;
    try {
        manifest = json::parse(file);
    } catch (const json::exception& e) {
        throw std::runtime_error(manifest_path.string() + ": corrupt manifest: " + e.what());
    }

    PreparedData data;
    try {
        data.dataset_name = manifest.at("dataset_name").get<std::string>();
        data.seed = manifest.at("seed").get<std::uint64_t>();
        // Stored shards hold final feature values; re-normalizing here
        // would distort them.
        const PreprocessConfig verbatim{0.0, false};
        for (const auto& entry : manifest.at("files").at("shards")) {
            RawTable table = load_csv(dir / entry.get<std::string>());
            data.bundle.client_shards.push_back(preprocess(table, verbatim));
        }
        RawTable val = load_csv(dir / manifest.at("files").at("validation").get<std::string>());
        data.bundle.validation = preprocess(val, verbatim);
        RawTable test = load_csv(dir / manifest.at("files").at("test").get<std::string>());
        data.bundle.test = preprocess(test, verbatim);
    } catch (const json::exception& e) {
        throw std::runtime_error(manifest_path.string() + ": manifest missing fields: " +
                                 e.what());
    }
    if (data.bundle.client_shards.empty()) {
        throw std::runtime_error(manifest_path.string() + ": no client shards listed");
    }
    return data;
}

ImportanceSummary cmd_importance(const ImportanceOptions& options) {
    PreparedData data = load_prepared(options.data_dir);
    Dataset train = concat_shards(data.bundle.client_shards);

    ForestConfig fc = options.forest;
    fc.seed = derive_seed(options.seed, SeedStream::kImportance);
    Forest forest = fit_forest(train, fc);
    auto classify = [&forest](const Matrix& X) { return predict_forest(forest, X); };
    ImportanceSummary summary;
    summary.report = permutation_importance(
        classify, data.bundle.validation, options.repeats,
        derive_seed(options.seed, SeedStream::kImportance, {1}));
    summary.top = top_feature(summary.report);
    summary.csv_path = options.data_dir / "importance.csv";
    save_importance_csv(summary.report, train.feature_names, summary.csv_path);
    return summary;
}

ExperimentRecord cmd_run(const RunOptions& options, std::ostream* log) {
    PreparedData data = load_prepared(options.data_dir);
    EngineOptions eo{options.rounds, options.local_epochs, options.train, options.seed,
                     options.feature_index, options.fp_apply_step3};

    auto preview = build_attack(options.attack, options.percent, eo, 0);
    auto observer = make_observer(log, nullptr, scenario_id(data.dataset_name, preview),
                                  options.attack ? options.percent : 0.0);

    ExperimentRecord record = run_one(data, options.attack, options.percent, eo, observer);
    append_journal(options.data_dir / "records.jsonl", record);
    rebuild_results(options.data_dir);
    return record;
}

SweepSummary cmd_sweep(const SweepOptions& options, std::ostream* log) {
    if (options.workers < 1) {
        throw std::invalid_argument("sweep needs at least one worker");
    }
    for (double p : options.percentages) {
        if (!(p >= 0.0 && p <= 100.0)) {
            throw std::invalid_argument("sweep percentage " + std::to_string(p) +
                                        " out of [0, 100]");
        }
    }
    PreparedData data = load_prepared(options.data_dir);
    EngineOptions eo{options.rounds, options.local_epochs, options.train, options.seed,
                     options.feature_index, options.fp_apply_step3};

    struct Job {
        std::optional<AttackKind> kind;
        double percent = 0.0;
        std::string scenario;
    };
    std::vector<Job> jobs;
    jobs.push_back({std::nullopt, 0.0, scenario_id(data.dataset_name, std::nullopt)});
    for (AttackKind kind : options.attacks) {
        for (double percent : options.percentages) {
            AttackSpec spec;
            spec.kind = kind;
            jobs.push_back({kind, percent, scenario_id(data.dataset_name, spec)});
        }
    }

    SweepSummary summary;
    summary.results_path = options.data_dir / "results.csv";
    std::set<std::pair<std::string, long long>> seen;
    for (const auto& record : read_journal(options.data_dir / "records.jsonl")) {
        seen.insert({record.scenario_id, percent_key(record.poison_percent)});
    }
    std::vector<Job> pending;
    for (auto& job : jobs) {
        auto key = std::make_pair(job.scenario, percent_key(job.percent));
        if (seen.insert(key).second) {
            pending.push_back(std::move(job));
        } else {
            ++summary.skipped;
        }
    }
    if (options.max_records && static_cast<int>(pending.size()) > *options.max_records) {
        pending.resize(static_cast<std::size_t>(std::max(0, *options.max_records)));
    }

    std::mutex io_mutex;
    std::atomic<std::size_t> cursor{0};
    auto work = [&]() {
        for (;;) {
            std::size_t i = cursor.fetch_add(1);
            if (i >= pending.size()) {
                return;
            }
            const Job& job = pending[i];
            auto observer = make_observer(log, &io_mutex, job.scenario, job.percent);
            try {
                ExperimentRecord record = run_one(data, job.kind, job.percent, eo, observer);
                std::lock_guard<std::mutex> lock(io_mutex);
                append_journal(options.data_dir / "records.jsonl", record);
                ++summary.completed;
                if (log) {
                    *log << "completed scenario=" << job.scenario << " percent=" << job.percent
                         << " accuracy=" << record.server_accuracy << '\n'
                         << std::flush;
                }
            } catch (const std::exception& e) {
                std::lock_guard<std::mutex> lock(io_mutex);
                ++summary.failed;
                summary.failures.push_back(job.scenario + " at " +
                                           std::to_string(job.percent) + "%: " + e.what());
                if (log) {
                    *log << "failed scenario=" << job.scenario << " percent=" << job.percent
                         << ": " << e.what() << '\n'
                         << std::flush;
                }
            }
        }
    };

    const int workers =
        std::min<int>(options.workers, std::max<int>(1, static_cast<int>(pending.size())));
    if (workers <= 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(static_cast<std::size_t>(workers));
        for (int w = 0; w < workers; ++w) {
            pool.emplace_back(work);
        }
        for (auto& thread : pool) {
            thread.join();
        }
    }

    rebuild_results(options.data_dir);
    return summary;
}

}  // namespace fedpoison
