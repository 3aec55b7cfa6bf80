#include "fedpoison/report.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <string>

namespace fedpoison {

namespace {

std::string four_decimals(double value) {
    char buffer[48];
    std::snprintf(buffer, sizeof(buffer), "%.4f", value);
    return buffer;
}

}  // namespace

bool classify_success(double accuracy, double asr, const SuccessRule& rule) {
    if (!(accuracy >= 0.0 && accuracy <= 1.0) || !(asr >= 0.0 && asr <= 1.0)) {
        throw std::invalid_argument("classify_success: accuracy and asr must lie in [0, 1]");
    }
    return accuracy >= rule.threshold && asr >= rule.threshold;
}

std::string scenario_id(const std::string& dataset_name,
                        const std::optional<AttackSpec>& attack) {
    std::string suffix;
    if (attack) {
        suffix = attack->kind == AttackKind::kLabelFlip ? "-LF" : "-FP";
    }
    return "N_BAU1^{" + dataset_name + suffix + "}";
}

ExperimentRecord make_record(const std::string& dataset_name,
                             const std::optional<AttackSpec>& attack,
                             const ExperimentOutcome& outcome, std::uint64_t seed,
                             const SuccessRule& rule) {
    ExperimentRecord record;
    record.scenario_id = scenario_id(dataset_name, attack);
    record.poison_percent = attack ? attack->percent : 0.0;
    if (!outcome.round_logs.empty()) {
        record.client_losses = outcome.round_logs.back().client_losses;
    }
    record.server_accuracy = outcome.server_test_accuracy;
    record.asr = outcome.asr;
    if (outcome.asr) {
        record.success = classify_success(outcome.server_test_accuracy, *outcome.asr, rule);
    }
    record.learning_rate_used = outcome.learning_rate_used;
    record.seed = seed;
    return record;
}

void export_csv(std::span<const ExperimentRecord> records,
                const std::filesystem::path& path) {
    std::size_t clients = 2;
    if (!records.empty()) {
        clients = records[0].client_losses.size();
        for (const auto& record : records) {
            if (record.client_losses.size() != clients) {
                throw std::invalid_argument(
                    "export_csv: records disagree on the number of clients");
            }
        }
    }

    std::vector<ExperimentRecord> sorted(records.begin(), records.end());
    std::stable_sort(sorted.begin(), sorted.end(),
                     [](const ExperimentRecord& a, const ExperimentRecord& b) {
                         if (a.scenario_id != b.scenario_id) {
                             return a.scenario_id < b.scenario_id;
                         }
                         return a.poison_percent < b.poison_percent;
                     });

    std::ofstream file(path);
    if (!file) {
        throw std::runtime_error("cannot write " + path.string());
    }
    file << "scenario_id,poison_percent";
    for (std::size_t c = 1; c <= clients; ++c) {
        file << ",client_" << c << "_loss";
    }
    file << ",server_accuracy,asr,success,learning_rate_used,seed\n";
    for (const auto& record : sorted) {
        file << record.scenario_id << ',' << four_decimals(record.poison_percent);
        for (double loss : record.client_losses) {
            file << ',' << four_decimals(loss);
        }
        file << ',' << four_decimals(record.server_accuracy);
        file << ',' << (record.asr ? four_decimals(*record.asr) : "");
        file << ',' << (record.success ? (*record.success ? "true" : "false") : "");
        file << ',' << four_decimals(record.learning_rate_used);
        file << ',' << record.seed << '\n';
    }
    if (!file) {
        throw std::runtime_error("write failed for " + path.string());
    }
}

}  // namespace fedpoison
