#pragma once

#include "fedpoison/attacks.hpp"
#include "fedpoison/federation.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace fedpoison {

struct ExperimentRecord {
    std::string scenario_id;
    double poison_percent = 0.0;
    std::vector<double> client_losses;  // final-round losses, client order
    double server_accuracy = 0.0;
    std::optional<double> asr;
    std::optional<bool> success;  // present iff asr is
    double learning_rate_used = 0.0;
    std::uint64_t seed = 0;
};

struct SuccessRule {
    double threshold = 0.40;
};

/// An attack succeeds when accuracy and ASR both reach the threshold
/// (inclusive). Inputs must lie in [0, 1].
bool classify_success(double accuracy, double asr, const SuccessRule& rule = {});

/// "N_BAU1^{<dataset>}" for clean runs, "N_BAU1^{<dataset>-LF}" or
/// "...-FP}" under attack.
std::string scenario_id(const std::string& dataset_name,
                        const std::optional<AttackSpec>& attack);

ExperimentRecord make_record(const std::string& dataset_name,
                             const std::optional<AttackSpec>& attack,
                             const ExperimentOutcome& outcome, std::uint64_t seed,
                             const SuccessRule& rule = {});

/// Writes records sorted by (scenario_id, poison_percent). Floats render
/// with four decimals; absent asr/success render as empty fields. All
/// records must have the same number of client losses.
void export_csv(std::span<const ExperimentRecord> records,
                const std::filesystem::path& path);

}  // namespace fedpoison
