#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "qcm/serialize.hpp"

namespace qcm {

// Seed the shipped verification suite was tuned and frozen against.
inline constexpr std::uint64_t kDefaultVerifySeed = 20250824;

struct ExperimentConfig {
    std::string scenario = "single_party";
    ProtocolParams params;
    nlohmann::json adversary = {{"kind", "passive"}};
    int trials = 1;
    double tolerance_sigma = 4.0;
    std::string output;  // optional report path
    int parallelism = 0;  // 0 = hardware concurrency
    nlohmann::json extra = nlohmann::json::object();
};

// Parses a config object, then applies QCMSIM_SEED / QCMSIM_PARALLELISM from
// the environment on top.
ExperimentConfig parse_config(const nlohmann::json& j);
ExperimentConfig load_config_file(const std::string& path);
nlohmann::json config_to_json(const ExperimentConfig& cfg);

struct Check {
    std::string name;
    double empirical = 0.0;
    double predicted = 0.0;
    double sigma = 0.0;   // one standard error; 0 means the check is exact
    double z = 0.0;
    std::string formula;  // where the prediction comes from
    bool pass = false;
};

struct Report {
    std::string scenario;
    nlohmann::json config_echo;
    std::map<std::string, nlohmann::json> metrics;
    std::vector<Check> checks;
    bool pass = true;

    nlohmann::json to_json() const;
    std::string to_text() const;
    // One CSV section per "<name>_series" metric, using the matching
    // "<name>_columns" metric as the header row.
    std::string to_csv() const;
};

// Runs `trials` independent protocol executions (per-trial seed derived from
// the master seed and the trial index) and scores the aggregates against the
// closed-form predictions.
Report run_experiment(const ExperimentConfig& cfg);

// Shared-nothing map of run_experiment over independent configs.
std::vector<Report> sweep(const std::vector<ExperimentConfig>& configs);

struct CriterionResult {
    int id = 0;
    std::string name;
    bool pass = false;
    std::string detail;
};

struct VerifyResult {
    std::uint64_t seed = 0;
    std::vector<CriterionResult> criteria;
    bool pass = false;
    nlohmann::json to_json() const;
    std::string to_text() const;
};

// Full self-check suite; criterion 11 reruns the whole set and compares the
// rendered bytes.
VerifyResult run_verify(std::uint64_t seed = kDefaultVerifySeed, int parallelism = 0);

// Deterministic parallel loop: fn(t) for t in [0, trials), any thread order.
// fn must write only to its own trial's slot.
void parallel_for_trials(int trials, int parallelism, const std::function<void(int)>& fn);

// Writes every series metric of the report as a CSV file under out_dir and
// returns the file paths.
std::vector<std::string> emit_plot_csvs(const Report& report, const std::string& out_dir);

}  // namespace qcm
