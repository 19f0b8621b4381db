#include <CLI11.hpp>
#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "qcm/harness.hpp"

namespace fs = std::filesystem;

namespace {

int cmd_run(const std::string& config_path, bool seed_set, std::uint64_t seed,
            bool par_set, int parallelism, const std::string& output,
            const std::string& format) {
    qcm::ExperimentConfig cfg = qcm::load_config_file(config_path);
    if (seed_set) cfg.params.seed = seed;
    if (par_set) cfg.parallelism = parallelism;
    if (!output.empty()) cfg.output = output;
    const qcm::Report rep = qcm::run_experiment(cfg);
    if (format == "json") {
        std::cout << qcm::canonical_dump(rep.to_json());
    } else if (format == "csv") {
        std::cout << rep.to_csv();
    } else {
        std::cout << rep.to_text();
    }
    return rep.pass ? 0 : 1;
}

int cmd_sweep(const std::string& dir, const std::string& out_dir) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.is_regular_file() && entry.path().extension() == ".json") {
            files.push_back(entry.path());
        }
    }
    std::sort(files.begin(), files.end());
    if (!out_dir.empty()) fs::create_directories(out_dir);

    bool all_pass = true;
    for (const fs::path& file : files) {
        qcm::Report rep;
        try {
            const qcm::ExperimentConfig cfg = qcm::load_config_file(file.string());
            const std::vector<qcm::Report> reports = qcm::sweep({cfg});
            rep = reports.front();
        } catch (const std::exception& e) {
            rep.scenario = "unparsed";
            rep.pass = false;
            rep.metrics["error"] = e.what();
        }
        all_pass = all_pass && rep.pass;
        std::cout << file.filename().string() << ": " << (rep.pass ? "pass" : "FAIL")
                  << "\n";
        if (!out_dir.empty()) {
            const fs::path out = fs::path(out_dir) / (file.stem().string() + ".report.json");
            std::ofstream f(out);
            if (!f) throw std::runtime_error("cannot write " + out.string());
            f << qcm::canonical_dump(rep.to_json());
        }
    }
    std::cout << "configs: " << files.size() << ", verdict: " << (all_pass ? "pass" : "fail")
              << "\n";
    return all_pass ? 0 : 1;
}

int cmd_verify(std::uint64_t seed, bool par_set, int parallelism,
               const std::string& output) {
    if (const char* s = std::getenv("QCMSIM_SEED")) seed = std::stoull(s);
    int par = par_set ? parallelism : 0;
    if (const char* s = std::getenv("QCMSIM_PARALLELISM")) par = std::stoi(s);
    const qcm::VerifyResult v = qcm::run_verify(seed, par);
    std::cout << v.to_text();
    if (!output.empty()) {
        std::ofstream f(output);
        if (!f) throw std::runtime_error("cannot write " + output);
        f << qcm::canonical_dump(v.to_json());
    }
    return v.pass ? 0 : 1;
}

int cmd_emit_plots(const std::string& config_path, const std::string& report_path,
                   const std::string& out_dir) {
    qcm::Report rep;
    int verdict = 0;
    if (!config_path.empty()) {
        const qcm::ExperimentConfig cfg = qcm::load_config_file(config_path);
        rep = qcm::run_experiment(cfg);
        verdict = rep.pass ? 0 : 1;
    } else {
        std::ifstream in(report_path);
        if (!in) throw std::runtime_error("cannot open report file: " + report_path);
        nlohmann::json j;
        in >> j;
        rep.scenario = j.value("scenario", "report");
        if (!j.contains("metrics") || !j.at("metrics").is_object()) {
            throw std::runtime_error("report file has no metrics object");
        }
        for (const auto& item : j.at("metrics").items()) {
            rep.metrics[item.key()] = item.value();
        }
    }
    const std::vector<std::string> paths = qcm::emit_plot_csvs(rep, out_dir);
    for (const std::string& p : paths) std::cout << p << "\n";
    if (paths.empty()) std::cout << "no series metrics in this report\n";
    return verdict;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Deterministic simulator of tamper-evident quantum phase estimation"};
    app.require_subcommand(1);

    std::string config_path, report_path, output, format = "text", dir, out_dir;
    std::uint64_t seed = qcm::kDefaultVerifySeed;
    int parallelism = 0;

    auto* run = app.add_subcommand("run", "Run one experiment from a JSON config file");
    run->add_option("--config", config_path, "Experiment config (JSON)")
        ->required()
        ->check(CLI::ExistingFile);
    auto* run_seed = run->add_option("--seed", seed, "Override the master seed");
    auto* run_par =
        run->add_option("--parallelism", parallelism, "Worker threads (0 = all cores)");
    run->add_option("--output", output, "Also write the JSON report to this path");
    run->add_option("--format", format, "Stdout format")
        ->check(CLI::IsMember({"text", "json", "csv"}));

    auto* sw = app.add_subcommand("sweep", "Run every *.json config in a directory");
    sw->add_option("--dir", dir, "Directory of config files")
        ->required()
        ->check(CLI::ExistingDirectory);
    sw->add_option("--out", out_dir, "Directory for per-config JSON reports");

    auto* ver = app.add_subcommand("verify", "Run the built-in verification suite");
    ver->add_option("--seed", seed, "Suite seed");
    auto* ver_par =
        ver->add_option("--parallelism", parallelism, "Worker threads (0 = all cores)");
    ver->add_option("--output", output, "Also write the JSON verdict to this path");

    auto* plots = app.add_subcommand("emit-plots", "Write a report's series metrics as CSV");
    auto* plots_cfg = plots->add_option("--config", config_path,
                                        "Run this config, then emit its series");
    auto* plots_rep =
        plots->add_option("--report", report_path, "Emit series from an existing report");
    plots->add_option("--out", out_dir, "Output directory")->required();
    plots_cfg->excludes(plots_rep);

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) {
            return cmd_run(config_path, run_seed->count() > 0, seed, run_par->count() > 0,
                           parallelism, output, format);
        }
        if (sw->parsed()) return cmd_sweep(dir, out_dir);
        if (ver->parsed()) {
            return cmd_verify(seed, ver_par->count() > 0, parallelism, output);
        }
        if (plots->parsed()) {
            if (config_path.empty() && report_path.empty()) {
                std::cerr << "error: emit-plots needs --config or --report\n";
                return 2;
            }
            return cmd_emit_plots(config_path, report_path, out_dir);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 2;
}
