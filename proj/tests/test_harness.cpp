#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "doctest.h"
#include "qcm/harness.hpp"

using namespace qcm;
namespace fs = std::filesystem;

namespace {

nlohmann::json minimal_config() {
    return {{"scenario", "single_party"},
            {"params", {{"N", 3}, {"nu", 400}, {"seed", 9}}},
            {"adversary", {{"kind", "passive"}}},
            {"trials", 4}};
}

struct EnvGuard {
    // Keeps doctest cases from leaking overrides into each other.
    ~EnvGuard() {
        unsetenv("QCMSIM_SEED");
        unsetenv("QCMSIM_PARALLELISM");
    }
};

}  // namespace

TEST_CASE("config parsing: defaults, overrides, rejections") {
    EnvGuard guard;
    SUBCASE("defaults fill in") {
        const ExperimentConfig cfg = parse_config(nlohmann::json::object());
        CHECK(cfg.scenario == "single_party");
        CHECK(cfg.trials == 1);
        CHECK(cfg.tolerance_sigma == 4.0);
        CHECK(cfg.adversary.at("kind") == "passive");
    }
    SUBCASE("round trip through config_to_json") {
        const ExperimentConfig cfg = parse_config(minimal_config());
        const ExperimentConfig back = parse_config(config_to_json(cfg));
        CHECK(back.scenario == cfg.scenario);
        CHECK(back.params.N == 3);
        CHECK(back.params.nu == 400);
        CHECK(back.params.seed == 9);
        CHECK(back.trials == 4);
    }
    SUBCASE("rejections") {
        CHECK_THROWS_AS(parse_config(nlohmann::json::array()), std::invalid_argument);
        CHECK_THROWS_AS(parse_config({{"surprise", 1}}), std::invalid_argument);
        CHECK_THROWS_AS(parse_config({{"scenario", "quantum_golf"}}), std::invalid_argument);
        CHECK_THROWS_AS(parse_config({{"adversary", 5}}), std::invalid_argument);
        CHECK_THROWS_AS(parse_config({{"adversary", {{"theta", 1.0}}}}),
                        std::invalid_argument);
        CHECK_THROWS_AS(parse_config({{"adversary", {{"kind", "teleport"}}}}),
                        std::invalid_argument);
        CHECK_THROWS_AS(parse_config({{"trials", 0}}), std::invalid_argument);
        CHECK_THROWS_AS(parse_config({{"scenario", "two_party"}}), std::invalid_argument);
        CHECK_THROWS_AS(
            parse_config({{"scenario", "single_party"}, {"params", {{"k", 1}}}}),
            std::invalid_argument);
        CHECK_THROWS_AS(parse_config({{"params", {{"P_a", 0.9}}}}), std::invalid_argument);
    }
    SUBCASE("environment overrides seed and parallelism") {
        setenv("QCMSIM_SEED", "991", 1);
        setenv("QCMSIM_PARALLELISM", "2", 1);
        const ExperimentConfig cfg = parse_config(minimal_config());
        CHECK(cfg.params.seed == 991);
        CHECK(cfg.parallelism == 2);
        setenv("QCMSIM_SEED", "not-a-number", 1);
        CHECK_THROWS_AS(parse_config(minimal_config()), std::invalid_argument);
    }
    SUBCASE("file loading errors") {
        CHECK_THROWS_AS(load_config_file("/nonexistent/qcm.json"), std::runtime_error);
    }
}

TEST_CASE("passive experiment passes its closed-form checks") {
    const ExperimentConfig cfg = parse_config(minimal_config());
    const Report rep = run_experiment(cfg);
    CHECK(rep.pass);
    REQUIRE_FALSE(rep.checks.empty());
    for (const Check& c : rep.checks) {
        CAPTURE(c.name);
        CHECK(c.pass);
    }
    CHECK(rep.metrics.count("retained_fraction") == 1);
    CHECK(rep.metrics.count("abort_rate") == 1);
    const std::string text = rep.to_text();
    CHECK(text.find("verdict:  pass") != std::string::npos);
}

TEST_CASE("two- and multi-party experiments pass with a passive channel") {
    {
        nlohmann::json j = minimal_config();
        j["scenario"] = "two_party";
        j["params"] = {{"N", 3}, {"k", 1}, {"nu", 600}, {"seed", 14}};
        j["trials"] = 2;
        const Report rep = run_experiment(parse_config(j));
        CHECK(rep.pass);
    }
    {
        nlohmann::json j = minimal_config();
        j["scenario"] = "multi_party";
        j["params"] = {{"N", 2}, {"k", 2}, {"nu", 150}, {"seed", 15}, {"key_length", 16}};
        j["trials"] = 2;
        const Report rep = run_experiment(parse_config(j));
        CHECK(rep.pass);
    }
}

TEST_CASE("tampering experiments score against their oracles") {
    SUBCASE("phase bias") {
        nlohmann::json j = minimal_config();
        j["adversary"] = {{"kind", "phase_bias"}, {"theta", 0.4}};
        j["params"] = {{"N", 4}, {"nu", 500}, {"seed", 16}};
        j["trials"] = 12;
        const Report rep = run_experiment(parse_config(j));
        CHECK(rep.pass);
        bool saw_noon = false;
        for (const Check& c : rep.checks) {
            if (c.name == "noon_check_fail_rate") {
                saw_noon = true;
                CHECK(c.predicted > 0.03);
                CHECK(c.predicted < 0.05);
            }
        }
        CHECK(saw_noon);
    }
    SUBCASE("probe injection is an exact check") {
        nlohmann::json j = minimal_config();
        j["adversary"] = {{"kind", "probe_injector"}, {"extra", 1}};
        j["params"] = {{"N", 3}, {"nu", 3}, {"seed", 17}};
        j["trials"] = 5;
        const Report rep = run_experiment(parse_config(j));
        CHECK(rep.pass);
        bool saw = false;
        for (const Check& c : rep.checks) {
            if (c.name == "detection_rate") {
                saw = true;
                CHECK(c.sigma == 0.0);
                CHECK(c.empirical == 1.0);
            }
        }
        CHECK(saw);
    }
}

TEST_CASE("bb84 scenario reproduces interception statistics") {
    nlohmann::json j = {{"scenario", "bb84"},
                        {"adversary", {{"kind", "basis_guess"}}},
                        {"params", {{"seed", 18}}},
                        {"trials", 2},
                        {"extra", {{"qubits", 4000}}}};
    const Report rep = run_experiment(parse_config(j));
    CHECK(rep.pass);
    CHECK(rep.metrics.count("exchange_series") == 1);
    const std::string csv = rep.to_csv();
    CHECK(csv.find("# exchange") != std::string::npos);
    CHECK(csv.find("trial,qubits,sifted,sampled,errors") != std::string::npos);

    j["extra"]["qubits"] = 2;
    CHECK_THROWS_AS(run_experiment(parse_config(j)), std::invalid_argument);
}

TEST_CASE("interception decays geometrically with the tampered rounds") {
    nlohmann::json j = {{"scenario", "kappa_decay"},
                        {"adversary", {{"kind", "basis_guess"}}},
                        {"params", {{"seed", 19}}},
                        {"trials", 1500},
                        {"extra", {{"kappa_max", 5}, {"r_squared_floor", 0.95}}}};
    const Report rep = run_experiment(parse_config(j));
    CHECK(rep.pass);
    CHECK(rep.metrics.count("fit_slope") == 1);
    CHECK(rep.metrics.count("kappa_series") == 1);
    const double slope = rep.metrics.at("fit_slope").get<double>();
    CHECK(slope < 0.0);

    j["extra"]["kappa_max"] = 2;
    CHECK_THROWS_AS(run_experiment(parse_config(j)), std::invalid_argument);
}

TEST_CASE("precision improves quadratically in the probe number") {
    nlohmann::json j = {{"scenario", "heisenberg_scaling"},
                        {"adversary", {{"kind", "passive"}}},
                        {"params", {{"seed", 20}}},
                        {"trials", 40},
                        {"extra",
                         {{"n_max_list", {1, 4}},
                          {"rounds_per_level", 200},
                          {"slope_tolerance", 1.0}}}};
    const Report rep = run_experiment(parse_config(j));
    CHECK(rep.pass);
    REQUIRE(rep.metrics.count("mse_slope") == 1);
    const double slope = rep.metrics.at("mse_slope").get<double>();
    CHECK(slope < -1.0);
    CHECK(slope > -3.0);

    j["extra"]["n_max_list"] = {1};
    CHECK_THROWS_AS(run_experiment(parse_config(j)), std::invalid_argument);
}

TEST_CASE("reports are byte-stable and parallelism independent") {
    ExperimentConfig cfg = parse_config(minimal_config());
    cfg.parallelism = 1;
    const Report a = run_experiment(cfg);
    const Report b = run_experiment(cfg);
    CHECK(canonical_dump(a.to_json()) == canonical_dump(b.to_json()));

    cfg.parallelism = 4;
    const Report c = run_experiment(cfg);
    // The config echo records the parallelism knob; results must not.
    CHECK(a.to_json().at("metrics") == c.to_json().at("metrics"));
    CHECK(a.to_json().at("checks") == c.to_json().at("checks"));
}

TEST_CASE("run_experiment writes the report where asked") {
    const std::string path =
        (fs::temp_directory_path() / "qcm_harness_report_test.json").string();
    ExperimentConfig cfg = parse_config(minimal_config());
    cfg.output = path;
    const Report rep = run_experiment(cfg);
    std::ifstream in(path);
    REQUIRE(in.good());
    nlohmann::json j;
    in >> j;
    CHECK(j.at("scenario") == "single_party");
    CHECK(j.at("pass") == rep.pass);
    fs::remove(path);
}

TEST_CASE("sweep maps configs independently and captures failures") {
    CHECK(sweep({}).empty());

    ExperimentConfig ok = parse_config(minimal_config());
    ExperimentConfig broken = parse_config({{"scenario", "bb84"}});
    broken.extra["qubits"] = 2;  // run_experiment will throw
    const std::vector<Report> reports = sweep({ok, broken});
    REQUIRE(reports.size() == 2);
    CHECK(reports[0].pass);
    CHECK_FALSE(reports[1].pass);
    CHECK(reports[1].metrics.count("error") == 1);
}

TEST_CASE("plot emission writes one csv per series") {
    nlohmann::json j = {{"scenario", "bb84"},
                        {"adversary", {{"kind", "passive"}}},
                        {"params", {{"seed", 23}}},
                        {"trials", 1},
                        {"extra", {{"qubits", 600}}}};
    const Report rep = run_experiment(parse_config(j));
    const fs::path dir = fs::temp_directory_path() / "qcm_plot_test";
    fs::remove_all(dir);
    const std::vector<std::string> paths = emit_plot_csvs(rep, dir.string());
    REQUIRE(paths.size() == 1);
    CHECK(paths[0].find("bb84_exchange.csv") != std::string::npos);
    std::ifstream f(paths[0]);
    REQUIRE(f.good());
    std::string header;
    std::getline(f, header);
    CHECK(header == "trial,qubits,sifted,sampled,errors");
    fs::remove_all(dir);
}

TEST_CASE("parallel_for_trials covers every slot and surfaces exceptions") {
    std::vector<int> out(100, -1);
    parallel_for_trials(100, 4, [&](int t) { out[static_cast<std::size_t>(t)] = t * t; });
    for (int t = 0; t < 100; ++t) CHECK(out[static_cast<std::size_t>(t)] == t * t);

    parallel_for_trials(0, 4, [&](int) { FAIL("must not be called"); });

    std::atomic<int> ran{0};
    CHECK_THROWS_AS(parallel_for_trials(50, 4,
                                        [&](int t) {
                                            ran.fetch_add(1);
                                            if (t == 37) throw std::runtime_error("boom");
                                        }),
                    std::runtime_error);
    CHECK(ran.load() == 50);
}
