#include <pybind11/complex.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "qcm/harness.hpp"

namespace py = pybind11;

namespace {

qcm::Transcript run_protocol_any(const qcm::ProtocolParams& p, qcm::AdversaryStrategy& eve) {
    if (p.k == 0) return qcm::run_single_party(p, eve);
    if (p.k == 1) return qcm::run_two_party(p, eve);
    return qcm::run_multi_party(p, eve);
}

std::string run_protocol_json(const std::string& params_json,
                              const std::string& adversary_json) {
    const qcm::ProtocolParams p =
        nlohmann::json::parse(params_json).get<qcm::ProtocolParams>();
    auto eve = qcm::make_adversary(nlohmann::json::parse(adversary_json));
    return qcm::canonical_dump(qcm::transcript_to_json(run_protocol_any(p, *eve)));
}

std::string bb84_keygen_json(int length, std::uint64_t seed, bool eavesdropped,
                             double qber_threshold) {
    qcm::Rng rng(seed, qcm::stream::kBb84);
    std::unique_ptr<qcm::AdversaryStrategy> eve;
    if (eavesdropped) eve = qcm::basis_guess_intercept_resend();
    const qcm::PartyKey key = qcm::bb84_keygen(length, rng, eve.get(), qber_threshold);
    return qcm::canonical_dump(nlohmann::json(key));
}

double bound_py(const std::string& scenario, int N, int nu, double P_a, double P_c,
                double gap, int k) {
    qcm::BoundSpec spec;
    if (scenario == "heisenberg") {
        spec.scenario = qcm::BoundScenario::Heisenberg;
    } else if (scenario == "single_party") {
        spec.scenario = qcm::BoundScenario::SingleParty;
    } else if (scenario == "two_party") {
        spec.scenario = qcm::BoundScenario::TwoParty;
    } else if (scenario == "multi_party") {
        spec.scenario = qcm::BoundScenario::MultiParty;
    } else {
        throw std::invalid_argument("unknown bound scenario: " + scenario);
    }
    spec.N = N;
    spec.nu = nu;
    spec.P_a = P_a;
    spec.P_c = P_c;
    spec.gap = gap;
    spec.k = k;
    return qcm::bound(spec);
}

std::pair<double, int> expectation_json(const std::string& transcript_json) {
    const qcm::Transcript t =
        qcm::transcript_from_json(nlohmann::json::parse(transcript_json));
    const qcm::Expectation e = qcm::expectation_from_transcript(t);
    return {e.value, e.count};
}

std::string ladder_estimate_json(const std::vector<std::string>& transcript_jsons,
                                 int max_per_level) {
    std::vector<qcm::Transcript> levels;
    levels.reserve(transcript_jsons.size());
    for (const std::string& s : transcript_jsons) {
        levels.push_back(qcm::transcript_from_json(nlohmann::json::parse(s)));
    }
    return qcm::canonical_dump(
        nlohmann::json(qcm::ladder_estimate(levels, max_per_level)));
}

std::string eve_report_json(const std::string& params_json, int kappa) {
    const qcm::ProtocolParams p =
        nlohmann::json::parse(params_json).get<qcm::ProtocolParams>();
    return qcm::canonical_dump(nlohmann::json(qcm::eve_information_report(p, kappa)));
}

std::string run_experiment_json(const std::string& config_json) {
    const qcm::ExperimentConfig cfg =
        qcm::parse_config(nlohmann::json::parse(config_json));
    return qcm::canonical_dump(qcm::run_experiment(cfg).to_json());
}

std::string run_verify_json(std::uint64_t seed, int parallelism) {
    return qcm::canonical_dump(qcm::run_verify(seed, parallelism).to_json());
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Deterministic simulator of tamper-evident quantum phase estimation";

    py::class_<qcm::Spectrum>(m, "Spectrum")
        .def(py::init<>())
        .def(py::init<double, double, bool>(), py::arg("lambda_min"),
             py::arg("lambda_max"), py::arg("unsafe") = false)
        .def_readonly("lambda_min", &qcm::Spectrum::lambda_min)
        .def_readonly("lambda_max", &qcm::Spectrum::lambda_max)
        .def("gap", &qcm::Spectrum::gap);

    py::class_<qcm::Rng>(m, "Rng")
        .def(py::init<std::uint64_t, std::uint64_t>(), py::arg("seed"),
             py::arg("stream") = 0)
        .def("uniform", &qcm::Rng::uniform)
        .def("bernoulli", &qcm::Rng::bernoulli, py::arg("p"))
        .def("uniform_int", &qcm::Rng::uniform_int, py::arg("lo"), py::arg("hi"));

    py::enum_<qcm::Basis>(m, "Basis")
        .value("GHZ_PLUS_MINUS", qcm::Basis::GhzPlusMinus)
        .value("ENERGY", qcm::Basis::Energy)
        .value("GHZ_PLUS_MINUS_I", qcm::Basis::GhzPlusMinusI);

    py::enum_<qcm::GhzOutcome>(m, "GhzOutcome")
        .value("PLUS", qcm::GhzOutcome::Plus)
        .value("MINUS", qcm::GhzOutcome::Minus)
        .value("INVALID", qcm::GhzOutcome::Invalid);

    py::class_<qcm::GhzProbabilities>(m, "GhzProbabilities")
        .def_readonly("p_plus", &qcm::GhzProbabilities::p_plus)
        .def_readonly("p_minus", &qcm::GhzProbabilities::p_minus)
        .def_readonly("p_invalid", &qcm::GhzProbabilities::p_invalid);

    py::class_<qcm::GhzMeasurement>(m, "GhzMeasurement")
        .def_readonly("outcome", &qcm::GhzMeasurement::outcome)
        .def_readonly("prob", &qcm::GhzMeasurement::prob);

    py::class_<qcm::JointState>(m, "JointState")
        .def_readonly("n", &qcm::JointState::n)
        .def_readonly("amps", &qcm::JointState::amps)
        .def("norm2", &qcm::JointState::norm2)
        .def("fidelity", &qcm::JointState::fidelity);

    m.def("state_cap", &qcm::state_cap);
    m.def("prepare_noon", &qcm::prepare_noon, py::arg("n"), py::arg("sign"));
    m.def("prepare_noon_imag", &qcm::prepare_noon_imag, py::arg("n"), py::arg("sign"));
    m.def("prepare_energy", &qcm::prepare_energy, py::arg("n"), py::arg("which"));
    m.def("apply_phase", &qcm::apply_phase, py::arg("state"), py::arg("theta"),
          py::arg("spectrum"), py::arg("probes"));
    m.def("apply_phase_all", &qcm::apply_phase_all, py::arg("state"), py::arg("theta"),
          py::arg("spectrum"));
    m.def("ghz_probabilities", &qcm::ghz_probabilities, py::arg("state"),
          py::arg("imaginary") = false);
    m.def("measure_ghz", &qcm::measure_ghz, py::arg("state"), py::arg("rng"),
          py::arg("imaginary") = false);
    m.def("measure_energy_all", &qcm::measure_energy_all, py::arg("state"), py::arg("rng"));
    m.def("measure_single_probe", &qcm::measure_single_probe, py::arg("state"),
          py::arg("probe"), py::arg("basis"), py::arg("rng"));
    m.def("eve_view_density_invariance_check", &qcm::eve_view_density_invariance_check,
          py::arg("n"), py::arg("theta"), py::arg("spectrum"));

    m.def("run_protocol_json", &run_protocol_json, py::arg("params_json"),
          py::arg("adversary_json"), py::call_guard<py::gil_scoped_release>());
    m.def("bb84_keygen_json", &bb84_keygen_json, py::arg("length"), py::arg("seed"),
          py::arg("eavesdropped") = false, py::arg("qber_threshold") = 0.11,
          py::call_guard<py::gil_scoped_release>());
    m.def("bound", &bound_py, py::arg("scenario"), py::arg("N"), py::arg("nu"),
          py::arg("P_a") = 2.0 / 3.0, py::arg("P_c") = 0.5, py::arg("gap") = 1.0,
          py::arg("k") = 0);
    m.def("expectation_from_transcript_json", &expectation_json,
          py::arg("transcript_json"));
    m.def("ladder_estimate_json", &ladder_estimate_json, py::arg("transcript_jsons"),
          py::arg("max_per_level") = 0);
    m.def("eve_information_report_json", &eve_report_json, py::arg("params_json"),
          py::arg("kappa"));
    m.def("run_experiment_json", &run_experiment_json, py::arg("config_json"),
          py::call_guard<py::gil_scoped_release>());
    m.def("run_verify_json", &run_verify_json, py::arg("seed"), py::arg("parallelism") = 0,
          py::call_guard<py::gil_scoped_release>());
    m.attr("DEFAULT_VERIFY_SEED") = qcm::kDefaultVerifySeed;
    m.attr("TRANSCRIPT_SCHEMA") = qcm::kTranscriptSchema;
}
