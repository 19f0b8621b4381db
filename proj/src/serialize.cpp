#include "qcm/serialize.hpp"

#include <stdexcept>

namespace qcm {

std::string to_string(PrepKind k) {
    switch (k) {
        case PrepKind::NoonPlus: return "noon_plus";
        case PrepKind::NoonMinus: return "noon_minus";
        case PrepKind::Energy0: return "energy_0";
        case PrepKind::Energy1: return "energy_1";
        case PrepKind::NoonPlusI: return "noon_plus_i";
        default: return "noon_minus_i";
    }
}

PrepKind prep_kind_from_string(const std::string& s) {
    if (s == "noon_plus") return PrepKind::NoonPlus;
    if (s == "noon_minus") return PrepKind::NoonMinus;
    if (s == "energy_0") return PrepKind::Energy0;
    if (s == "energy_1") return PrepKind::Energy1;
    if (s == "noon_plus_i") return PrepKind::NoonPlusI;
    if (s == "noon_minus_i") return PrepKind::NoonMinusI;
    throw std::invalid_argument("unknown preparation kind: " + s);
}

std::string to_string(DecoyCheck c) {
    switch (c) {
        case DecoyCheck::NotADecoy: return "not_a_decoy";
        case DecoyCheck::Pass: return "pass";
        default: return "fail";
    }
}

DecoyCheck decoy_check_from_string(const std::string& s) {
    if (s == "not_a_decoy") return DecoyCheck::NotADecoy;
    if (s == "pass") return DecoyCheck::Pass;
    if (s == "fail") return DecoyCheck::Fail;
    throw std::invalid_argument("unknown decoy check: " + s);
}

void to_json(nlohmann::json& j, const Spectrum& s) {
    j = {{"lambda_min", s.lambda_min}, {"lambda_max", s.lambda_max}};
}

void from_json(const nlohmann::json& j, Spectrum& s) {
    s = Spectrum(j.value("lambda_min", 0.0), j.value("lambda_max", 1.0));
}

void to_json(nlohmann::json& j, const ProtocolParams& p) {
    j = {{"N", p.N},
         {"k", p.k},
         {"P_a", p.P_a},
         {"P_c", p.P_c},
         {"spectrum", p.spectrum},
         {"phi_true", p.phi_true},
         {"nu", p.nu},
         {"seed", p.seed},
         {"extended_decoys", p.extended_decoys},
         {"preshared_basis_key", p.preshared_basis_key},
         {"quadrature_fraction", p.quadrature_fraction},
         {"balanced_decoys", p.balanced_decoys},
         {"abort_threshold", p.abort_threshold},
         {"key_length", p.key_length}};
}

void from_json(const nlohmann::json& j, ProtocolParams& p) {
    ProtocolParams d;
    p.N = j.value("N", d.N);
    p.k = j.value("k", d.k);
    p.P_a = j.value("P_a", d.P_a);
    p.P_c = j.value("P_c", d.P_c);
    if (j.contains("spectrum")) p.spectrum = j.at("spectrum").get<Spectrum>();
    p.phi_true = j.value("phi_true", d.phi_true);
    p.nu = j.value("nu", d.nu);
    p.seed = j.value("seed", d.seed);
    p.extended_decoys = j.value("extended_decoys", d.extended_decoys);
    p.preshared_basis_key = j.value("preshared_basis_key", d.preshared_basis_key);
    p.quadrature_fraction = j.value("quadrature_fraction", d.quadrature_fraction);
    p.balanced_decoys = j.value("balanced_decoys", d.balanced_decoys);
    p.abort_threshold = j.value("abort_threshold", d.abort_threshold);
    p.key_length = j.value("key_length", d.key_length);
}

void to_json(nlohmann::json& j, const CharlieAction& a) {
    j = {{"applied_phase", a.applied_phase}, {"m", a.m}};
}

void from_json(const nlohmann::json& j, CharlieAction& a) {
    a.applied_phase = j.at("applied_phase").get<bool>();
    a.m = j.at("m").get<int>();
}

void to_json(nlohmann::json& j, const TamperRecord& r) {
    j = {{"round", r.round}, {"probe", r.probe}, {"action", r.action}, {"detail", r.detail}};
}

void from_json(const nlohmann::json& j, TamperRecord& r) {
    r.round = j.at("round").get<int>();
    r.probe = j.at("probe").get<int>();
    r.action = j.at("action").get<std::string>();
    r.detail = j.value("detail", nlohmann::json::object());
}

void to_json(nlohmann::json& j, const Message& m) {
    j = {{"step", m.step}, {"from", m.from}, {"kind", m.kind}, {"payload", m.payload}};
}

void from_json(const nlohmann::json& j, Message& m) {
    m.step = j.at("step").get<int>();
    m.from = j.at("from").get<std::string>();
    m.kind = j.at("kind").get<std::string>();
    m.payload = j.value("payload", nlohmann::json::object());
}

void to_json(nlohmann::json& j, const RoundRecord& r) {
    j = {{"index", r.index},
         {"prep", to_string(r.prep)},
         {"charlie", r.charlie},
         {"adversary_events", r.adversary_events},
         {"bases", r.bases},
         {"outcomes", r.outcomes},
         {"sift_kept", r.sift_kept},
         {"decoy_check", to_string(r.decoy_check)},
         {"quadrature_measured", r.quadrature_measured},
         {"usable_for_estimation", r.usable_for_estimation},
         {"messages", r.messages}};
}

void from_json(const nlohmann::json& j, RoundRecord& r) {
    r.index = j.at("index").get<int>();
    r.prep = prep_kind_from_string(j.at("prep").get<std::string>());
    r.charlie = j.at("charlie").get<CharlieAction>();
    r.adversary_events = j.value("adversary_events", std::vector<TamperRecord>{});
    r.bases = j.at("bases").get<std::vector<std::string>>();
    r.outcomes = j.at("outcomes").get<std::vector<std::string>>();
    r.sift_kept = j.value("sift_kept", false);
    r.decoy_check = decoy_check_from_string(j.value("decoy_check", "not_a_decoy"));
    r.quadrature_measured = j.value("quadrature_measured", false);
    r.usable_for_estimation = j.value("usable_for_estimation", false);
    r.messages = j.value("messages", std::vector<Message>{});
}

void to_json(nlohmann::json& j, const PartyKey& k) {
    j = {{"bits", k.bits},
         {"sampled_qber", k.sampled_qber},
         {"aborted", k.aborted},
         {"flips_applied", k.flips_applied}};
}

void from_json(const nlohmann::json& j, PartyKey& k) {
    k.bits = j.at("bits").get<std::vector<std::uint8_t>>();
    k.sampled_qber = j.value("sampled_qber", 0.0);
    k.aborted = j.value("aborted", false);
    k.flips_applied = j.value("flips_applied", std::vector<int>{});
}

void to_json(nlohmann::json& j, const Bb84Stats& s) {
    j = {{"qubits", s.qubits},
         {"sifted", s.sifted},
         {"sampled", s.sampled},
         {"sample_errors", s.sample_errors},
         {"sift_rate", s.sift_rate},
         {"qber", s.qber}};
}

void to_json(nlohmann::json& j, const Expectation& e) {
    j = {{"value", e.value}, {"count", e.count}};
}

void to_json(nlohmann::json& j, const LadderLevel& l) {
    j = {{"N", l.N},
         {"rounds_used", l.rounds_used},
         {"raw_expectation", l.raw_expectation},
         {"sin_expectation", l.sin_expectation},
         {"has_sin", l.has_sin},
         {"phi_estimate", l.phi_estimate}};
}

void to_json(nlohmann::json& j, const EstimationResult& r) {
    j = {{"phi_hat", r.phi_hat},
         {"empirical_variance", r.empirical_variance},
         {"analytic_bound", r.analytic_bound},
         {"samples_used", r.samples_used},
         {"ladder", r.ladder},
         {"failed", r.failed},
         {"failure_reason", r.failure_reason}};
}

void to_json(nlohmann::json& j, const EveReport& r) {
    j = {{"max_qfi", r.max_qfi},
         {"success_probability", r.success_probability},
         {"undetected_per_round", r.has_undetected ? nlohmann::json(r.undetected_per_round)
                                                   : nlohmann::json()},
         {"has_undetected", r.has_undetected},
         {"formula", r.formula}};
}

nlohmann::json transcript_to_json(const Transcript& t) {
    return {{"schema", kTranscriptSchema},
            {"params", t.params},
            {"rounds", t.rounds},
            {"aborted", t.aborted},
            {"abort_round", t.abort_round},
            {"probe_count_violation", t.probe_count_violation},
            {"retained_for_estimation", t.retained_for_estimation},
            {"reveal_log", t.reveal_log}};
}

Transcript transcript_from_json(const nlohmann::json& j) {
    if (j.value("schema", "") != kTranscriptSchema) {
        throw std::invalid_argument("transcript_from_json: unknown schema");
    }
    Transcript t;
    t.params = j.at("params").get<ProtocolParams>();
    t.rounds = j.at("rounds").get<std::vector<RoundRecord>>();
    t.aborted = j.value("aborted", false);
    t.abort_round = j.value("abort_round", -1);
    t.probe_count_violation = j.value("probe_count_violation", false);
    t.retained_for_estimation = j.value("retained_for_estimation", std::vector<int>{});
    t.reveal_log = j.value("reveal_log", std::vector<Message>{});
    return t;
}

std::string canonical_dump(const nlohmann::json& j) { return j.dump(2) + "\n"; }

}  // namespace qcm
