#include "qcm/adversary.hpp"

#include <cmath>
#include <stdexcept>

namespace qcm {

namespace {

class Passive final : public AdversaryStrategy {
public:
    std::vector<TamperRecord> on_probe_transit(TransitContext&, Rng&) override {
        return {};
    }
};

class PhaseBias final : public AdversaryStrategy {
public:
    explicit PhaseBias(double theta) : theta_(theta) {}

    std::vector<TamperRecord> on_probe_transit(TransitContext& ctx, Rng&) override {
        if (ctx.leg != Leg::FromCharlie || ctx.charlie_probes == 0) return {};
        const double per_probe = theta_ / ctx.charlie_probes;
        apply_phase(*ctx.state, per_probe, *ctx.spectrum, {ctx.probe});
        TamperRecord rec;
        rec.round = ctx.round;
        rec.probe = ctx.probe;
        rec.action = "phase_bias";
        rec.detail = {{"theta_per_probe", per_probe}};
        return {rec};
    }

private:
    double theta_;
};

class BasisGuess final : public AdversaryStrategy {
public:
    void begin_run(int decoy_families) override {
        families_ = decoy_families;
        obs_.clear();
        current_round_ = -1;
    }

    std::vector<TamperRecord> on_probe_transit(TransitContext& ctx, Rng& rng) override {
        // One uniform family guess per round, drawn at the round's first
        // transit; all probes are buffered and measured collectively at the
        // last transit, then forwarded collapsed.
        if (ctx.round != current_round_) {
            current_round_ = ctx.round;
            guess_ = static_cast<int>(rng.below(static_cast<std::uint64_t>(families_)));
        }
        if (!ctx.last_transit_of_round) return {};

        TamperRecord rec;
        rec.round = ctx.round;
        rec.probe = ctx.probe;
        rec.action = "collective_measurement";
        int outcome_code = 0;
        std::string guess_name, outcome_name;
        if (guess_ == 0) {
            guess_name = "energy";
            const std::uint64_t bits = measure_energy_all(*ctx.state, rng);
            const std::uint64_t all = (std::uint64_t{1} << ctx.state->n) - 1;
            outcome_code = bits == 0 ? 0 : (bits == all ? 1 : 2);
            outcome_name = outcome_code == 0 ? "all_zero"
                         : outcome_code == 1 ? "all_one" : "mixed";
        } else {
            const bool imag = guess_ == 2;
            guess_name = imag ? "ghz_imag" : "ghz_real";
            const GhzMeasurement m = measure_ghz(*ctx.state, rng, imag);
            outcome_code = m.outcome == GhzOutcome::Plus ? 0
                         : m.outcome == GhzOutcome::Minus ? 1 : 2;
            outcome_name = outcome_code == 0 ? "plus"
                         : outcome_code == 1 ? "minus" : "invalid";
        }
        obs_.push_back(guess_ * 3 + outcome_code);
        rec.detail = {{"guess", guess_name}, {"outcome", outcome_name}};
        return {rec};
    }

    std::vector<int> observations() const override { return obs_; }

private:
    int families_ = 2;
    int current_round_ = -1;
    int guess_ = 0;
    std::vector<int> obs_;
};

class ProbeInjector final : public AdversaryStrategy {
public:
    explicit ProbeInjector(int extra) : extra_(extra) {
        if (extra < 0) throw std::invalid_argument("probe_injector: extra must be >= 0");
    }

    std::vector<TamperRecord> on_probe_transit(TransitContext& ctx, Rng&) override {
        if (extra_ == 0 || ctx.leg != Leg::ToCharlie || ctx.round == injected_round_) {
            return {};
        }
        injected_round_ = ctx.round;
        ctx.inject = extra_;
        TamperRecord rec;
        rec.round = ctx.round;
        rec.probe = ctx.probe;
        rec.action = "inject";
        rec.detail = {{"extra", extra_}};
        return {rec};
    }

private:
    int extra_;
    int injected_round_ = -1;
};

}  // namespace

std::unique_ptr<AdversaryStrategy> passive() { return std::make_unique<Passive>(); }

std::unique_ptr<AdversaryStrategy> phase_bias(double theta) {
    return std::make_unique<PhaseBias>(theta);
}

std::unique_ptr<AdversaryStrategy> basis_guess_intercept_resend() {
    return std::make_unique<BasisGuess>();
}

std::unique_ptr<AdversaryStrategy> probe_injector(int extra) {
    return std::make_unique<ProbeInjector>(extra);
}

std::unique_ptr<AdversaryStrategy> make_adversary(const nlohmann::json& cfg) {
    const std::string kind = cfg.value("kind", "passive");
    if (kind == "passive") return passive();
    if (kind == "phase_bias") return phase_bias(cfg.at("theta").get<double>());
    if (kind == "basis_guess") return basis_guess_intercept_resend();
    if (kind == "probe_injector") return probe_injector(cfg.value("extra", 1));
    throw std::invalid_argument("unknown adversary kind: " + kind);
}

EveReport eve_information_report(const ProtocolParams& params, int kappa) {
    if (kappa < 0) throw std::invalid_argument("kappa must be >= 0");
    const double Pa = params.P_a, Pc = params.P_c;
    const double ng = params.N * params.spectrum.gap();
    EveReport rep;
    rep.max_qfi = kappa * ng * ng;
    rep.success_probability = std::pow(Pc, kappa);

    // Per-tampered-round undetected probability of the uniform basis guess:
    // deterministic-check rounds are caught with probability 1/2 on a wrong
    // family guess.
    if (params.k == 0 && !params.extended_decoys) {
        rep.undetected_per_round = 1 - (1 - Pa * Pc) / 4;
        rep.formula = "1 - (1 - P_a*P_c)/4";
    } else if (params.k == 0 && params.extended_decoys) {
        const double p_det_round =
            Pa * (1 - Pc) + (1 - Pa) / 2 + (1 - Pa) * (1 - Pc) / 2;
        rep.undetected_per_round = 1 - p_det_round / 3;
        rep.formula =
            "1 - [P_a(1-P_c) + (1-P_a)/2 + (1-P_a)(1-P_c)/2]/3 (three decoy families)";
    } else if (params.k == 1 && !params.preshared_basis_key) {
        const double eta = eta_for(Pa, Pc);
        rep.undetected_per_round =
            1 - ((1 - Pa) * (1 - eta) + Pa * (1 - Pc) * eta) / 4;
        rep.formula = "1 - [(1-P_a)(1-eta) + P_a(1-P_c)eta]/4";
    } else if (params.k == 1 && params.preshared_basis_key) {
        rep.undetected_per_round = 1 - (1 - Pa * Pc) / 4;
        rep.formula = "1 - (1 - P_a*P_c)/4 (preshared basis key)";
    } else if (params.k >= 2 && !params.extended_decoys) {
        // Key-fixed measurement bases make every non-phase round a
        // deterministic check, as in the preshared two-party variant.
        rep.undetected_per_round = 1 - (1 - Pa * Pc) / 4;
        rep.formula = "1 - (1 - P_a*P_c)/4 (key-fixed bases)";
    } else {
        rep.has_undetected = false;
        rep.undetected_per_round = 0;
        rep.formula = "not defined for this configuration";
    }
    return rep;
}

}  // namespace qcm
