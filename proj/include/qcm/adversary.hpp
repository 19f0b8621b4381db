#pragma once

#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "qcm/params.hpp"
#include "qcm/rng.hpp"
#include "qcm/state.hpp"

namespace qcm {

// Classical message as logged in round records and the reveal log.
struct Message {
    int step = 0;          // reveal step, 0 for in-round traffic
    std::string from;
    std::string kind;
    nlohmann::json payload;
};

struct TamperRecord {
    int round = 0;
    int probe = 0;
    std::string action;
    nlohmann::json detail;
};

enum class Leg { ToCharlie, FromCharlie };

// Handle given to a strategy at each probe transit. `state` is the joint
// state carrying the probe; strategies may transform or measure it through
// the qsim operations. Setting `inject` sends that many adversary-owned
// probes alongside, which the receiving station adds to its probe count.
struct TransitContext {
    Leg leg = Leg::ToCharlie;
    int round = 0;
    int probe = 0;
    int probes_in_state = 0;
    int charlie_probes = 0;  // round probes routed through Charlie (public N)
    bool last_transit_of_round = false;
    JointState* state = nullptr;
    const Spectrum* spectrum = nullptr;
    int inject = 0;
};

// Strategies may keep memory across probes and rounds but see only transit
// handles and broadcast classical messages, never hidden protocol state.
class AdversaryStrategy {
public:
    virtual ~AdversaryStrategy() = default;

    // `decoy_families` is 2 normally, 3 with extended decoys enabled.
    virtual void begin_run(int decoy_families) { (void)decoy_families; }
    virtual std::vector<TamperRecord> on_probe_transit(TransitContext& ctx,
                                                       Rng& rng) = 0;
    virtual void on_classical_message(const Message& msg) { (void)msg; }

    // Discrete per-round observation codes accumulated by the strategy,
    // used by the information-leakage analyses.
    virtual std::vector<int> observations() const { return {}; }
};

std::unique_ptr<AdversaryStrategy> passive();

// Adds theta/N per probe on the return leg, biasing each round's total
// encoded phase by theta.
std::unique_ptr<AdversaryStrategy> phase_bias(double theta);

// Buffers each round's probes, guesses the decoy family uniformly, performs
// the corresponding collective von Neumann measurement at the round's final
// transit and forwards the collapsed state.
std::unique_ptr<AdversaryStrategy> basis_guess_intercept_resend();

// Sends `extra` additional probes per round on the outbound leg.
std::unique_ptr<AdversaryStrategy> probe_injector(int extra);

// Builds a strategy from a config object {"kind": ..., parameters...}.
// Kinds: passive, phase_bias (theta), basis_guess, probe_injector (extra).
std::unique_ptr<AdversaryStrategy> make_adversary(const nlohmann::json& cfg);

struct EveReport {
    double max_qfi = 0;             // kappa * (N * gap)^2
    double success_probability = 1;  // P_c^kappa
    double undetected_per_round = 1;
    bool has_undetected = true;
    std::string formula;
};

// Analytic information/detection trade-off for the basis-guess strategy
// tampering with `kappa` rounds under the given parameters.
EveReport eve_information_report(const ProtocolParams& params, int kappa);

}  // namespace qcm
