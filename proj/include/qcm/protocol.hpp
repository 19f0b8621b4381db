#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "qcm/adversary.hpp"
#include "qcm/params.hpp"

namespace qcm {

struct CharlieAction {
    bool applied_phase = false;  // true: U_{phi + m pi/N}; false: U_{m pi/N}
    int m = 0;                   // uniform on {0..N-1}, one draw per round
};

// Everything recorded about one protocol round. `bases` and `outcomes` hold
// one entry per measuring party; GHZ-family outcomes are "plus"/"minus"/
// "invalid", product shares "plus"/"minus", energy outcomes bitstrings.
struct RoundRecord {
    int index = 0;
    PrepKind prep = PrepKind::NoonPlus;
    CharlieAction charlie{};
    std::vector<TamperRecord> adversary_events;
    std::vector<std::string> bases;
    std::vector<std::string> outcomes;
    bool sift_kept = false;
    DecoyCheck decoy_check = DecoyCheck::NotADecoy;
    bool quadrature_measured = false;
    bool usable_for_estimation = false;
    std::vector<Message> messages;
};

struct Transcript {
    ProtocolParams params;
    std::vector<RoundRecord> rounds;
    bool aborted = false;
    int abort_round = -1;
    bool probe_count_violation = false;
    std::vector<int> retained_for_estimation;
    std::vector<Message> reveal_log;
};

struct PartyKey {
    std::vector<std::uint8_t> bits;
    double sampled_qber = 0;
    bool aborted = false;
    std::vector<int> flips_applied;
};

// Input to decoy verification at the reveal step where preparation class and
// Charlie's action become known.
struct RevealContext {
    PrepKind prep = PrepKind::NoonPlus;
    bool charlie_check = false;  // true when the round carried no phi
    int m = 0;
    bool quadrature_measured = false;
};

// Deterministic-outcome verification: energy preparations must reproduce
// their bit; NOON preparations under a check unitary must match the parity
// flip rule; an invalid GHZ outcome always fails. Quadrature-measured rounds
// carry no verifiable parity and return NotADecoy.
DecoyCheck verify_decoy(const RoundRecord& record, const RevealContext& ctx);

Transcript run_single_party(const ProtocolParams& params, AdversaryStrategy& eve);
Transcript run_two_party(const ProtocolParams& params, AdversaryStrategy& eve);
Transcript run_multi_party(const ProtocolParams& params, AdversaryStrategy& eve);

struct Bb84Stats {
    int qubits = 0;
    int sifted = 0;
    int sampled = 0;
    int sample_errors = 0;
    double sift_rate = 0;
    double qber = 0;
};

// One batch of the toy single-qubit key exchange; the eavesdropper hook is
// optional. Even-indexed sifted bits are sacrificed for the error estimate,
// odd-indexed ones become key material.
Bb84Stats bb84_exchange(int qubits, AdversaryStrategy* eve, Rng& rng,
                        std::vector<std::uint8_t>* key_out = nullptr);

// Loops bb84_exchange until `length` key bits are available. Aborts (as a
// result state) when the sampled error rate exceeds the threshold.
PartyKey bb84_keygen(int length, Rng& rng, AdversaryStrategy* eve = nullptr,
                     double qber_threshold = 0.11);

// First key is the reference; every other key records the flip positions
// applied to match it. Output strings are all identical to the reference.
std::vector<PartyKey> align_keys(const std::vector<PartyKey>& keys);

}  // namespace qcm
