#pragma once

#include <cstdint>

#include "qcm/state.hpp"

namespace qcm {

// Preparation kinds. The imaginary pair appears only with extended decoys,
// which re-split the decoy mass equally over the four non-phase kinds.
enum class PrepKind { NoonPlus, NoonMinus, Energy0, Energy1, NoonPlusI, NoonMinusI };

inline bool prep_is_real_noon(PrepKind p) {
    return p == PrepKind::NoonPlus || p == PrepKind::NoonMinus;
}
inline bool prep_is_imag_noon(PrepKind p) {
    return p == PrepKind::NoonPlusI || p == PrepKind::NoonMinusI;
}
inline bool prep_is_noon(PrepKind p) {
    return prep_is_real_noon(p) || prep_is_imag_noon(p);
}
inline bool prep_is_energy(PrepKind p) {
    return p == PrepKind::Energy0 || p == PrepKind::Energy1;
}
inline int prep_sign(PrepKind p) {
    return (p == PrepKind::NoonPlus || p == PrepKind::NoonPlusI) ? +1 : -1;
}
inline int prep_bit(PrepKind p) { return p == PrepKind::Energy1 ? 1 : 0; }

enum class DecoyCheck { NotADecoy, Pass, Fail };

// All protocol knobs. k = 0 is the single-party scheme, k = 1 two-party,
// k >= 2 the secret-sharing scheme over k recipients.
struct ProtocolParams {
    int N = 4;
    int k = 0;
    double P_a = 2.0 / 3.0;
    double P_c = 0.5;
    Spectrum spectrum{};
    double phi_true = 0.0;
    int nu = 100;
    std::uint64_t seed = 1;
    bool extended_decoys = false;
    bool preshared_basis_key = false;
    // Fraction of real-NOON rounds the preparer measures in the imaginary
    // family to collect sine-quadrature data (single-party only). Such rounds
    // cannot double as decoys and are skipped by the check verdicts.
    double quadrature_fraction = 0.0;
    // When set, requires P_a(2 - P_c) = 1 so both decoy families occur
    // equally often.
    bool balanced_decoys = true;
    int abort_threshold = 1;  // failed checks tolerated before aborting, minus one
    int key_length = 64;      // aligned-key bits driving the k-party schedule
};

// Throws std::invalid_argument on out-of-range or inconsistent settings.
void validate(const ProtocolParams& params);

// Bob's GHZ-family basis probability in the two-party scheme.
double eta_for(double P_a, double P_c);

}  // namespace qcm
