#pragma once

#include <complex>
#include <cstdint>
#include <vector>

#include "qcm/rng.hpp"

namespace qcm {

using cd = std::complex<double>;

// Two-level coding subspace per probe: bit 0 of an amplitude index is probe 0,
// value 0 meaning the lower eigenstate, 1 the upper one.

// Eigenvalue pair of the generator. The check-unitary flip rule is exact only
// when the gap is an odd positive integer, so the constructor rejects other
// gaps unless `unsafe` is set.
struct Spectrum {
    double lambda_min = 0.0;
    double lambda_max = 1.0;

    Spectrum() = default;
    Spectrum(double lm, double lM, bool unsafe = false);

    double gap() const { return lambda_max - lambda_min; }
};

enum class Basis { GhzPlusMinus, Energy, GhzPlusMinusI };
enum class GhzOutcome { Plus, Minus, Invalid };

// Pure state of n probes as a full 2^n amplitude vector. Norm stays within
// 1e-12 of 1 after every operation.
struct JointState {
    int n = 0;
    std::vector<cd> amps;

    double norm2() const;
    cd overlap(const JointState& other) const;
    double fidelity(const JointState& other) const;  // |<a|b>|^2
};

// Probe-count cap: default 12, hard max 24.
int state_cap();
void set_state_cap(int cap);

JointState prepare_noon(int n, int sign);        // (|0..0> + s|1..1>)/sqrt2
JointState prepare_noon_imag(int n, int sign);   // (|0..0> + s*i|1..1>)/sqrt2
JointState prepare_energy(int n, int which);     // |0..0> or |1..1>

// Multiplies each listed probe's components by e^{-i theta lambda}.
void apply_phase(JointState& state, double theta, const Spectrum& spectrum,
                 const std::vector<int>& probes);
void apply_phase_all(JointState& state, double theta, const Spectrum& spectrum);

struct GhzProbabilities {
    double p_plus = 0, p_minus = 0, p_invalid = 0;
};

// Exact outcome probabilities of the GHZ-pair measurement; mass outside
// span{|0..0>, |1..1>} is the invalid branch.
GhzProbabilities ghz_probabilities(const JointState& state, bool imaginary);

struct GhzMeasurement {
    GhzOutcome outcome;
    double prob;  // Born probability of the sampled outcome
};

// Projective measurement in the GHZ pair family (real or imaginary);
// collapses in place. States outside the pair's span collapse onto the
// orthogonal complement and report Invalid.
GhzMeasurement measure_ghz(JointState& state, Rng& rng, bool imaginary = false);

// Full computational-basis measurement; returns the sampled bitstring.
std::uint64_t measure_energy_all(JointState& state, Rng& rng);

// Exact single-probe outcome probabilities in the given basis (outcome 0 is
// |0>, |+> or |+i> depending on the basis).
void single_probe_probabilities(const JointState& state, int probe, Basis basis,
                                double* p0, double* p1);

// Rank-1 projective measurement of one probe; the rest collapses accordingly.
int measure_single_probe(JointState& state, int probe, Basis basis, Rng& rng);

// Density-matrix helpers for the phase-invariance analysis. Matrices are
// row-major 2^n x 2^n; capped at n = 10.
std::vector<cd> pure_density(const JointState& state);
std::vector<cd> decoy_mixture_density(int n);  // (|0..0><0..0| + |1..1><1..1|)/2
std::vector<cd> phase_evolved_density(const std::vector<cd>& rho, int n,
                                      double theta, const Spectrum& spectrum);
bool density_invariant_under_phase(const std::vector<cd>& rho, int n,
                                   double theta, const Spectrum& spectrum,
                                   double tol = 1e-12);

// True iff the half/half mixture of the two all-energy products is invariant
// under apply_phase at the given angle, entrywise within 1e-12.
bool eve_view_density_invariance_check(int n, double theta,
                                       const Spectrum& spectrum);

}  // namespace qcm
