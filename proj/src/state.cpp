#include "qcm/state.hpp"

#include <bit>
#include <cmath>
#include <stdexcept>
#include <string>

namespace qcm {

namespace {

constexpr int kHardCap = 24;
constexpr int kDensityCap = 10;
int g_cap = 12;

void check_probe_count(int n) {
    if (n < 1 || n > g_cap) {
        throw std::out_of_range("probe count " + std::to_string(n) +
                                " outside [1, " + std::to_string(g_cap) + "]");
    }
}

constexpr double kInvSqrt2 = 0.70710678118654752440;

}  // namespace

Spectrum::Spectrum(double lm, double lM, bool unsafe)
    : lambda_min(lm), lambda_max(lM) {
    if (!(lambda_max > lambda_min)) {
        throw std::invalid_argument("spectrum requires lambda_max > lambda_min");
    }
    if (!unsafe) {
        const double g = gap();
        const double r = std::round(g);
        const bool odd_integer =
            std::abs(g - r) <= 1e-9 && std::llround(r) % 2 == 1;
        if (!odd_integer) {
            throw std::invalid_argument(
                "spectral gap must be an odd positive integer for exact check "
                "unitaries; pass unsafe=true to override");
        }
    }
}

double JointState::norm2() const {
    double s = 0;
    for (const cd& a : amps) s += std::norm(a);
    return s;
}

cd JointState::overlap(const JointState& other) const {
    if (n != other.n) throw std::invalid_argument("overlap: probe count mismatch");
    cd s = 0;
    for (std::size_t i = 0; i < amps.size(); ++i) s += std::conj(amps[i]) * other.amps[i];
    return s;
}

double JointState::fidelity(const JointState& other) const {
    return std::norm(overlap(other));
}

int state_cap() { return g_cap; }

void set_state_cap(int cap) {
    if (cap < 1 || cap > kHardCap) {
        throw std::invalid_argument("cap must lie in [1, 24]");
    }
    g_cap = cap;
}

JointState prepare_noon(int n, int sign) {
    check_probe_count(n);
    JointState st;
    st.n = n;
    st.amps.assign(std::size_t{1} << n, cd{0, 0});
    st.amps.front() = kInvSqrt2;
    st.amps.back() = sign >= 0 ? cd{kInvSqrt2, 0} : cd{-kInvSqrt2, 0};
    return st;
}

JointState prepare_noon_imag(int n, int sign) {
    check_probe_count(n);
    JointState st;
    st.n = n;
    st.amps.assign(std::size_t{1} << n, cd{0, 0});
    st.amps.front() = kInvSqrt2;
    st.amps.back() = sign >= 0 ? cd{0, kInvSqrt2} : cd{0, -kInvSqrt2};
    return st;
}

JointState prepare_energy(int n, int which) {
    check_probe_count(n);
    if (which != 0 && which != 1) {
        throw std::invalid_argument("prepare_energy: which must be 0 or 1");
    }
    JointState st;
    st.n = n;
    st.amps.assign(std::size_t{1} << n, cd{0, 0});
    if (which == 0) st.amps.front() = 1;
    else st.amps.back() = 1;
    return st;
}

void apply_phase(JointState& state, double theta, const Spectrum& spectrum,
                 const std::vector<int>& probes) {
    std::uint64_t mask = 0;
    for (int p : probes) {
        if (p < 0 || p >= state.n) throw std::out_of_range("apply_phase: probe index");
        mask |= std::uint64_t{1} << p;
    }
    const int total = std::popcount(mask);
    // Phase on index x: e^{-i theta (k0*lm + k1*lM)} with k1 upper-level probes.
    std::vector<cd> factor(static_cast<std::size_t>(total) + 1);
    for (int k1 = 0; k1 <= total; ++k1) {
        const double ang = -theta * (spectrum.lambda_min * (total - k1) +
                                     spectrum.lambda_max * k1);
        factor[k1] = std::polar(1.0, ang);
    }
    for (std::size_t x = 0; x < state.amps.size(); ++x) {
        state.amps[x] *= factor[std::popcount(x & mask)];
    }
}

void apply_phase_all(JointState& state, double theta, const Spectrum& spectrum) {
    std::vector<int> all(state.n);
    for (int i = 0; i < state.n; ++i) all[i] = i;
    apply_phase(state, theta, spectrum, all);
}

GhzProbabilities ghz_probabilities(const JointState& state, bool imaginary) {
    const cd a0 = state.amps.front();
    const cd a1 = state.amps.back();
    const cd c = imaginary ? cd{0, 1} : cd{1, 0};
    GhzProbabilities p;
    p.p_plus = 0.5 * std::norm(a0 + std::conj(c) * a1);
    p.p_minus = 0.5 * std::norm(a0 - std::conj(c) * a1);
    p.p_invalid = std::max(0.0, state.norm2() - p.p_plus - p.p_minus);
    return p;
}

GhzMeasurement measure_ghz(JointState& state, Rng& rng, bool imaginary) {
    const GhzProbabilities p = ghz_probabilities(state, imaginary);
    const double u = rng.uniform();
    const cd c = imaginary ? cd{0, 1} : cd{1, 0};
    const std::size_t last = state.amps.size() - 1;
    if (u < p.p_plus) {
        std::fill(state.amps.begin(), state.amps.end(), cd{0, 0});
        state.amps[0] = kInvSqrt2;
        state.amps[last] = c * kInvSqrt2;
        return {GhzOutcome::Plus, p.p_plus};
    }
    if (u < p.p_plus + p.p_minus) {
        std::fill(state.amps.begin(), state.amps.end(), cd{0, 0});
        state.amps[0] = kInvSqrt2;
        state.amps[last] = -c * kInvSqrt2;
        return {GhzOutcome::Minus, p.p_minus};
    }
    // Orthogonal-complement branch: remove the GHZ-pair span and renormalize.
    state.amps[0] = 0;
    state.amps[last] = 0;
    const double rem = std::sqrt(state.norm2());
    if (rem > 0) {
        for (cd& a : state.amps) a /= rem;
    }
    return {GhzOutcome::Invalid, p.p_invalid};
}

std::uint64_t measure_energy_all(JointState& state, Rng& rng) {
    double u = rng.uniform();
    std::size_t chosen = state.amps.size() - 1;  // guards rounding shortfall
    double acc = 0;
    for (std::size_t x = 0; x < state.amps.size(); ++x) {
        acc += std::norm(state.amps[x]);
        if (u < acc) {
            chosen = x;
            break;
        }
    }
    std::fill(state.amps.begin(), state.amps.end(), cd{0, 0});
    state.amps[chosen] = 1;
    return chosen;
}

namespace {

// Basis vectors as (b0, b1) coefficients of outcome 0 / outcome 1 states.
void basis_vectors(Basis basis, cd b[2][2]) {
    switch (basis) {
        case Basis::Energy:
            b[0][0] = 1; b[0][1] = 0;
            b[1][0] = 0; b[1][1] = 1;
            break;
        case Basis::GhzPlusMinus:
            b[0][0] = kInvSqrt2; b[0][1] = kInvSqrt2;
            b[1][0] = kInvSqrt2; b[1][1] = -kInvSqrt2;
            break;
        case Basis::GhzPlusMinusI:
            b[0][0] = kInvSqrt2; b[0][1] = cd{0, kInvSqrt2};
            b[1][0] = kInvSqrt2; b[1][1] = cd{0, -kInvSqrt2};
            break;
    }
}

}  // namespace

void single_probe_probabilities(const JointState& state, int probe, Basis basis,
                                double* p0, double* p1) {
    if (probe < 0 || probe >= state.n) throw std::out_of_range("probe index");
    cd b[2][2];
    basis_vectors(basis, b);
    const std::uint64_t bit = std::uint64_t{1} << probe;
    double q[2] = {0, 0};
    for (std::size_t x = 0; x < state.amps.size(); ++x) {
        if (x & bit) continue;
        const cd lo = state.amps[x];
        const cd hi = state.amps[x | bit];
        for (int o = 0; o < 2; ++o) {
            q[o] += std::norm(std::conj(b[o][0]) * lo + std::conj(b[o][1]) * hi);
        }
    }
    *p0 = q[0];
    *p1 = q[1];
}

int measure_single_probe(JointState& state, int probe, Basis basis, Rng& rng) {
    double p0 = 0, p1 = 0;
    single_probe_probabilities(state, probe, basis, &p0, &p1);
    const int outcome = rng.uniform() < p0 ? 0 : 1;
    cd b[2][2];
    basis_vectors(basis, b);
    const cd* v = b[outcome];
    const std::uint64_t bit = std::uint64_t{1} << probe;
    for (std::size_t x = 0; x < state.amps.size(); ++x) {
        if (x & bit) continue;
        const cd lo = state.amps[x];
        const cd hi = state.amps[x | bit];
        const cd proj = std::conj(v[0]) * lo + std::conj(v[1]) * hi;
        state.amps[x] = proj * v[0];
        state.amps[x | bit] = proj * v[1];
    }
    const double nrm = std::sqrt(state.norm2());
    if (nrm > 0) {
        for (cd& a : state.amps) a /= nrm;
    }
    return outcome;
}

std::vector<cd> pure_density(const JointState& state) {
    if (state.n > kDensityCap) throw std::out_of_range("density helper capped at n = 10");
    const std::size_t d = state.amps.size();
    std::vector<cd> rho(d * d);
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            rho[i * d + j] = state.amps[i] * std::conj(state.amps[j]);
        }
    }
    return rho;
}

std::vector<cd> decoy_mixture_density(int n) {
    check_probe_count(n);
    if (n > kDensityCap) throw std::out_of_range("density helper capped at n = 10");
    const std::size_t d = std::size_t{1} << n;
    std::vector<cd> rho(d * d, cd{0, 0});
    rho[0] = 0.5;
    rho[(d - 1) * d + (d - 1)] = 0.5;
    return rho;
}

std::vector<cd> phase_evolved_density(const std::vector<cd>& rho, int n,
                                      double theta, const Spectrum& spectrum) {
    const std::size_t d = std::size_t{1} << n;
    if (rho.size() != d * d) throw std::invalid_argument("density size mismatch");
    std::vector<cd> u(d);
    for (std::size_t x = 0; x < d; ++x) {
        const int k1 = std::popcount(x);
        const double ang = -theta * (spectrum.lambda_min * (n - k1) +
                                     spectrum.lambda_max * k1);
        u[x] = std::polar(1.0, ang);
    }
    std::vector<cd> out(d * d);
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            out[i * d + j] = u[i] * rho[i * d + j] * std::conj(u[j]);
        }
    }
    return out;
}

bool density_invariant_under_phase(const std::vector<cd>& rho, int n,
                                   double theta, const Spectrum& spectrum,
                                   double tol) {
    const std::vector<cd> evolved = phase_evolved_density(rho, n, theta, spectrum);
    for (std::size_t i = 0; i < rho.size(); ++i) {
        if (std::abs(evolved[i] - rho[i]) > tol) return false;
    }
    return true;
}

bool eve_view_density_invariance_check(int n, double theta,
                                       const Spectrum& spectrum) {
    return density_invariant_under_phase(decoy_mixture_density(n), n, theta,
                                         spectrum);
}

}  // namespace qcm
