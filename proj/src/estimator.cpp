#include "qcm/estimator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "qcm/stats.hpp"

namespace qcm {
namespace {

int outcome_value(const std::string& s) {
    if (s == "plus") return +1;
    if (s == "minus") return -1;
    return 0;  // invalid readout carries no parity
}

// o * s * (-1)^m for the round, 0 if the readout was invalid.  When the state
// was split across recipients the parity o is the product of every share.
int round_sample(const RoundRecord& rec) {
    if (rec.outcomes.empty()) return 0;
    int o = 1;
    for (const std::string& name : rec.outcomes) {
        const int v = outcome_value(name);
        if (v == 0) return 0;
        o *= v;
    }
    const int flip = rec.charlie.m % 2 == 0 ? +1 : -1;
    return o * prep_sign(rec.prep) * flip;
}

struct LevelSamples {
    int cos_plus = 0, cos_minus = 0;
    int sin_plus = 0, sin_minus = 0;
    int cos_count() const { return cos_plus + cos_minus; }
    int sin_count() const { return sin_plus + sin_minus; }
    int total() const { return cos_count() + sin_count(); }
    double cos_mean() const {
        return static_cast<double>(cos_plus - cos_minus) / cos_count();
    }
    double sin_mean() const {
        return static_cast<double>(sin_plus - sin_minus) / sin_count();
    }
};

LevelSamples collect(const Transcript& t, int max_rounds) {
    LevelSamples s;
    for (const RoundRecord& rec : t.rounds) {
        if (!rec.usable_for_estimation) continue;
        if (max_rounds > 0 && s.total() >= max_rounds) break;
        const int v = round_sample(rec);
        if (v == 0) continue;
        if (rec.quadrature_measured) {
            // The imaginary-family readout of a real preparation estimates the
            // sine quadrature with a sign flip.
            (v < 0 ? s.sin_plus : s.sin_minus)++;
        } else {
            (v > 0 ? s.cos_plus : s.cos_minus)++;
        }
    }
    return s;
}

}  // namespace

Expectation expectation_from_transcript(const Transcript& t, int level_N) {
    if (t.aborted) {
        throw std::invalid_argument("expectation_from_transcript: transcript aborted");
    }
    if (level_N != 0 && level_N != t.params.N) {
        throw std::invalid_argument("expectation_from_transcript: level_N mismatch");
    }
    double sum = 0.0;
    int n = 0;
    for (const RoundRecord& rec : t.rounds) {
        if (!rec.usable_for_estimation || rec.quadrature_measured) continue;
        const int v = round_sample(rec);
        if (v == 0) continue;
        sum += v;
        ++n;
    }
    if (n == 0) {
        throw std::invalid_argument("expectation_from_transcript: no usable rounds");
    }
    return Expectation{std::clamp(sum / n, -1.0, 1.0), n};
}

Expectation sin_expectation_from_transcript(const Transcript& t) {
    if (t.aborted) {
        throw std::invalid_argument("sin_expectation_from_transcript: transcript aborted");
    }
    double sum = 0.0;
    int n = 0;
    for (const RoundRecord& rec : t.rounds) {
        if (!rec.usable_for_estimation || !rec.quadrature_measured) continue;
        const int v = round_sample(rec);
        if (v == 0) continue;
        sum += -v;
        ++n;
    }
    return Expectation{n > 0 ? sum / n : 0.0, n};
}

double phase_mle_level1(int cos_plus, int cos_minus, int sin_plus, int sin_minus) {
    if (cos_plus < 0 || cos_minus < 0 || sin_plus < 0 || sin_minus < 0) {
        throw std::invalid_argument("phase_mle_level1: negative count");
    }
    if (cos_plus + cos_minus + sin_plus + sin_minus == 0) {
        throw std::invalid_argument("phase_mle_level1: no samples");
    }
    auto nll = [&](double u) {
        auto lg = [](double x) { return std::log(std::max(x, 1e-300)); };
        const double c = std::cos(u), s = std::sin(u);
        return -(cos_plus * lg(1 + c) + cos_minus * lg(1 - c) + sin_plus * lg(1 + s) +
                 sin_minus * lg(1 - s));
    };
    const int kGrid = 8192;
    double best_u = 0.0, best = nll(0.0);
    for (int i = 1; i < kGrid; ++i) {
        const double u = 2 * M_PI * i / kGrid;
        const double v = nll(u);
        if (v < best) {
            best = v;
            best_u = u;
        }
    }
    double lo = best_u - 2 * M_PI / kGrid;
    double hi = best_u + 2 * M_PI / kGrid;
    const double gr = (std::sqrt(5.0) - 1) / 2;
    double x1 = hi - gr * (hi - lo), x2 = lo + gr * (hi - lo);
    double f1 = nll(x1), f2 = nll(x2);
    for (int it = 0; it < 80; ++it) {
        if (f1 < f2) {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - gr * (hi - lo);
            f1 = nll(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + gr * (hi - lo);
            f2 = nll(x2);
        }
    }
    double u = std::fmod((lo + hi) / 2, 2 * M_PI);
    if (u < 0) u += 2 * M_PI;
    return u;
}

EstimationResult ladder_estimate(const std::vector<Transcript>& levels, int max_per_level) {
    if (levels.empty()) throw std::invalid_argument("ladder_estimate: no levels");
    const double gap = levels.front().params.spectrum.gap();
    const double period = 2 * M_PI / gap;
    EstimationResult res;
    double phi = 0.0;
    bool have_phi = false;

    for (std::size_t li = 0; li < levels.size(); ++li) {
        const Transcript& t = levels[li];
        if (std::abs(t.params.spectrum.gap() - gap) > 1e-12) {
            throw std::invalid_argument("ladder_estimate: mixed spectral gaps");
        }
        if (t.aborted) {
            res.failed = true;
            res.failure_reason = "aborted transcript at level " + std::to_string(li);
            break;
        }
        const int N = t.params.N;
        const LevelSamples s = collect(t, max_per_level);
        if (s.total() == 0) {
            res.failed = true;
            res.failure_reason = "no usable rounds at level " + std::to_string(li);
            break;
        }

        LadderLevel lvl;
        lvl.N = N;
        lvl.rounds_used = s.total();
        lvl.raw_expectation = s.cos_count() > 0 ? s.cos_mean() : 0.0;
        lvl.has_sin = s.sin_count() > 0;
        lvl.sin_expectation = lvl.has_sin ? s.sin_mean() : 0.0;

        if (!have_phi) {
            double u;
            if (lvl.has_sin && s.cos_count() > 0) {
                u = phase_mle_level1(s.cos_plus, s.cos_minus, s.sin_plus, s.sin_minus);
            } else if (s.cos_count() > 0) {
                // Cosine alone cannot distinguish +-u; take the upper branch.
                u = std::acos(std::clamp(s.cos_mean(), -1.0, 1.0));
            } else {
                u = std::asin(std::clamp(s.sin_mean(), -1.0, 1.0));
            }
            phi = u / (N * gap);
            phi = std::fmod(phi, period);
            if (phi < 0) phi += period;
            have_phi = true;
        } else {
            if (s.cos_count() == 0) {
                res.failed = true;
                res.failure_reason = "no cosine samples at level " + std::to_string(li);
                break;
            }
            double best_cand = phi;
            double best_dist = std::numeric_limits<double>::infinity();
            if (lvl.has_sin) {
                // Both quadratures pin u modulo 2*pi, so the only freedom left
                // is which of the N fringes we sit on.  Cosine-only data would
                // also admit the mirror -u, a branch that sits arbitrarily
                // close to the truth near u = 0 or pi and poisons refinement.
                const double u =
                    phase_mle_level1(s.cos_plus, s.cos_minus, s.sin_plus, s.sin_minus);
                for (int j = 0; j < N; ++j) {
                    double cand = (u + 2 * M_PI * j) / (N * gap);
                    cand = std::fmod(cand, period);
                    if (cand < 0) cand += period;
                    const double d = circular_distance(cand, phi, period);
                    if (d < best_dist) {
                        best_dist = d;
                        best_cand = cand;
                    }
                }
            } else {
                const double a = std::acos(std::clamp(s.cos_mean(), -1.0, 1.0));
                for (int j = 0; j < N; ++j) {
                    for (int sign = -1; sign <= 1; sign += 2) {
                        double cand = (sign * a + 2 * M_PI * j) / (N * gap);
                        cand = std::fmod(cand, period);
                        if (cand < 0) cand += period;
                        const double d = circular_distance(cand, phi, period);
                        if (d < best_dist) {
                            best_dist = d;
                            best_cand = cand;
                        }
                    }
                }
            }
            // A clean refinement lands well inside the branch selected by the
            // previous level; anything further out is a corrupted level.
            if (best_dist > 0.8 * M_PI / (N * gap)) {
                res.failed = true;
                res.failure_reason =
                    "refinement fell outside the trusted window at level " + std::to_string(li);
                break;
            }
            phi = best_cand;
        }
        lvl.phi_estimate = phi;
        res.ladder.push_back(lvl);
        res.samples_used += lvl.rounds_used;
    }

    if (res.ladder.empty()) {
        res.failed = true;
        if (res.failure_reason.empty()) res.failure_reason = "no levels produced an estimate";
        return res;
    }
    const LadderLevel& last = res.ladder.back();
    res.phi_hat = last.phi_estimate;
    const double fisher = static_cast<double>(last.rounds_used) * last.N * last.N * gap * gap;
    res.analytic_bound = 1.0 / fisher;
    // Delta-method plug-in: var(mean)/(d cos/d phi)^2 collapses to the Fisher
    // floor with a Bessel correction, independent of where on the fringe we sit.
    res.empirical_variance =
        last.rounds_used > 1
            ? 1.0 / (static_cast<double>(last.rounds_used - 1) * last.N * last.N * gap * gap)
            : res.analytic_bound;
    return res;
}

double bound(const BoundSpec& spec) {
    if (spec.N < 1) throw std::invalid_argument("bound: N must be >= 1");
    if (spec.nu < 1) throw std::invalid_argument("bound: nu must be >= 1");
    if (!(spec.gap > 0)) throw std::invalid_argument("bound: gap must be positive");
    const double n2 = static_cast<double>(spec.N) * spec.N * spec.gap * spec.gap;
    const double nu = static_cast<double>(spec.nu);
    if (spec.scenario != BoundScenario::Heisenberg) {
        if (!(spec.P_a > 0 && spec.P_a < 1) || !(spec.P_c > 0 && spec.P_c < 1)) {
            throw std::invalid_argument("bound: probabilities must lie in (0,1)");
        }
    }
    switch (spec.scenario) {
        case BoundScenario::Heisenberg:
            return 1.0 / (nu * n2);
        case BoundScenario::SingleParty:
            return 1.0 / (nu * spec.P_a * spec.P_c * n2);
        case BoundScenario::TwoParty: {
            const double eta = eta_for(spec.P_a, spec.P_c);
            return 2.0 / (nu * spec.P_a * eta * spec.P_c * n2);
        }
        case BoundScenario::MultiParty:
            return 2.0 / (nu * spec.P_a * spec.P_c * n2);
    }
    throw std::logic_error("bound: unreachable");
}

}  // namespace qcm
