#pragma once

#include <string>
#include <vector>

#include "qcm/protocol.hpp"

namespace qcm {

struct Expectation {
    double value = 0.0;
    int count = 0;
};

// Sample mean of o * s * (-1)^m over the usable cosine rounds; converges to
// cos(N * phi * gap). level_N, when nonzero, must match the transcript's
// probe count.
Expectation expectation_from_transcript(const Transcript& t, int level_N = 0);

// Sample mean of -o * s * (-1)^m over the usable quadrature rounds; converges
// to sin(N * phi * gap). Zero count is not an error here since quadrature
// rounds are optional.
Expectation sin_expectation_from_transcript(const Transcript& t);

struct LadderLevel {
    int N = 0;
    int rounds_used = 0;
    double raw_expectation = 0.0;
    double sin_expectation = 0.0;
    bool has_sin = false;
    double phi_estimate = 0.0;
};

struct EstimationResult {
    double phi_hat = 0.0;          // in [0, 2*pi/gap)
    double empirical_variance = 0.0;  // plug-in sampling variance at the top level
    double analytic_bound = 0.0;      // Fisher floor 1/(rounds * (N*gap)^2) there
    int samples_used = 0;
    std::vector<LadderLevel> ladder;
    bool failed = false;
    std::string failure_reason;
};

// Maximum-likelihood phase from paired cosine/sine counts at the base level;
// the argument names are the (+1, -1) tallies of each quadrature.
double phase_mle_level1(int cos_plus, int cos_minus, int sin_plus, int sin_minus);

// Multi-resolution estimate: the first transcript pins the branch via both
// quadratures, each later one refines within the previous confidence window.
// max_per_level > 0 truncates every level to that many usable rounds.
EstimationResult ladder_estimate(const std::vector<Transcript>& levels, int max_per_level = 0);

enum class BoundScenario { Heisenberg, SingleParty, TwoParty, MultiParty };

struct BoundSpec {
    BoundScenario scenario = BoundScenario::Heisenberg;
    int N = 1;
    int nu = 1;
    double P_a = 2.0 / 3.0;
    double P_c = 0.5;
    double gap = 1.0;
    int k = 0;
};

// Phase-variance floor for one protocol family at the given resources.
double bound(const BoundSpec& spec);

}  // namespace qcm
