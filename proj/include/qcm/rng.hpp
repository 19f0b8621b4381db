#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>

namespace qcm {

// SplitMix64 finalizer. Used to mix (seed, stream) pairs and to derive
// per-trial seeds so that parallel trials draw from disjoint sequences.
inline std::uint64_t mix64(std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
    return mix64(master ^ mix64(index + 0x632BE59BD9B4E019ULL));
}

// Deterministic seeded generator. All draws are hand-rolled from raw 64-bit
// output so sequences are identical across standard libraries and platforms;
// identical (seed, stream) gives an identical draw sequence bit for bit.
class Rng {
public:
    Rng(std::uint64_t seed, std::uint64_t stream)
        : eng_(mix64(seed ^ mix64(stream * 0x9E3779B97F4A7C15ULL + 1))) {}

    std::uint64_t next_u64() { return eng_(); }

    // Uniform double in [0, 1) with 53 random bits.
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Unbiased integer in [0, n) by rejection.
    std::uint64_t below(std::uint64_t n) {
        if (n == 0) throw std::invalid_argument("Rng::below: n must be positive");
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t v = next_u64();
        while (v >= limit) v = next_u64();
        return v % n;
    }

    int uniform_int(int lo, int hi) {  // inclusive bounds
        if (hi < lo) throw std::invalid_argument("Rng::uniform_int: empty range");
        return lo + static_cast<int>(below(static_cast<std::uint64_t>(hi - lo) + 1));
    }

    bool bernoulli(double p) { return uniform() < p; }

private:
    std::mt19937_64 eng_;
};

// Stream ids per protocol role; distinct streams keep party randomness
// independent and make draw order within a run fully reproducible.
namespace stream {
inline constexpr std::uint64_t kAlice = 1;
inline constexpr std::uint64_t kCharlie = 2;
inline constexpr std::uint64_t kBob = 3;
inline constexpr std::uint64_t kEve = 4;
inline constexpr std::uint64_t kSharedKey = 5;
inline constexpr std::uint64_t kBb84 = 6;
inline constexpr std::uint64_t kHarness = 7;
inline constexpr std::uint64_t kPartyBase = 16;  // party j uses kPartyBase + j
}  // namespace stream

}  // namespace qcm
