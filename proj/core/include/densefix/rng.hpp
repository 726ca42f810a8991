#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace densefix {

/// Counter-based seeded generator with hand-rolled distributions.
///
/// The raw engine is std::mt19937_64 (its output sequence is pinned by the
/// standard), and all distributions are implemented here rather than via
/// <random> adaptors, whose output is implementation-defined. Same seed,
/// same call sequence, same values, on every platform.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform in [0, 1), 53-bit resolution.
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [lo, hi], inclusive. Unbiased via rejection.
    int uniform_int(int lo, int hi);

    /// Standard normal via Box-Muller; consumes exactly two draws per call.
    double normal();

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    bool bernoulli(double p) { return uniform() < p; }

private:
    std::mt19937_64 engine_;
};

/// One splitmix64 step; also usable as a 64-bit mixer.
std::uint64_t splitmix64(std::uint64_t& state);

/// Derives a child seed from a root seed, a stream tag, and an index.
/// Stable across builds: FNV-1a over the tag bytes plus splitmix mixing.
/// Distinct (tag, index) pairs give statistically independent streams.
std::uint64_t derive_seed(std::uint64_t root, std::string_view tag, std::uint64_t index = 0);

}  // namespace densefix
