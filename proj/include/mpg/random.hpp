#pragma once

#include <cstdint>
#include <random>
#include <span>

namespace mpg {

/// Injected randomness for sampling. Draws are derived from raw 64-bit engine
/// output with fixed arithmetic, so a seed reproduces the same stream on any
/// standard library.
class RandomSource {
public:
    explicit RandomSource(std::uint64_t seed = 0) : engine_(seed) {}

    std::uint64_t next() { return engine_(); }

    /// Uniform on [0, 1) with 53 bits of resolution.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal (Box-Muller, caches the second variate).
    double normal();

    /// Index drawn from an (unnormalized is fine) non-negative weight vector.
    int categorical(std::span<const double> weights);

    /// Independent stream for (root, index) via splitmix64 mixing.
    static std::uint64_t derive_seed(std::uint64_t root, std::uint64_t index);

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace mpg
