#pragma once

#include <cstdint>
#include <limits>
#include <random>
#include <vector>

namespace insidebias {

// All randomness in the library flows through Rng seeded from run configs, so
// a fixed seed reproduces every draw bit-for-bit on the same build.
using Rng = std::mt19937_64;

/// Uniform float in [0, 1) built from the top 24 bits of the generator output.
/// Avoids std::uniform_real_distribution, whose output is not pinned by the
/// standard across library versions.
inline float uniform_unit(Rng& rng) {
    return static_cast<float>(rng() >> 40) * (1.0f / 16777216.0f);
}

/// Uniform float in [lo, hi).
inline float uniform_in(Rng& rng, float lo, float hi) {
    return lo + (hi - lo) * uniform_unit(rng);
}

/// Unbiased integer draw in [0, n) via rejection sampling.
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - (std::numeric_limits<std::uint64_t>::max() % n);
    std::uint64_t v = rng();
    while (v >= limit) v = rng();
    return v % n;
}

/// Deterministic Fisher-Yates shuffle.
template <typename T>
void shuffle_indices(std::vector<T>& v, Rng& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        std::swap(v[i - 1], v[uniform_index(rng, i)]);
    }
}

/// Derive an independent stream from a base seed and a stream tag.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
    // SplitMix64 over (base ^ rotated stream).
    std::uint64_t z = base ^ (0x9E3779B97F4A7C15ULL * (stream + 1));
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

}  // namespace insidebias
