#pragma once

#include <cmath>
#include <cstdint>

#include "kdi/errors.hpp"
#include "kdi/tensor.hpp"

namespace kdi {

// SplitMix64. Same seed gives the same sequence on every platform.
struct Rng64 {
    std::uint64_t state = 0;
};

inline std::uint64_t splitmix64_next(Rng64& rng) {
    rng.state += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = rng.state;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

// One-shot mix: the output SplitMix64 emits for `seed` on its first step.
inline std::uint64_t splitmix64(std::uint64_t seed) {
    Rng64 r{seed};
    return splitmix64_next(r);
}

// Uniform in [0, 1) from the top 24 bits.
inline float uniform_f32(Rng64& rng) {
    return static_cast<float>(splitmix64_next(rng) >> 40) * 0x1.0p-24f;
}

// Unbiased-enough bounded draw (multiply-shift); n must be >= 1.
inline std::uint64_t uniform_below(Rng64& rng, std::uint64_t n) {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(splitmix64_next(rng)) * n) >> 64);
}

inline Tensor kaiming_uniform_init(Rng64& rng, int fan_in, std::vector<int> shape) {
    if (fan_in < 1) throw ParamError("kaiming_uniform_init: fan_in must be >= 1");
    const float bound = std::sqrt(6.0f / static_cast<float>(fan_in));
    Tensor t = Tensor::zeros(std::move(shape));
    for (float& v : t.data) v = (uniform_f32(rng) * 2.0f - 1.0f) * bound;
    return t;
}

}  // namespace kdi
