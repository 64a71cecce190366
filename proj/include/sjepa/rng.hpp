#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace sjepa {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer; used to derive independent child seeds.
constexpr std::uint64_t mix_seed(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Seed for a sub-stream identified by a path of integers, e.g. (seed, step, item).
inline std::uint64_t derive_seed(std::uint64_t root, std::initializer_list<std::uint64_t> path) noexcept {
    std::uint64_t s = mix_seed(root);
    for (auto p : path) {
        s = mix_seed(s ^ mix_seed(p + 0x632be59bd9b4e019ULL));
    }
    return s;
}

inline double uniform(Rng& rng, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline std::size_t uniform_index(Rng& rng, std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

/// Normal(0, std) truncated to [-2 std, 2 std] by rejection.
inline double truncated_normal(Rng& rng, double std) {
    std::normal_distribution<double> dist(0.0, 1.0);
    for (;;) {
        double v = dist(rng);
        if (v >= -2.0 && v <= 2.0) {
            return v * std;
        }
    }
}

}  // namespace sjepa
