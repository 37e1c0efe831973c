// Copyright 2026 the mnlab authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// mnlab.prng.v1 — the reproducibility contract for every random draw in
// the project (parameter init, subsampling, augmentation, synthetic data).
//
//   * stream seeds are derived from a root seed with SplitMix64;
//   * the generator is std::mt19937_64, whose output sequence is fixed
//     by the C++ standard, so index sets and initializations replay
//     bit-exactly on any conforming implementation;
//   * bounded integers use rejection sampling (no modulo bias);
//   * normal deviates use Box-Muller on 53-bit uniforms. The standard
//     library distributions are implementation-defined and are not used.

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace mnlab {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

/// FNV-1a, used to fold layer ids and stream labels into seed material.
inline std::uint64_t hash_label(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

/// Seed for a named substream of a root seed. Substreams are stable under
/// insertion or reordering of other streams.
inline std::uint64_t derive_seed(std::uint64_t root, std::string_view label, std::uint64_t index = 0) {
    return splitmix64(root ^ splitmix64(hash_label(label) + 0x9e3779b97f4a7c15ull * index));
}

class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    /// Uniform integer in [0, n), rejection sampled.
    std::uint64_t bounded(std::uint64_t n) {
        if (n == 0) return 0;
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x;
        do {
            x = gen_();
        } while (x >= limit);
        return x % n;
    }

    /// Uniform double in [0, 1) with 53 bits of resolution.
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    /// Standard normal via Box-Muller; draws are paired and cached.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1, u2;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        u2 = uniform();
        const double mag = std::sqrt(-2.0 * std::log(u1));
        spare_ = mag * std::sin(6.283185307179586477 * u2);
        have_spare_ = true;
        return mag * std::cos(6.283185307179586477 * u2);
    }

    bool coin() { return (gen_() & 1ull) != 0; }

    /// In-place Fisher-Yates shuffle.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(bounded(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 gen_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

} // namespace mnlab
