// Copyright (C) 2026 MoE-FFD desk contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

namespace moeffd {

// SplitMix64 finalizer (Steele, Lea, Flood). Used to expand seeds.
std::uint64_t splitmix64(std::uint64_t& state);

// Mixes a base seed with a stream/sample identifier.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

/// xorshift64* generator.
///
///   x ^= x >> 12;  x ^= x << 25;  x ^= x >> 27;
///   return x * 0x2545F4914F6CDD1D;
///
/// The state is seeded through one SplitMix64 step and is never zero.
/// Uniform doubles take the top 53 bits; normals use Box–Muller with the
/// spare value cached.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0);

    std::uint64_t next_u64();
    double uniform();                        // [0, 1)
    double uniform(double lo, double hi);    // [lo, hi)
    std::uint64_t below(std::uint64_t n);    // [0, n), unbiased
    double normal();                         // N(0, 1)
    double normal(double mean, double stddev);
    // N(0, std²) resampled until |v| ≤ 2·std.
    double truncated_normal(double stddev);

    template <typename It>
    void shuffle(It first, It last) {
        const auto n = static_cast<std::uint64_t>(last - first);
        for (std::uint64_t i = n; i > 1; --i) {
            const auto j = below(i);
            std::swap(first[i - 1], first[j]);
        }
    }

    struct State {
        std::uint64_t x = 0;
        bool has_spare = false;
        double spare = 0.0;
    };
    State state() const { return {x_, has_spare_, spare_}; }
    void set_state(const State& s);

private:
    std::uint64_t x_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace moeffd
