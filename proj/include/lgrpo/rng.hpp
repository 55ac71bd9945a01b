// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace lgrpo {

// SplitMix64-style mixing of a run seed with stream coordinates, used to give
// every (step, prompt, group member) its own independent stream.
std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> coords);

class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    // Uniform on [0, 1) with 53 random bits.
    double uniform01();
    // Standard Gumbel(0, 1); u is clamped to [1e-12, 1 - 1e-12].
    double gumbel();
    std::uint64_t next_u64() { return engine_(); }
    // Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n);

private:
    std::mt19937_64 engine_;
};

}  // namespace lgrpo
