// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace otc {

/// Seeded random stream. Wraps mt19937_64 (whose output sequence is fixed by
/// the standard) and converts raw draws to doubles by hand, so runs are
/// reproducible across standard library implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    /// Uniform double in [0, 1) with 53 bits of precision.
    double uniform();

    /// Uniform integer in [lo, hi] (inclusive).
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);

    bool bernoulli(double p) { return uniform() < p; }

    std::uint64_t next_u64() { return engine_(); }

private:
    std::mt19937_64 engine_;
};

/// Mixes a base seed with stream coordinates (epoch, group, member, ...) into
/// an independent seed using splitmix64 finalization.
std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> coords);

}  // namespace otc
