// SPDX-License-Identifier: Apache-2.0

#include "otc/rng.hpp"

#include <stdexcept>

namespace otc {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

}  // namespace

double Rng::uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

std::int64_t Rng::uniform_int(std::int64_t lo, std::int64_t hi) {
    if (hi < lo) {
        throw std::invalid_argument("uniform_int: empty range");
    }
    const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
    if (span == 0) {
        return static_cast<std::int64_t>(engine_());
    }
    // Rejection sampling removes modulo bias.
    const std::uint64_t limit = (~std::uint64_t{0} / span) * span;
    std::uint64_t draw = engine_();
    while (draw >= limit) {
        draw = engine_();
    }
    return lo + static_cast<std::int64_t>(draw % span);
}

std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> coords) {
    std::uint64_t h = splitmix64(base);
    for (std::uint64_t c : coords) {
        h = splitmix64(h ^ splitmix64(c + 0x632be59bd9b4e019ULL));
    }
    return h;
}

}  // namespace otc
