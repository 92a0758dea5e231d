#pragma once

#include <cstdint>
#include <random>

#include "skdt/array.hpp"

namespace skdt {

using Rng = std::mt19937_64;

/// Seeds derived streams so that (seed, stream) pairs never collide in practice.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

Array randn(const Shape& shape, Rng& rng, double stddev = 1.0);
Array uniform(const Shape& shape, Rng& rng, double lo, double hi);

}  // namespace skdt
