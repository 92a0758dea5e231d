#include "skdt/random.hpp"

namespace skdt {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    // splitmix64 finalizer over the combined words
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

Array randn(const Shape& shape, Rng& rng, double stddev) {
    Array out(shape);
    std::normal_distribution<double> nd(0.0, stddev);
    for (auto& v : out.values()) v = nd(rng);
    return out;
}

Array uniform(const Shape& shape, Rng& rng, double lo, double hi) {
    Array out(shape);
    std::uniform_real_distribution<double> ud(lo, hi);
    for (auto& v : out.values()) v = ud(rng);
    return out;
}

}  // namespace skdt
