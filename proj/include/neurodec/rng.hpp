#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

#include "neurodec/tensor.hpp"

namespace neurodec {

// Seeded random stream. All randomness in the library flows through one of
// these so a run is reproducible from its seed.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

    std::uint64_t seed() const { return seed_; }

    // Independent child stream keyed by (seed, stream id).
    Rng derive(std::uint64_t stream) const;

    double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
    double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
    double normal() { return normal_(engine_); }
    std::size_t index(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_); }

    Tensor normal_tensor(Shape shape, double stddev = 1.0);
    Tensor uniform_tensor(Shape shape, double lo, double hi);

    std::vector<std::size_t> permutation(std::size_t n);
    // k distinct values from [0, n), in draw order.
    std::vector<std::size_t> choose(std::size_t n, std::size_t k);

    std::mt19937_64& engine() { return engine_; }

private:
    std::uint64_t seed_;
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace neurodec
