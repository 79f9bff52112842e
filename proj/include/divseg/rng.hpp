#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace divseg {

/// Reproducible random source. Built only on mt19937_64 and seed_seq, whose
/// outputs the standard fixes, so sequences match across standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : Rng({seed}) {}
    Rng(std::initializer_list<std::uint64_t> seeds);

    std::uint64_t next() { return engine_(); }

    // Uniform in [0,1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    bool bernoulli(double p) { return uniform() < p; }

    // Uniform integer in [0, n).
    std::uint64_t index(std::uint64_t n);
    int integer(int lo, int hi_inclusive);

    double normal();

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

std::vector<std::size_t> permutation(std::size_t n, Rng& rng);
std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed);

}  // namespace divseg
