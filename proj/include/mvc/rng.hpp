#pragma once

#include <cstdint>
#include <vector>

namespace mvc {

uint64_t splitmix64(uint64_t x);

// Deterministic random source. All randomness in the library flows through
// this class; the transforms are written out by hand (instead of using
// std::*_distribution) so that a seed produces the same stream on every
// standard library implementation.
class Rng {
public:
    explicit Rng(uint64_t seed);

    uint64_t next_u64();

    // Uniform in [0, 1) with 53 bits of mantissa.
    double uniform01();
    // Uniform in [a, b).
    double uniform(double a, double b);
    // Standard normal via Box-Muller (no caching; two u64 draws per call).
    double normal();
    // Normal(0, std) rejected outside [-lim*std, lim*std].
    double trunc_normal(double std_dev, double lim = 2.0);
    // Uniform integer in [0, n).
    int64_t randint(int64_t n);
    // log-uniform in [a, b], a > 0.
    double log_uniform(double a, double b);

    // First k elements of a Fisher-Yates shuffle of 0..n-1: a uniform random
    // subset of size k in random order.
    std::vector<int64_t> sample_indices(int64_t n, int64_t k);

    // Derive an independent generator for a substream (scene index, view
    // index, ...) without burning draws from this one.
    Rng split(uint64_t stream) const;

private:
    uint64_t state_[4];
    uint64_t seed_;
};

} // namespace mvc
