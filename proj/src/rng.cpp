#include "mvc/rng.hpp"

#include <cmath>

#include "mvc/errors.hpp"

namespace mvc {

uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

namespace {
inline uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
} // namespace

Rng::Rng(uint64_t seed) : seed_(seed) {
    // xoshiro256++ state filled from a splitmix64 chain, as its authors
    // recommend. A zero seed is fine; splitmix never yields an all-zero state.
    uint64_t s = seed;
    for (auto& w : state_) {
        s += 0x9e3779b97f4a7c15ULL;
        uint64_t z = s;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        w = z ^ (z >> 31);
    }
}

uint64_t Rng::next_u64() {
    const uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
    const uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
}

double Rng::uniform01() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double a, double b) { return a + (b - a) * uniform01(); }

double Rng::normal() {
    // Box-Muller; guard the log against a zero draw.
    double u1 = uniform01();
    while (u1 <= 0.0) u1 = uniform01();
    const double u2 = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    return r * std::cos(2.0 * M_PI * u2);
}

double Rng::trunc_normal(double std_dev, double lim) {
    for (;;) {
        const double z = normal();
        if (std::fabs(z) <= lim) return z * std_dev;
    }
}

int64_t Rng::randint(int64_t n) {
    if (n <= 0) throw DomainError("randint: n must be positive, got " + std::to_string(n));
    // Rejection sampling for an exactly uniform result.
    const uint64_t un = static_cast<uint64_t>(n);
    const uint64_t limit = UINT64_MAX - UINT64_MAX % un;
    uint64_t x = next_u64();
    while (x >= limit) x = next_u64();
    return static_cast<int64_t>(x % un);
}

double Rng::log_uniform(double a, double b) {
    if (a <= 0.0 || b < a)
        throw DomainError("log_uniform: need 0 < a <= b");
    return std::exp(uniform(std::log(a), std::log(b)));
}

std::vector<int64_t> Rng::sample_indices(int64_t n, int64_t k) {
    if (k < 0 || k > n)
        throw DomainError("sample_indices: k=" + std::to_string(k) + " out of range for n=" +
                          std::to_string(n));
    std::vector<int64_t> idx(n);
    for (int64_t i = 0; i < n; ++i) idx[i] = i;
    for (int64_t i = 0; i < k; ++i) {
        const int64_t j = i + randint(n - i);
        std::swap(idx[i], idx[j]);
    }
    idx.resize(k);
    return idx;
}

Rng Rng::split(uint64_t stream) const {
    return Rng(splitmix64(seed_ ^ splitmix64(stream + 0x632be59bd9b4e019ULL)));
}

} // namespace mvc
