#pragma once

#include <cmath>
#include <cstdint>

namespace sewgen {

// splitmix64 step; also used standalone for stable hashing.
inline uint64_t splitmix64(uint64_t& state) {
    uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline uint64_t hash_u64(uint64_t x) {
    return splitmix64(x);
}

// Small deterministic generator. Portable across compilers, unlike the
// standard <random> distributions, so seeded results are bit-reproducible.
struct Rng {
    uint64_t state = 0x853c49e6748fea9bULL;

    Rng() = default;
    explicit Rng(uint64_t seed) : state(seed ^ 0x9e3779b97f4a7c15ULL) {
        // burn a few steps so small seeds decorrelate
        next();
        next();
    }

    uint64_t next() { return splitmix64(state); }

    // uniform in [0, 1)
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [0, n)
    uint64_t uniform_int(uint64_t n) { return n == 0 ? 0 : next() % n; }

    // standard normal via Box-Muller; u1 in (0, 1]
    double normal() {
        const double u1 = (static_cast<double>(next() >> 11) + 1.0) * 0x1.0p-53;
        const double u2 = static_cast<double>(next() >> 11) * 0x1.0p-53;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }
    double normal(double mean, double std) { return mean + std * normal(); }
};

} // namespace sewgen
