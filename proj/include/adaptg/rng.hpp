#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "adaptg/mathutil.hpp"

namespace adaptg {

inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Deterministic RNG. Samplers are implemented on top of raw 53-bit uniforms
/// (not std:: distributions) so identical seeds give identical streams on any
/// platform.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(mix_seed(seed)) {}

    /// Independent stream for (seed, index) pairs, e.g. one per replication.
    static Rng stream(std::uint64_t master_seed, std::uint64_t index) {
        std::uint64_t s = master_seed;
        std::uint64_t a = splitmix64(s);
        s = a ^ (index * 0x9e3779b97f4a7c15ULL + 0x243f6a8885a308d3ULL);
        return Rng(splitmix64(s));
    }

    std::uint64_t next_u64() { return eng_(); }

    /// Uniform on (0,1), never exactly 0 or 1.
    double uniform01() {
        const double u = static_cast<double>(eng_() >> 11) * 0x1.0p-53;
        return std::min(std::max(u, 0x1.0p-53), 1.0 - 0x1.0p-53);
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    double normal(double mu = 0.0, double sd = 1.0) {
        return mu + sd * norm_quantile(uniform01());
    }

    double logistic(double loc, double scale) {
        const double u = uniform01();
        return loc + scale * std::log(u / (1.0 - u));
    }

    bool bernoulli(double p) { return uniform01() < p; }

    /// Uniform integer in [0, n).
    std::size_t index(std::size_t n) {
        return static_cast<std::size_t>(uniform01() * static_cast<double>(n)) % n;
    }

private:
    static std::uint64_t mix_seed(std::uint64_t seed) {
        std::uint64_t s = seed;
        return splitmix64(s);
    }
    std::mt19937_64 eng_;
};

}  // namespace adaptg
