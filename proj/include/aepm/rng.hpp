#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace aepm {

/// Derive an independent stream seed from a master seed and a stream name.
/// Used so every random component (data, init, training) can be reproduced
/// in isolation from the one RunConfig seed.
inline uint64_t derive_seed(uint64_t master, std::string_view stream) {
    uint64_t h = 1469598103934665603ull; // FNV-1a
    for (char c : stream) {
        h ^= static_cast<uint64_t>(static_cast<unsigned char>(c));
        h *= 1099511628211ull;
    }
    uint64_t z = master ^ h;
    // splitmix64 finalizer
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

/// Seeded generator with hand-rolled distributions so sequences are
/// identical across standard library implementations.
class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    /// Uniform in [0, 1).
    double unit() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * unit(); }

    /// Box-Muller; one fresh draw per call.
    double normal(double mean = 0.0, double std = 1.0) {
        double u1 = 0.0;
        do {
            u1 = unit();
        } while (u1 <= 0.0);
        double u2 = unit();
        double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
        return mean + std * z;
    }

    /// Uniform integer in [0, n).
    uint64_t integer(uint64_t n) { return gen_() % n; }

    std::mt19937_64& engine() { return gen_; }

private:
    std::mt19937_64 gen_;
};

} // namespace aepm
