#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace dubengine {

// splitmix64, used for seed derivation only.
inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Deterministic substream derivation: every worker/chunk/step derives its own
// seed from (root, tags...) so results do not depend on evaluation order.
inline uint64_t derive_seed(uint64_t root, uint64_t a, uint64_t b = 0, uint64_t c = 0) {
    uint64_t s = splitmix64(root ^ 0x6a09e667f3bcc908ULL);
    s = splitmix64(s ^ a);
    s = splitmix64(s ^ b);
    s = splitmix64(s ^ c);
    return s;
}

// mt19937_64 with hand-rolled distributions. std:: distributions are
// implementation-defined, these are not, so streams are reproducible
// across standard libraries.
struct Rng {
    std::mt19937_64 gen;

    explicit Rng(uint64_t seed) : gen(seed) {}

    uint64_t next_u64() { return gen(); }

    // [0, 1)
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) {
        return lo + (hi - lo) * uniform();
    }

    // [0, n), unbiased enough for n << 2^64
    int below(int n) {
        return static_cast<int>(next_u64() % static_cast<uint64_t>(n));
    }

    // Cacheless Box-Muller; two uniforms per draw keeps the stream
    // position independent of call parity.
    double normal() {
        double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;  // (0, 1]
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
    }

    template <typename T>
    void fill_normal(T* dst, size_t n, double scale = 1.0) {
        for (size_t i = 0; i < n; ++i) dst[i] = static_cast<T>(normal() * scale);
    }
};

}  // namespace dubengine
