// SPDX-License-Identifier: Apache-2.0
#ifndef CMSEG_RNG_HPP
#define CMSEG_RNG_HPP

#include <cmath>
#include <cstdint>
#include <string_view>

namespace cmseg {

// Self-contained counter-style generator (splitmix64 core). The standard
// library distributions are implementation-defined, so every draw the
// pipeline makes goes through this type to keep artifacts byte-stable.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1).
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Uniform in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    // Uniform integer in [0, n), n >= 1. Rejection-free modulo bias is
    // negligible for the ranges used here, but do it properly anyway.
    std::uint64_t next_below(std::uint64_t n) {
        const std::uint64_t threshold = (0ULL - n) % n;
        for (;;) {
            const std::uint64_t r = next_u64();
            if (r >= threshold) return r % n;
        }
    }

    // Standard normal via Box-Muller (no cached second value, so the draw
    // count stays obvious at call sites).
    double normal() {
        double u1 = next_double();
        while (u1 <= 0.0) u1 = next_double();
        const double u2 = next_double();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    double normal(double mean, double sigma) { return mean + sigma * normal(); }

private:
    std::uint64_t state_;
};

// FNV-1a over bytes; used to derive independent stream seeds from
// (base seed, purpose tag, indices) and to fingerprint configs.
inline std::uint64_t fnv1a64(const void* bytes, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL) {
    const auto* p = static_cast<const unsigned char*>(bytes);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::uint64_t hash_combine(std::uint64_t h, std::uint64_t v) {
    return fnv1a64(&v, sizeof(v), h);
}

// Seed for a named sub-stream, e.g. derive_seed(base, "patch", step).
inline std::uint64_t derive_seed(std::uint64_t base, std::string_view tag, std::uint64_t a = 0, std::uint64_t b = 0) {
    std::uint64_t h = fnv1a64(&base, sizeof(base));
    h = fnv1a64(tag.data(), tag.size(), h);
    h = hash_combine(h, a);
    h = hash_combine(h, b);
    return h;
}

}  // namespace cmseg

#endif
