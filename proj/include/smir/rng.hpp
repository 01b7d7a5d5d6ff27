#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

#include "smir/hash.hpp"

namespace smir {

// SplitMix64 stream. Hand-rolled so that mask draws, shuffles and weight
// initialization are bitwise reproducible across standard libraries.
class RandomStream {
public:
    explicit RandomStream(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ull;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // Uniform integer in [0, n), rejection-sampled to avoid modulo bias.
    std::uint64_t uniform_int(std::uint64_t n) {
        if (n == 0) {
            return 0;
        }
        const std::uint64_t limit = ~0ull - (~0ull % n + 1) % n;
        std::uint64_t v = next_u64();
        while (v > limit) {
            v = next_u64();
        }
        return v % n;
    }

    // Uniform in [0, 1) with 53 bits of precision.
    double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // Box-Muller; one value per call, cached pair discarded for simplicity.
    double normal() {
        const double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
        const double u2 = uniform01();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(uniform_int(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::uint64_t state_;
};

// Derives an independent stream from a root seed, a purpose tag and up to
// three indices. All module-level randomness funnels through this so runs
// are reproducible and resumable from any partition boundary.
inline std::uint64_t derive_seed(std::uint64_t root, std::string_view tag,
                                 std::uint64_t a = 0, std::uint64_t b = 0,
                                 std::uint64_t c = 0) {
    std::uint64_t h = fnv1a64(&root, sizeof(root));
    h = fnv1a64(tag, h);
    h = fnv1a64(&a, sizeof(a), h);
    h = fnv1a64(&b, sizeof(b), h);
    h = fnv1a64(&c, sizeof(c), h);
    return h;
}

inline RandomStream derive_stream(std::uint64_t root, std::string_view tag,
                                  std::uint64_t a = 0, std::uint64_t b = 0,
                                  std::uint64_t c = 0) {
    return RandomStream(derive_seed(root, tag, a, b, c));
}

}  // namespace smir
