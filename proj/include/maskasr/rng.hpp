#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace maskasr {

// All randomness in the library flows through this wrapper. The raw engine is
// std::mt19937_64 (bit-portable per the standard); the uniform/normal
// transforms are written out explicitly so a (seed, label) pair pins every
// sampled byte on a given platform.
class Rng {
  public:
    explicit Rng(uint64_t seed) : engine_(seed) {}

    uint64_t next_u64() { return engine_(); }

    // [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller, no spare caching: one sample consumes two engine draws.
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // Inclusive bounds, rejection sampled.
    int64_t uniform_int(int64_t lo, int64_t hi) {
        const uint64_t range = static_cast<uint64_t>(hi - lo) + 1;
        const uint64_t limit = UINT64_MAX - UINT64_MAX % range;
        uint64_t x = next_u64();
        while (x >= limit) x = next_u64();
        return lo + static_cast<int64_t>(x % range);
    }

    // Fisher-Yates over 0..n-1.
    std::vector<int64_t> permutation(int64_t n) {
        std::vector<int64_t> p(static_cast<size_t>(n));
        for (int64_t i = 0; i < n; ++i) p[static_cast<size_t>(i)] = i;
        for (int64_t i = n - 1; i > 0; --i) {
            const int64_t j = uniform_int(0, i);
            std::swap(p[static_cast<size_t>(i)], p[static_cast<size_t>(j)]);
        }
        return p;
    }

  private:
    std::mt19937_64 engine_;
};

// Derives an independent stream seed from a root seed and a label, so modules
// can split RNG usage ("init", "data:f0l1", ...) without coupling draw order.
uint64_t seed_stream(uint64_t root, std::string_view label);

}  // namespace maskasr
