#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace attnlab {

constexpr std::int64_t ceil_div(std::int64_t a, std::int64_t b) {
    return (a + b - 1) / b;
}

// All randomness in the project flows through mt19937_64 plus the explicit
// bit mappings below, so results are identical across platforms and standard
// library implementations (std::uniform_real_distribution is not portable).
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    // uniform in [0,1) with 24 bits of randomness (one float ulp at 1.0)
    float next_float01() {
        return static_cast<float>(gen_() >> 40) * 0x1.0p-24f;
    }

    // uniform in [0,1) with 53 bits
    double next_double01() {
        return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
    }

    double next_gaussian() {
        // Marsaglia polar, deterministic given the draw sequence
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u, v, s;
        do {
            u = 2.0 * next_double01() - 1.0;
            v = 2.0 * next_double01() - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        const double r = std::sqrt(-2.0 * std::log(s) / s);
        spare_ = v * r;
        have_spare_ = true;
        return u * r;
    }

    std::uint64_t next_u64() { return gen_(); }

    // bounded draw without modulo bias concerns for our use (bound << 2^64)
    std::uint64_t next_below(std::uint64_t bound) { return gen_() % bound; }

private:
    std::mt19937_64 gen_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

// Derive a per-chunk seed so that chunked parallel sweeps are independent of
// the thread count: chunk k always sees the same stream.
inline std::uint64_t chunk_seed(std::uint64_t seed, std::uint64_t chunk_index) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (chunk_index + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

} // namespace attnlab
