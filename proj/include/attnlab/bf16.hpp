#pragma once

#include <bit>
#include <cmath>
#include <cstdint>

namespace attnlab::fastmath {

/// bfloat16 value held as its raw bit pattern (1 sign, 8 exponent,
/// 7 mantissa bits = the top half of an IEEE-754 binary32).
struct Bf16 {
    std::uint16_t bits = 0;

    friend bool operator==(Bf16 a, Bf16 b) { return a.bits == b.bits; }
};

inline float bf16_to_float(Bf16 v) {
    return std::bit_cast<float>(static_cast<std::uint32_t>(v.bits) << 16);
}

/// Round-to-nearest-even float -> bf16 via the usual bias trick.
inline Bf16 float_to_bf16(float x) {
    std::uint32_t u = std::bit_cast<std::uint32_t>(x);
    if ((~u & 0x7F800000u) == 0) {
        // Inf/NaN: truncate, force quiet bit on NaN payloads
        std::uint16_t hi = static_cast<std::uint16_t>(u >> 16);
        if ((u & 0x007FFFFFu) != 0) hi |= 0x0040;
        return Bf16{hi};
    }
    u += 0x7FFFu + ((u >> 16) & 1u);
    return Bf16{static_cast<std::uint16_t>(u >> 16)};
}

/// Single-rounding double -> bf16. Going through float first would round
/// twice; round-to-odd on the intermediate keeps the final RNE step exact.
inline Bf16 double_to_bf16(double x) {
    float f = static_cast<float>(x);
    if (static_cast<double>(f) != x) {
        std::uint32_t u = std::bit_cast<std::uint32_t>(f);
        if (std::fabs(static_cast<double>(f)) > std::fabs(x)) {
            u -= 1; // pull back to the truncation toward zero
        }
        u |= 1u;
        f = std::bit_cast<float>(u);
    }
    return float_to_bf16(f);
}

inline float bf16_round(float x) { return bf16_to_float(float_to_bf16(x)); }

} // namespace attnlab::fastmath
