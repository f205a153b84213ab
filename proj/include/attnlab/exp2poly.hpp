#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "attnlab/bf16.hpp"

namespace attnlab::fastmath {

/// Minimax polynomial for 2^x on [0,1), constant term pinned to 1 so the
/// approximation is exact at binade boundaries. Coefficients are stored in
/// single precision because evaluation targets FMA-class fp32 units.
struct Poly2x {
    int degree = 0;                 // one of 3, 4, 5
    std::vector<float> coeffs;      // p0..pn, p0 == 1.0f
    double certified_max_rel_err = 0.0;
};

struct FitError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Remez-exchange minimax fit of 2^x over [0,1) on relative error, with the
/// constant term pinned to 1. Coefficients are rounded to single precision
/// one at a time (highest degree first) with the remaining ones refit, then
/// the full fp32 evaluation pipeline is certified on a dense grid.
/// Deterministic for a given degree. Throws FitError if the exchange fails
/// to converge and the least-squares fallback also misses the bound.
Poly2x fit_minimax(int degree);

/// Process-wide cached fit per degree (the fit is deterministic, so sharing
/// is safe and keeps repeated sweeps cheap).
const Poly2x& shared_poly(int degree);

/// floor(x) via the 2^23 + 2^22 magic-constant trick. The round-to-nearest
/// add lands on round(x); one corrective step recovers the round-down result
/// that the modeled hardware gets for free from its rounding mode.
inline float magic_floor(float x) {
    constexpr float kMagic = 0x1.8p23f; // 2^23 + 2^22
    float r = (x + kMagic) - kMagic;
    if (r > x) r -= 1.0f;
    return r;
}

/// Software 2^x: clamp to >= -127, split integer/fraction with magic_floor,
/// evaluate the fraction polynomial with FMA Horner, then splice the integer
/// part into the exponent field. Inputs below -127 flush to +0.
inline float exp2_emulated(float x, const Poly2x& poly) {
    x = x < -127.0f ? -127.0f : x;
    const float k = magic_floor(x);
    const float frac = x - k; // exact: k and x share a binade scale

    float p = poly.coeffs[poly.degree];
    for (int i = poly.degree - 1; i >= 0; --i) {
        p = std::fmaf(p, frac, poly.coeffs[static_cast<std::size_t>(i)]);
    }

    // shift floor(x) into the exponent field; works for p in [1,4) since the
    // mantissa add carries into the exponent naturally
    const std::int32_t ki = static_cast<std::int32_t>(k);
    const std::uint32_t bits =
        std::bit_cast<std::uint32_t>(p) + (static_cast<std::uint32_t>(ki) << 23);
    return std::bit_cast<float>(bits);
}

/// Correctly-rounded single-precision 2^x (stands in for the hardware
/// transcendental path): double-precision 2^x rounded once to float.
inline float exp2_reference(float x) {
    return static_cast<float>(std::exp2(static_cast<double>(x)));
}

enum class AccuracyMethod { IdealRound, HardwareLike, PolyDegree3, PolyDegree4, PolyDegree5 };

const char* to_string(AccuracyMethod m);
AccuracyMethod accuracy_method_from_string(const std::string& s);

/// One row of the 2^x accuracy ledger: fp32-level and bf16-level error of a
/// method against the fp64 reference on uniform samples from [0,1), plus the
/// fraction of samples whose bf16 output matches the hardware-like path
/// within one bf16 ulp.
struct AccuracyReport {
    AccuracyMethod method = AccuracyMethod::IdealRound;
    double fp32_max_rel = 0.0;
    double fp32_mean_rel = 0.0;
    double bf16_max_rel = 0.0;
    double bf16_mean_rel = 0.0;
    std::int64_t n_samples = 0;
    double ulp_match_fraction = 0.0;
};

/// Evaluate `method` on n_samples uniform draws from [0,1). Work is chunked
/// in fixed 64Ki-sample blocks, each with a seed derived from (seed, chunk),
/// and partials are combined in chunk order, so the result is independent of
/// how many threads run the sweep.
AccuracyReport accuracy_sweep(AccuracyMethod method, std::int64_t n_samples,
                              std::uint64_t seed);

std::string poly_to_json(const Poly2x& poly);
Poly2x poly_from_json(const std::string& text);

std::string accuracy_csv_header();
std::string accuracy_csv_row(const AccuracyReport& r);

} // namespace attnlab::fastmath
