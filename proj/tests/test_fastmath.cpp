#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "attnlab/exp2poly.hpp"
#include "attnlab/util.hpp"

using namespace attnlab;
using namespace attnlab::fastmath;

TEST_CASE("minimax fits hit their certified bounds with pinned constant term") {
    const double bounds[] = {1.2e-4, 5.0e-6, 3.0e-7};
    for (int deg : {3, 4, 5}) {
        const auto poly = fit_minimax(deg);
        CHECK(poly.degree == deg);
        CHECK(poly.coeffs.size() == static_cast<std::size_t>(deg) + 1);
        CHECK(poly.coeffs[0] == 1.0f);
        CHECK(poly.certified_max_rel_err <= bounds[deg - 3]);
        for (int i = 1; i <= deg; ++i) CHECK(poly.coeffs[static_cast<std::size_t>(i)] > 0.0f);
    }
}

TEST_CASE("fit is deterministic") {
    const auto a = fit_minimax(4);
    const auto b = fit_minimax(4);
    CHECK(a.coeffs == b.coeffs);
    CHECK(a.certified_max_rel_err == b.certified_max_rel_err);
}

TEST_CASE("certified error verified against the double oracle on random points") {
    Rng rng(7);
    for (int deg : {3, 4, 5}) {
        const auto& poly = shared_poly(deg);
        double worst = 0.0;
        for (int i = 0; i < 200000; ++i) {
            const float x = rng.next_float01();
            const double r = std::exp2(static_cast<double>(x));
            worst = std::max(worst, std::fabs(static_cast<double>(exp2_emulated(x, poly)) - r) / r);
        }
        CHECK(worst <= poly.certified_max_rel_err);
    }
}

TEST_CASE("exp2_emulated fixed points") {
    const auto& p3 = shared_poly(3);
    CHECK(exp2_emulated(0.0f, p3) == 1.0f);
    CHECK(exp2_emulated(3.0f, p3) == 8.0f);
    CHECK(exp2_emulated(-4.0f, p3) == 0.0625f);

    const double ref = std::exp2(0.5);
    CHECK(std::fabs(static_cast<double>(exp2_emulated(0.5f, p3)) - ref) / ref <= 1.2e-4);

    // everything below the clamp flushes to the clamp's result
    CHECK(exp2_emulated(-200.0f, p3) == exp2_emulated(-127.0f, p3));
    CHECK(exp2_emulated(-std::numeric_limits<float>::infinity(), p3) ==
          exp2_emulated(-127.0f, p3));
}

TEST_CASE("integer inputs are exact powers of two for every degree") {
    for (int deg : {3, 4, 5}) {
        const auto& poly = shared_poly(deg);
        for (int k = -126; k <= 127; ++k) {
            CHECK(exp2_emulated(static_cast<float>(k), poly) ==
                  static_cast<float>(std::exp2(static_cast<double>(k))));
        }
    }
}

TEST_CASE("monotone on a million sorted samples") {
    Rng rng(11);
    std::vector<float> xs(1000000);
    for (auto& x : xs) x = static_cast<float>(-126.0 + 253.0 * rng.next_double01());
    std::sort(xs.begin(), xs.end());
    for (int deg : {3, 4, 5}) {
        const auto& poly = shared_poly(deg);
        float prev = exp2_emulated(xs[0], poly);
        bool ok = true;
        for (std::size_t i = 1; i < xs.size(); ++i) {
            const float v = exp2_emulated(xs[i], poly);
            if (v < prev) {
                ok = false;
                break;
            }
            prev = v;
        }
        CHECK(ok);
    }
}

TEST_CASE("magic-constant floor equals mathematical floor") {
    Rng rng(13);
    for (int i = 0; i < 1000000; ++i) {
        const float x = static_cast<float>(-127.0 + 254.0 * rng.next_double01());
        CHECK(magic_floor(x) == std::floor(x));
    }
    CHECK(magic_floor(-127.0f) == -127.0f);
    CHECK(magic_floor(126.9999f) == 126.0f);
    CHECK(magic_floor(-0.5f) == -1.0f);
    CHECK(magic_floor(2.0f) == 2.0f);
}

TEST_CASE("exp2_reference is the correctly rounded single") {
    CHECK(exp2_reference(1.0f) == 2.0f);
    CHECK(exp2_reference(0.0f) == 1.0f);
    CHECK(exp2_reference(0.25f) == static_cast<float>(std::exp2(0.25)));
    CHECK(exp2_reference(-1.5f) == static_cast<float>(std::exp2(-1.5)));
}

TEST_CASE("bf16 conversion rounds to nearest even") {
    CHECK(bf16_to_float(float_to_bf16(1.0f)) == 1.0f);

    // 1 + 2^-8 sits exactly between bf16 neighbours 1.0 and 1.0078125
    CHECK(bf16_to_float(float_to_bf16(1.00390625f)) == 1.0f);
    // 1 + 3*2^-8 ties upward to the even mantissa 1.015625
    CHECK(bf16_to_float(float_to_bf16(1.01171875f)) == 1.015625f);

    const float s = std::sqrt(2.0f);
    const float rounded = bf16_to_float(float_to_bf16(s));
    CHECK(std::fabs(rounded - s) / s <= 0x1.0p-8);

    Rng rng(17);
    for (int i = 0; i < 20000; ++i) {
        Bf16 b{static_cast<std::uint16_t>(rng.next_u64() & 0xFFFF)};
        const float f = bf16_to_float(b);
        if (!std::isfinite(f)) continue;
        CHECK(float_to_bf16(f) == b); // representable values are fixed points
    }
}

TEST_CASE("double_to_bf16 rounds once") {
    // a hair above the bf16 midpoint: must round up even though the float
    // rounding of the intermediate would land exactly on the tie
    const double x = 1.00390625 + 0x1.0p-40;
    CHECK(bf16_to_float(double_to_bf16(x)) == 1.0078125f);
    CHECK(bf16_to_float(double_to_bf16(1.00390625)) == 1.0f); // true tie: to even
    CHECK(bf16_to_float(double_to_bf16(-2.0)) == -2.0f);
}

TEST_CASE("accuracy sweep reproduces the published error structure") {
    const std::int64_t n = 1000000;
    const auto hw = accuracy_sweep(AccuracyMethod::HardwareLike, n, 42);
    CHECK(hw.fp32_max_rel <= 0x1.0p-23);
    CHECK(hw.ulp_match_fraction == 1.0);
    CHECK(hw.bf16_max_rel >= 3.7e-3);
    CHECK(hw.bf16_max_rel <= 4.1e-3);

    const auto ideal = accuracy_sweep(AccuracyMethod::IdealRound, n, 42);
    CHECK(ideal.fp32_max_rel == 0.0);
    CHECK(ideal.bf16_max_rel >= 3.7e-3);
    CHECK(ideal.bf16_max_rel <= 4.1e-3);

    double prev_fp32 = 1.0;
    for (auto m : {AccuracyMethod::PolyDegree3, AccuracyMethod::PolyDegree4,
                   AccuracyMethod::PolyDegree5}) {
        const auto r = accuracy_sweep(m, n, 42);
        CHECK(r.fp32_max_rel < prev_fp32); // error drops with degree
        prev_fp32 = r.fp32_max_rel;
        CHECK(r.bf16_max_rel >= 3.7e-3);
        CHECK(r.bf16_max_rel <= 4.1e-3);
        CHECK(std::fabs(r.bf16_max_rel - hw.bf16_max_rel) <= 2e-4); // bf16 noise dominates
        CHECK(r.ulp_match_fraction >= 0.99);
        CHECK(r.fp32_max_rel >= r.fp32_mean_rel);
        CHECK(r.bf16_max_rel >= r.bf16_mean_rel);
    }
}

TEST_CASE("sweep is deterministic for a given seed") {
    const auto a = accuracy_sweep(AccuracyMethod::PolyDegree3, 300000, 5);
    const auto b = accuracy_sweep(AccuracyMethod::PolyDegree3, 300000, 5);
    CHECK(a.fp32_max_rel == b.fp32_max_rel);
    CHECK(a.fp32_mean_rel == b.fp32_mean_rel);
    CHECK(a.bf16_mean_rel == b.bf16_mean_rel);
    CHECK(a.ulp_match_fraction == b.ulp_match_fraction);
    const auto c = accuracy_sweep(AccuracyMethod::PolyDegree3, 300000, 6);
    CHECK(c.fp32_max_rel != a.fp32_max_rel); // different seed, different draw
}

TEST_CASE("sweep rejects empty sample counts") {
    CHECK_THROWS_AS(accuracy_sweep(AccuracyMethod::HardwareLike, 0, 1), std::invalid_argument);
}

TEST_CASE("coefficients round-trip through JSON") {
    const auto poly = shared_poly(4);
    const auto back = poly_from_json(poly_to_json(poly));
    CHECK(back.degree == poly.degree);
    CHECK(back.coeffs == poly.coeffs);
    CHECK(back.certified_max_rel_err == poly.certified_max_rel_err);

    CHECK_THROWS(poly_from_json("{\"degree\": 7, \"coeffs\": [1], \"certified_max_rel_err\": 0}"));
    CHECK_THROWS(poly_from_json(
        "{\"degree\": 3, \"coeffs\": [0.5, 1, 1, 1], \"certified_max_rel_err\": 0}"));
}

TEST_CASE("csv rows carry the table columns") {
    const auto r = accuracy_sweep(AccuracyMethod::PolyDegree3, 10000, 3);
    const auto row = accuracy_csv_row(r);
    const auto header = accuracy_csv_header();
    CHECK(row.find("poly-degree-3") == 0);
    CHECK(std::count(row.begin(), row.end(), ',') ==
          std::count(header.begin(), header.end(), ','));
}
