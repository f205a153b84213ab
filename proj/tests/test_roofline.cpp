#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <array>

#include "attnlab/roofline.hpp"

using namespace attnlab;
using namespace attnlab::roofline;

namespace {

TileConfig tile(std::int64_t m, std::int64_t n, std::int64_t d, CtaMode cta = CtaMode::OneCta) {
    TileConfig t;
    t.m = m;
    t.n = n;
    t.d = d;
    t.cta = cta;
    return t;
}

} // namespace

TEST_CASE("forward cycle table under the default profile") {
    const auto hw = b200_profile();
    const auto a = fwd_roofline(tile(128, 128, 128), hw);
    CHECK(a.t_mma == 1024);
    CHECK(a.t_smem_total == 768);
    CHECK(a.t_exp == 1024);
    CHECK(a.t_smem_ds_write == 0);
    CHECK(a.t_smem_dq == 0);
    CHECK(a.bottleneck == Resource::Mma); // tied with exp, ties go to MMA

    const auto b = fwd_roofline(tile(256, 128, 128), hw);
    CHECK(b.t_mma == 2048);
    CHECK(b.t_smem_total == 1536);
    CHECK(b.t_exp == 2048);
}

TEST_CASE("doubling the exponential unit halves its cycles") {
    const auto c = fwd_roofline(tile(128, 128, 128), b300_profile());
    CHECK(c.t_exp == 512);
    CHECK(c.t_mma == 1024);
}

TEST_CASE("backward cycle table, one CTA") {
    const auto c = bwd_roofline(tile(128, 128, 128), b200_profile());
    CHECK(c.t_mma == 2560);
    CHECK(c.t_smem_mma_operands == 2048);
    CHECK(c.t_smem_ds_write == 256);
    CHECK(c.t_smem_ds_dsmem == 0);
    CHECK(c.t_smem_dq == 1024);
    CHECK(c.t_smem_total == 3328);
    CHECK(c.t_exp == 1024);
    CHECK(c.bottleneck == Resource::Smem);
}

TEST_CASE("backward cycle table, two CTA pair view") {
    const auto c = bwd_roofline(tile(256, 128, 128, CtaMode::TwoCta), b200_profile());
    CHECK(c.t_mma == 2560);
    CHECK(c.t_smem_mma_operands == 1536);
    CHECK(c.t_smem_ds_write == 256);
    CHECK(c.t_smem_ds_dsmem == 384);
    CHECK(c.t_smem_dq == 512);
    CHECK(c.t_smem_total == 2688);
    CHECK(c.t_exp == 1024);
    CHECK(c.bottleneck == Resource::Smem);
}

TEST_CASE("two-CTA view needs an even M") {
    CHECK_THROWS_AS(bwd_roofline(tile(129, 128, 128, CtaMode::TwoCta), b200_profile()),
                    std::invalid_argument);
}

TEST_CASE("cycle counts are homogeneous at 128-multiples") {
    const auto hw = b200_profile();
    for (std::int64_t f : {2, 3, 4}) {
        const auto base = fwd_roofline(tile(128, 128, 128), hw);
        const auto m_scaled = fwd_roofline(tile(128 * f, 128, 128), hw);
        CHECK(m_scaled.t_mma == f * base.t_mma);
        CHECK(m_scaled.t_smem_total == f * base.t_smem_total);
        CHECK(m_scaled.t_exp == f * base.t_exp);

        const auto bwd_base = bwd_roofline(tile(128, 128, 128), hw);
        const auto bwd_n = bwd_roofline(tile(128, 128 * f, 128), hw);
        CHECK(bwd_n.t_mma == f * bwd_base.t_mma);
        CHECK(bwd_n.t_smem_ds_write == f * bwd_base.t_smem_ds_write);
        CHECK(bwd_n.t_smem_dq == bwd_base.t_smem_dq); // dQ traffic has no N term
    }
}

TEST_CASE("the ceiling form collapses to the closed form on 128-multiples") {
    const auto hw = b200_profile();
    for (std::int64_t m : {128, 256, 384}) {
        for (std::int64_t n : {128, 256}) {
            for (std::int64_t d : {128, 256}) {
                const auto c = fwd_roofline(tile(m, n, d), hw);
                CHECK(c.t_smem_total == 3 * m * n * d / 8192);
                CHECK(c.t_mma == 4 * m * n * d / 8192);
            }
        }
    }
    // a non-multiple shape pays for full 128-wide instruction tiles
    const auto odd = fwd_roofline(tile(100, 100, 64), b200_profile());
    CHECK(odd.t_smem_total > 3 * 100 * 100 * 64 / 8192);
}

TEST_CASE("more shared-memory bandwidth never costs cycles") {
    auto hw = b200_profile();
    const auto base = bwd_roofline(tile(128, 128, 128), hw);
    for (std::int64_t bw : {160, 256, 512}) {
        hw.smem_bytes_per_clk = bw;
        const auto c = bwd_roofline(tile(128, 128, 128), hw);
        CHECK(c.t_smem_mma_operands <= base.t_smem_mma_operands);
        CHECK(c.t_smem_ds_write <= base.t_smem_ds_write);
        CHECK(c.t_smem_dq <= base.t_smem_dq);
        CHECK(c.t_smem_total <= base.t_smem_total);
    }
}

TEST_CASE("bottleneck report carries excess percentages and ties") {
    const auto hw = b200_profile();
    const std::array<TileConfig, 1> bwd_one{tile(128, 128, 128)};
    auto rows = bottleneck_report(bwd_one, hw, Pass::Backward);
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].cycles.bottleneck == Resource::Smem);
    CHECK(rows[0].excess_over_mma_pct == doctest::Approx(30.0));

    const std::array<TileConfig, 1> bwd_two{tile(256, 128, 128, CtaMode::TwoCta)};
    rows = bottleneck_report(bwd_two, hw, Pass::Backward);
    CHECK(rows[0].excess_over_mma_pct == doctest::Approx(5.0));

    const std::array<TileConfig, 1> fwd{tile(128, 128, 128)};
    rows = bottleneck_report(fwd, hw, Pass::Forward);
    CHECK(rows[0].cycles.bottleneck == Resource::Mma);
    CHECK(rows[0].excess_over_mma_pct == doctest::Approx(0.0));
    // MMA and the exponential unit tie at this shape
    REQUIRE(rows[0].co_bottlenecks.size() == 2);
    CHECK(rows[0].co_bottlenecks[0] == Resource::Mma);
    CHECK(rows[0].co_bottlenecks[1] == Resource::Exp);

    CHECK_THROWS_AS(bottleneck_report({}, hw, Pass::Forward), std::invalid_argument);
}

TEST_CASE("profiles resolve by name and round-trip through JSON") {
    CHECK(profile_by_name("b200-class").mma_flops_per_clk == 8192);
    CHECK(profile_by_name("hopper-class").mma_flops_per_clk == 4096);
    CHECK(profile_by_name("b300-class").mufu_exp_per_clk == 32);
    CHECK_THROWS_AS(profile_by_name("granite-class"), std::invalid_argument);

    auto hw = b200_profile();
    hw.smem_bytes_per_clk = 192;
    hw.dsmem_exchange_factor = 2.0;
    const auto back = profile_from_json(profile_to_json(hw));
    CHECK(back.smem_bytes_per_clk == 192);
    CHECK(back.dsmem_exchange_factor == 2.0);
    CHECK(back.n_sms == hw.n_sms);
}

TEST_CASE("half-rate tensor cores double the MMA cycle count") {
    const auto c = fwd_roofline(tile(128, 128, 128), hopper_profile());
    CHECK(c.t_mma == 2048);
    CHECK(c.t_exp == 1024);
}
