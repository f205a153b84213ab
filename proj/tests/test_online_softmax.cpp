#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <array>
#include <cmath>
#include <numeric>

#include "attnlab/online_softmax.hpp"
#include "attnlab/util.hpp"
#include "test_util.hpp"

using namespace attnlab;
using namespace attnlab::softmax;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// feed one row through the conditional path over the given block boundaries
template <typename Scalar>
SoftmaxState<Scalar> stream_row(const std::vector<Scalar>& scores,
                                const std::vector<Scalar>& v, std::size_t d,
                                const std::vector<std::size_t>& block_sizes, Scalar tau,
                                bool conditional) {
    auto st = make_state<Scalar>(d, tau);
    std::size_t pos = 0;
    for (std::size_t len : block_sizes) {
        std::span<const Scalar> s(scores.data() + pos, len);
        std::span<const Scalar> vb(v.data() + pos * d, len * d);
        if (conditional) {
            update_conditional(st, s, vb);
        } else {
            update_always_rescale(st, s, vb);
        }
        pos += len;
    }
    REQUIRE(pos == scores.size());
    return st;
}

std::vector<std::size_t> random_decomposition(Rng& rng, std::size_t total) {
    std::vector<std::size_t> blocks;
    std::size_t left = total;
    while (left > 0) {
        const std::size_t take = 1 + rng.next_below(std::min<std::uint64_t>(left, 96));
        blocks.push_back(take);
        left -= take;
    }
    return blocks;
}

} // namespace

TEST_CASE("uniform scores accumulate plainly") {
    auto st = make_state<double>(3);
    const std::vector<double> scores{0.0, 0.0};
    const std::vector<double> v{1.0, 2.0, 3.0, 10.0, 20.0, 30.0};
    update_always_rescale(st, std::span<const double>(scores), std::span<const double>(v));
    CHECK(st.m == 0.0);
    CHECK(st.ell == doctest::Approx(2.0));
    CHECK(st.acc[0] == doctest::Approx(11.0));
    CHECK(st.acc[1] == doctest::Approx(22.0));
    CHECK(st.acc[2] == doctest::Approx(33.0));
}

TEST_CASE("masked entries drop out") {
    auto st = make_state<double>(2);
    const std::vector<double> scores{-kInf, 0.0};
    const std::vector<double> v{1.0, 2.0, 5.0, 7.0};
    update_always_rescale(st, std::span<const double>(scores), std::span<const double>(v));
    CHECK(st.ell == doctest::Approx(1.0));
    CHECK(st.acc[0] == doctest::Approx(5.0));
    CHECK(st.acc[1] == doctest::Approx(7.0));

    // a fully masked block leaves the state untouched
    const std::vector<double> all_masked{-kInf, -kInf};
    update_always_rescale(st, std::span<const double>(all_masked), std::span<const double>(v));
    CHECK(st.ell == doctest::Approx(1.0));
    CHECK(st.n_blocks == 2);
}

TEST_CASE("two sequential blocks match the concatenated block") {
    Rng rng(3);
    const std::size_t d = 4, n = 32;
    std::vector<double> scores(n), v(n * d);
    for (auto& s : scores) s = rng.next_gaussian() * 3.0;
    for (auto& x : v) x = rng.next_gaussian();

    auto split = stream_row<double>(scores, v, d, {n / 2, n / 2}, 8.0, false);
    auto whole = stream_row<double>(scores, v, d, {n}, 8.0, false);
    auto [out_a, stats_a] = finalize(split);
    auto [out_b, stats_b] = finalize(whole);
    const auto oracle = testutil::dense_softmax_v(scores, v, d);
    for (std::size_t k = 0; k < d; ++k) {
        CHECK(out_a[k] == doctest::Approx(out_b[k]).epsilon(1e-6));
        CHECK(out_a[k] == doctest::Approx(oracle.out[k]).epsilon(1e-9));
    }
    CHECK(stats_a.lse == doctest::Approx(stats_b.lse).epsilon(1e-9));
    CHECK(stats_a.lse == doctest::Approx(oracle.lse_base2).epsilon(1e-9));
}

TEST_CASE("conditional update skips small max growth and bounds intermediates") {
    const std::size_t d = 1;
    auto st = make_state<double>(d, 8.0);
    const std::vector<double> first{0.0};
    const std::vector<double> v{1.0};
    update_conditional(st, std::span<const double>(first), std::span<const double>(v));
    CHECK(st.m == 0.0);
    const auto rescales_before = st.n_rescales;

    // block max 5 with tau 8: skip branch, stored exponential hits 2^5
    const std::vector<double> five{5.0};
    update_conditional(st, std::span<const double>(five), std::span<const double>(v));
    CHECK(st.m == 0.0);
    CHECK(st.n_rescales == rescales_before);
    CHECK(st.max_exp_arg == doctest::Approx(5.0));
    CHECK(std::exp2(st.max_exp_arg) == doctest::Approx(32.0));

    // block max 20: the rescale branch fires and the max moves
    const std::vector<double> twenty{20.0};
    update_conditional(st, std::span<const double>(twenty), std::span<const double>(v));
    CHECK(st.m == 20.0);
    CHECK(st.n_rescales == rescales_before + 1);
}

TEST_CASE("conditional and always-rescale agree after finalize") {
    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t d = 3, n = 128;
        std::vector<double> scores(n), v(n * d);
        for (auto& s : scores) s = rng.next_gaussian() * 5.0;
        for (auto& x : v) x = rng.next_gaussian();
        const auto blocks = random_decomposition(rng, n);

        auto cond = stream_row<double>(scores, v, d, blocks, 8.0, true);
        auto always = stream_row<double>(scores, v, d, blocks, 8.0, false);
        auto [oc, sc] = finalize(cond);
        auto [oa, sa] = finalize(always);
        for (std::size_t k = 0; k < d; ++k) {
            CHECK(oc[k] == doctest::Approx(oa[k]).epsilon(1e-12));
        }
        CHECK(sc.lse == doctest::Approx(sa.lse).epsilon(1e-12));

        // fp32 accumulation agrees to the looser tolerance
        std::vector<float> scores_f(scores.begin(), scores.end());
        std::vector<float> v_f(v.begin(), v.end());
        auto cond_f = stream_row<float>(scores_f, v_f, d, blocks, 8.0f, true);
        auto always_f = stream_row<float>(scores_f, v_f, d, blocks, 8.0f, false);
        auto [ocf, scf] = finalize(cond_f);
        auto [oaf, saf] = finalize(always_f);
        for (std::size_t k = 0; k < d; ++k) {
            const double scale = std::max(1.0, std::fabs(static_cast<double>(oaf[k])));
            CHECK(std::fabs(static_cast<double>(ocf[k]) - static_cast<double>(oaf[k])) / scale <=
                  1e-5);
        }
    }
}

TEST_CASE("finalize fixed points") {
    SUBCASE("single entry") {
        auto st = make_state<double>(2);
        const std::vector<double> s{0.0};
        const std::vector<double> v{3.0, -1.0};
        update_conditional(st, std::span<const double>(s), std::span<const double>(v));
        auto [out, stats] = finalize(st);
        CHECK(out[0] == doctest::Approx(3.0));
        CHECK(out[1] == doctest::Approx(-1.0));
        CHECK(stats.lse == doctest::Approx(0.0));
        CHECK(stats.lse == doctest::Approx(stats.m_final + std::log2(stats.ell_final)));
    }
    SUBCASE("uniform scores over k entries") {
        const std::size_t k = 7, d = 2;
        auto st = make_state<double>(d);
        std::vector<double> s(k, 1.25);
        std::vector<double> v(k * d);
        Rng rng(9);
        for (auto& x : v) x = rng.next_gaussian();
        update_conditional(st, std::span<const double>(s), std::span<const double>(v));
        auto [out, stats] = finalize(st);
        CHECK(stats.ell_final == doctest::Approx(static_cast<double>(k)));
        for (std::size_t c = 0; c < d; ++c) {
            double mean = 0.0;
            for (std::size_t j = 0; j < k; ++j) mean += v[j * d + c];
            mean /= static_cast<double>(k);
            CHECK(out[c] == doctest::Approx(mean));
        }
    }
    SUBCASE("fully masked row") {
        auto st = make_state<double>(2);
        const std::vector<double> s{-kInf, -kInf};
        const std::vector<double> v{1.0, 1.0, 1.0, 1.0};
        update_conditional(st, std::span<const double>(s), std::span<const double>(v));
        auto [out, stats] = finalize(st);
        CHECK(out[0] == 0.0);
        CHECK(out[1] == 0.0);
        CHECK(stats.lse == -kInf);
    }
}

TEST_CASE("streamed conditional softmax equals the dense oracle on long rows") {
    Rng rng(21);
    for (int trial = 0; trial < 8; ++trial) {
        const std::size_t d = 2;
        const std::size_t n = 256 + rng.next_below(3841); // up to 4096
        std::vector<double> scores(n), v(n * d);
        for (auto& s : scores) s = rng.next_gaussian() * 4.0;
        for (auto& x : v) x = rng.next_gaussian();
        const auto blocks = random_decomposition(rng, n);
        auto st = stream_row<double>(scores, v, d, blocks, 8.0, true);
        auto [out, stats] = finalize(st);
        const auto oracle = testutil::dense_softmax_v(scores, v, d);
        for (std::size_t k = 0; k < d; ++k) {
            CHECK(out[k] == doctest::Approx(oracle.out[k]).epsilon(1e-12));
        }
        CHECK(stats.lse == doctest::Approx(oracle.lse_base2).epsilon(1e-12));
        CHECK(st.max_exp_arg <= 8.0); // bounded intermediates
    }
}

TEST_CASE("rescale count is non-increasing in tau") {
    Rng rng(33);
    const std::size_t d = 1, n = 512;
    std::vector<double> scores(n), v(n, 1.0);
    for (auto& s : scores) s = rng.next_gaussian() * 6.0;
    const auto blocks = random_decomposition(rng, n);
    std::int64_t prev = std::numeric_limits<std::int64_t>::max();
    for (double tau : {0.01, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0}) {
        auto st = stream_row<double>(scores, v, d, blocks, tau, true);
        CHECK(st.n_rescales <= prev);
        prev = st.n_rescales;
    }
}

TEST_CASE("tiny tau matches always-rescale on strictly increasing block maxima") {
    const std::size_t d = 1;
    std::vector<double> scores{0.0, 1.0, 2.5, 4.0, 7.0, 9.5};
    std::vector<double> v(scores.size(), 1.0);
    std::vector<std::size_t> blocks(scores.size(), 1);
    auto cond = stream_row<double>(scores, v, d, blocks, 1e-9, true);
    auto always = stream_row<double>(scores, v, d, blocks, 8.0, false);
    CHECK(cond.n_rescales == always.n_rescales);
}

TEST_CASE("final output is invariant under block reordering") {
    Rng rng(55);
    const std::size_t d = 3, n_blocks = 6, block = 16;
    std::vector<std::vector<double>> bscores(n_blocks), bv(n_blocks);
    for (auto& s : bscores) {
        s.resize(block);
        for (auto& x : s) x = rng.next_gaussian() * 5.0;
    }
    for (auto& v : bv) {
        v.resize(block * d);
        for (auto& x : v) x = rng.next_gaussian();
    }
    std::array<std::size_t, n_blocks> perm{3, 0, 5, 1, 4, 2};

    auto run = [&](bool permuted) {
        auto st = make_state<double>(d, 8.0);
        for (std::size_t b = 0; b < n_blocks; ++b) {
            const std::size_t idx = permuted ? perm[b] : b;
            update_conditional(st, std::span<const double>(bscores[idx]),
                               std::span<const double>(bv[idx]));
        }
        return finalize(st);
    };
    auto [out_a, stats_a] = run(false);
    auto [out_b, stats_b] = run(true);
    for (std::size_t k = 0; k < d; ++k) {
        CHECK(out_a[k] == doctest::Approx(out_b[k]).epsilon(1e-12));
    }
    CHECK(stats_a.lse == doctest::Approx(stats_b.lse).epsilon(1e-12));
}

TEST_CASE("gaussian streams rarely take the rescale branch at tau 8") {
    Rng rng(77);
    const std::size_t rows = 256, blocks = 16, block = 128;
    std::int64_t rescales = 0;
    for (std::size_t r = 0; r < rows; ++r) {
        auto st = make_state<double>(1, 8.0);
        std::vector<double> v(block, 1.0);
        for (std::size_t b = 0; b < blocks; ++b) {
            std::vector<double> s(block);
            for (auto& x : s) x = rng.next_gaussian();
            update_conditional(st, std::span<const double>(s), std::span<const double>(v));
        }
        rescales += st.n_rescales;
    }
    const double rate = static_cast<double>(rescales) / static_cast<double>(rows * blocks);
    CHECK(rate < 0.10);
}

TEST_CASE("warp-uniform predicate") {
    std::array<bool, 32> flags{};
    CHECK_FALSE(warp_uniform_predicate(flags));
    flags[17] = true;
    CHECK(warp_uniform_predicate(flags));
    flags.fill(true);
    CHECK(warp_uniform_predicate(flags));
    std::array<bool, 16> wrong{};
    CHECK_THROWS_AS(warp_uniform_predicate(wrong), std::invalid_argument);
}

TEST_CASE("update rejects malformed blocks") {
    auto st = make_state<double>(2);
    const std::vector<double> s{0.0, 1.0};
    const std::vector<double> v{1.0, 2.0}; // should be 2x2
    CHECK_THROWS_AS(
        update_conditional(st, std::span<const double>(s), std::span<const double>(v)),
        std::invalid_argument);
    CHECK_THROWS_AS(update_always_rescale(st, std::span<const double>(),
                                          std::span<const double>()),
                    std::invalid_argument);
}
