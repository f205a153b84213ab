#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

namespace attnlab::softmax {

constexpr int kWarpWidth = 32;

/// Streaming softmax state for one output row. All score arithmetic is in
/// the log2 domain: callers feed scores already scaled by alpha * log2(e),
/// and every exponential is 2^x. Scalar selects the accumulation precision
/// (float for the kernel-faithful mode, double for the oracle mode).
template <typename Scalar>
struct SoftmaxState {
    Scalar m = -std::numeric_limits<Scalar>::infinity(); // running max
    Scalar ell = 0;                                      // running normalizer
    std::vector<Scalar> acc;                             // weighted V accumulator
    Scalar tau = 8;                                      // rescale threshold, log2 units
    std::int64_t n_rescales = 0;
    std::int64_t n_blocks = 0;
    Scalar max_exp_arg = -std::numeric_limits<Scalar>::infinity(); // diagnostics
};

template <typename Scalar>
SoftmaxState<Scalar> make_state(std::size_t d, Scalar tau = Scalar(8)) {
    SoftmaxState<Scalar> st;
    st.acc.assign(d, Scalar(0));
    st.tau = tau;
    return st;
}

struct RowStats {
    double m_final = 0.0;
    double ell_final = 0.0;
    double lse = 0.0; // log-sum-exp, base-2 convention: m + log2(ell)
};

namespace detail {

template <typename Scalar>
struct NativeExp2 {
    Scalar operator()(Scalar a, std::size_t) const { return std::exp2(a); }
};

template <typename Scalar>
Scalar row_max(std::span<const Scalar> scores) {
    Scalar m = -std::numeric_limits<Scalar>::infinity();
    for (Scalar s : scores) m = std::max(m, s);
    return m;
}

template <typename Scalar>
void check_block(const SoftmaxState<Scalar>& st, std::span<const Scalar> scores,
                 std::span<const Scalar> v_block) {
    if (scores.empty()) throw std::invalid_argument("softmax update: empty score block");
    if (v_block.size() != scores.size() * st.acc.size()) {
        throw std::invalid_argument("softmax update: V block shape mismatch");
    }
}

// accumulate 2^(scores - shift) * V into acc/ell; returns nothing, records
// the largest exponent argument for the bounded-intermediate diagnostics
template <typename Scalar, typename ExpFn>
void accumulate_block(SoftmaxState<Scalar>& st, std::span<const Scalar> scores,
                      std::span<const Scalar> v_block, Scalar shift, ExpFn&& exp2_at) {
    const std::size_t d = st.acc.size();
    for (std::size_t j = 0; j < scores.size(); ++j) {
        if (std::isinf(scores[j]) && scores[j] < 0) continue; // masked
        const Scalar arg = scores[j] - shift;
        st.max_exp_arg = std::max(st.max_exp_arg, arg);
        const Scalar p = exp2_at(arg, j);
        st.ell += p;
        const Scalar* v = v_block.data() + j * d;
        for (std::size_t k = 0; k < d; ++k) st.acc[k] += p * v[k];
    }
}

} // namespace detail

/// Classical online-softmax update: the running max absorbs the block max
/// and the accumulator is rescaled on every growth of m.
template <typename Scalar, typename ExpFn = detail::NativeExp2<Scalar>>
void update_always_rescale(SoftmaxState<Scalar>& st, std::span<const Scalar> scores,
                           std::span<const Scalar> v_block, ExpFn&& exp2_at = {}) {
    detail::check_block(st, scores, v_block);
    st.n_blocks += 1;
    const Scalar bmax = detail::row_max(scores);
    if (std::isinf(bmax) && bmax < 0) return; // fully masked block
    const Scalar m_new = std::max(st.m, bmax);
    if (m_new > st.m) {
        // the first non-masked block also lands here (factor 2^(-inf) = 0)
        const Scalar scale = exp2_at(st.m - m_new, 0);
        st.ell *= scale;
        for (auto& a : st.acc) a *= scale;
        st.n_rescales += 1;
        st.m = m_new;
    }
    detail::accumulate_block(st, scores, v_block, st.m, exp2_at);
}

/// Conditional-rescaling update: the multiply on the accumulator is skipped
/// unless the block max exceeds the running max by more than tau. On the
/// skip branch the stale max keeps serving as the shift, so stored
/// exponentials stay bounded by 2^tau and the final normalizer is still
/// exact.
template <typename Scalar, typename ExpFn = detail::NativeExp2<Scalar>>
void update_conditional(SoftmaxState<Scalar>& st, std::span<const Scalar> scores,
                        std::span<const Scalar> v_block, ExpFn&& exp2_at = {}) {
    detail::check_block(st, scores, v_block);
    if (!(st.tau > Scalar(0))) throw std::invalid_argument("conditional update: tau must be > 0");
    st.n_blocks += 1;
    const Scalar bmax = detail::row_max(scores);
    if (std::isinf(bmax) && bmax < 0) return; // fully masked block
    if (bmax - st.m > st.tau) {
        const Scalar scale = exp2_at(st.m - bmax, 0);
        st.ell *= scale;
        for (auto& a : st.acc) a *= scale;
        st.n_rescales += 1;
        st.m = bmax;
    }
    detail::accumulate_block(st, scores, v_block, st.m, exp2_at);
}

/// Normalize the accumulator. A row that never saw an unmasked entry yields
/// a zero output row and lse = -inf.
template <typename Scalar>
std::pair<std::vector<Scalar>, RowStats> finalize(const SoftmaxState<Scalar>& st) {
    RowStats stats;
    std::vector<Scalar> out(st.acc.size(), Scalar(0));
    if (!(st.ell > Scalar(0))) {
        stats.m_final = -std::numeric_limits<double>::infinity();
        stats.ell_final = 0.0;
        stats.lse = -std::numeric_limits<double>::infinity();
        return {std::move(out), stats};
    }
    for (std::size_t k = 0; k < out.size(); ++k) out[k] = st.acc[k] / st.ell;
    stats.m_final = static_cast<double>(st.m);
    stats.ell_final = static_cast<double>(st.ell);
    stats.lse = static_cast<double>(st.m) + std::log2(static_cast<double>(st.ell));
    return {std::move(out), stats};
}

/// Warp-uniform rescale decision: if any row of the 32-row group wants a
/// rescale, the whole group takes the rescale branch.
inline bool warp_uniform_predicate(std::span<const bool> row_flags) {
    if (row_flags.size() != static_cast<std::size_t>(kWarpWidth)) {
        throw std::invalid_argument("warp_uniform_predicate: group must be 32 rows");
    }
    for (bool f : row_flags) {
        if (f) return true;
    }
    return false;
}

} // namespace attnlab::softmax
