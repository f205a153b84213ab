#include "attnlab/attention.hpp"

#include <cmath>
#include <limits>
#include <span>

#include "attnlab/exp2poly.hpp"
#include "attnlab/online_softmax.hpp"

namespace attnlab::attn {

namespace {

constexpr double kLog2e = 1.4426950408889634074; // log2(e)
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void check_forward_shapes(const Matrix& Q, const Matrix& K, const Matrix& V,
                          const AttentionParams& p) {
    p.validate();
    if (Q.rows != p.n_q || Q.cols != p.head_dim) throw std::invalid_argument("Q shape mismatch");
    if (K.rows != p.n_kv || K.cols != p.head_dim) throw std::invalid_argument("K shape mismatch");
    if (V.rows != p.n_kv || V.cols != p.head_dim) throw std::invalid_argument("V shape mismatch");
}

template <typename Scalar>
std::vector<Scalar> to_scalar(const Matrix& m, bool bf16_inputs) {
    std::vector<Scalar> out(m.data.size());
    for (std::size_t i = 0; i < m.data.size(); ++i) {
        const double v = bf16_inputs
                             ? static_cast<double>(fastmath::bf16_round(static_cast<float>(m.data[i])))
                             : m.data[i];
        out[i] = static_cast<Scalar>(v);
    }
    return out;
}

std::int64_t mixed_stride(const ExpMode& mode) {
    if (mode.fraction <= 0.0) return std::numeric_limits<std::int64_t>::max();
    return std::max<std::int64_t>(1, std::llround(1.0 / mode.fraction));
}

// exponential dispatch shared by both precisions; `col0` is the global key
// index of the block's first column so the mixed stride pattern does not
// depend on the tiling
template <typename Scalar>
struct ExpPath {
    ExpKind kind;
    const fastmath::Poly2x* poly = nullptr;
    std::int64_t stride = 1;
    std::int64_t col0 = 0;
    bool round_p_to_bf16 = false;

    Scalar operator()(Scalar arg, std::size_t j) const {
        bool emulate = kind == ExpKind::Emulated;
        if (kind == ExpKind::Mixed) emulate = ((col0 + static_cast<std::int64_t>(j)) % stride) == 0;
        Scalar v;
        if (emulate) {
            v = static_cast<Scalar>(fastmath::exp2_emulated(static_cast<float>(arg), *poly));
        } else if constexpr (std::is_same_v<Scalar, double>) {
            v = std::exp2(arg);
        } else {
            v = fastmath::exp2_reference(arg);
        }
        if (round_p_to_bf16) v = static_cast<Scalar>(fastmath::bf16_round(static_cast<float>(v)));
        return v;
    }
};

template <typename Scalar>
ForwardOutput forward_tiled_impl(const Matrix& Q, const Matrix& K, const Matrix& V,
                                 const AttentionParams& p, ForwardStats* stats) {
    const std::int64_t d = p.head_dim;
    const bool kernel_mode = p.precision == Precision::KernelFaithful;
    const auto q = to_scalar<Scalar>(Q, kernel_mode);
    const auto k = to_scalar<Scalar>(K, kernel_mode);
    const auto v = to_scalar<Scalar>(V, kernel_mode);
    const Scalar a2 = static_cast<Scalar>(p.resolved_alpha() * kLog2e);
    const std::int64_t off = p.n_kv - p.n_q;

    const fastmath::Poly2x* poly =
        p.exp_mode.kind == ExpKind::Reference ? nullptr : &fastmath::shared_poly(p.exp_mode.degree);

    ForwardOutput out;
    out.O = Matrix(p.n_q, d);
    out.lse.assign(static_cast<std::size_t>(p.n_q), kNegInf);
    if (stats) *stats = ForwardStats{};

    std::vector<Scalar> scores;
    for (std::int64_t t0 = 0; t0 < p.n_q; t0 += p.tile_m) {
        const std::int64_t t1 = std::min(t0 + p.tile_m, p.n_q);
        std::vector<softmax::SoftmaxState<Scalar>> states;
        states.reserve(static_cast<std::size_t>(t1 - t0));
        for (std::int64_t i = t0; i < t1; ++i) {
            states.push_back(softmax::make_state<Scalar>(static_cast<std::size_t>(d),
                                                         static_cast<Scalar>(p.tau)));
        }
        std::int64_t tiles_visited = 0;
        for (std::int64_t u0 = 0; u0 < p.n_kv; u0 += p.tile_n) {
            const std::int64_t u1 = std::min(u0 + p.tile_n, p.n_kv);
            if (p.causal && u0 > (t1 - 1) + off) continue; // tile fully above the diagonal
            ++tiles_visited;
            const std::span<const Scalar> v_block(v.data() + u0 * d,
                                                  static_cast<std::size_t>((u1 - u0) * d));
            ExpPath<Scalar> exp_at{p.exp_mode.kind, poly, mixed_stride(p.exp_mode), u0,
                                   kernel_mode && p.quantize_p};
            for (std::int64_t i = t0; i < t1; ++i) {
                scores.assign(static_cast<std::size_t>(u1 - u0), Scalar(0));
                for (std::int64_t j = u0; j < u1; ++j) {
                    if (p.causal && causal_mask(i, j, p.n_q, p.n_kv)) {
                        scores[static_cast<std::size_t>(j - u0)] =
                            -std::numeric_limits<Scalar>::infinity();
                        continue;
                    }
                    Scalar dot = 0;
                    const Scalar* qi = q.data() + i * d;
                    const Scalar* kj = k.data() + j * d;
                    for (std::int64_t c = 0; c < d; ++c) dot += qi[c] * kj[c];
                    scores[static_cast<std::size_t>(j - u0)] = a2 * dot;
                }
                auto& st = states[static_cast<std::size_t>(i - t0)];
                if (p.tau > 0.0) {
                    softmax::update_conditional(st, std::span<const Scalar>(scores), v_block,
                                                exp_at);
                } else {
                    softmax::update_always_rescale(st, std::span<const Scalar>(scores), v_block,
                                                   exp_at);
                }
            }
        }
        for (std::int64_t i = t0; i < t1; ++i) {
            auto& st = states[static_cast<std::size_t>(i - t0)];
            auto [row, rstats] = softmax::finalize(st);
            for (std::int64_t c = 0; c < d; ++c) out.O.at(i, c) = static_cast<double>(row[static_cast<std::size_t>(c)]);
            out.lse[static_cast<std::size_t>(i)] = rstats.lse;
            if (stats) {
                stats->n_rescales += st.n_rescales;
                stats->n_blocks += st.n_blocks;
                if (std::isfinite(static_cast<double>(st.max_exp_arg))) {
                    stats->max_exp_arg =
                        std::max(stats->max_exp_arg, static_cast<double>(st.max_exp_arg));
                }
            }
        }
        if (stats) stats->kv_tiles_per_qtile.push_back(tiles_visited);
    }
    return out;
}

// modeled global dQ reduction: one reduction slot per (query-tile row half,
// 128-wide d chunk); masked tiles still take their slot so the count law
// stays a function of the grid shape alone
struct AtomicAccumulator {
    Matrix& target;
    std::int64_t granularity_rows;
    std::int64_t count = 0;

    void add(std::int64_t row0, const Matrix& contrib) {
        for (std::int64_t r = 0; r < contrib.rows; ++r) {
            for (std::int64_t c = 0; c < contrib.cols; ++c) {
                target.at(row0 + r, c) += contrib.at(r, c);
            }
        }
        count += ceil_div(contrib.rows, granularity_rows) * ceil_div(contrib.cols, 128);
    }
};

} // namespace

double AttentionParams::resolved_alpha() const {
    return alpha > 0.0 ? alpha : 1.0 / std::sqrt(static_cast<double>(head_dim));
}

void AttentionParams::validate() const {
    if (n_q < 1 || n_kv < 1 || head_dim < 1) throw std::invalid_argument("sequence/head dims must be >= 1");
    if (tile_m < 1 || tile_n < 1) throw std::invalid_argument("tile sizes must be >= 1");
    if (exp_mode.kind == ExpKind::Mixed &&
        (exp_mode.fraction < 0.0 || exp_mode.fraction > 1.0)) {
        throw std::invalid_argument("mixed exp fraction must be in [0,1]");
    }
    if (exp_mode.kind != ExpKind::Reference &&
        (exp_mode.degree < 3 || exp_mode.degree > 5)) {
        throw std::invalid_argument("emulation degree must be 3, 4 or 5");
    }
}

bool causal_mask(std::int64_t i_query, std::int64_t j_key, std::int64_t n_q, std::int64_t n_kv) {
    return j_key > i_query + (n_kv - n_q);
}

ForwardOutput attention_reference(const Matrix& Q, const Matrix& K, const Matrix& V,
                                  const AttentionParams& p) {
    check_forward_shapes(Q, K, V, p);
    const std::int64_t d = p.head_dim;
    const double a2 = p.resolved_alpha() * kLog2e;

    ForwardOutput out;
    out.O = Matrix(p.n_q, d);
    out.lse.assign(static_cast<std::size_t>(p.n_q), kNegInf);

    std::vector<double> s(static_cast<std::size_t>(p.n_kv));
    for (std::int64_t i = 0; i < p.n_q; ++i) {
        double m = kNegInf;
        for (std::int64_t j = 0; j < p.n_kv; ++j) {
            if (p.causal && causal_mask(i, j, p.n_q, p.n_kv)) {
                s[static_cast<std::size_t>(j)] = kNegInf;
                continue;
            }
            double dot = 0.0;
            for (std::int64_t c = 0; c < d; ++c) dot += Q.at(i, c) * K.at(j, c);
            s[static_cast<std::size_t>(j)] = a2 * dot;
            m = std::max(m, s[static_cast<std::size_t>(j)]);
        }
        if (m == kNegInf) continue; // fully masked row: zero output, -inf lse
        double ell = 0.0;
        for (std::int64_t j = 0; j < p.n_kv; ++j) {
            const double sj = s[static_cast<std::size_t>(j)];
            if (sj == kNegInf) continue;
            const double pij = std::exp2(sj - m);
            ell += pij;
            for (std::int64_t c = 0; c < d; ++c) out.O.at(i, c) += pij * V.at(j, c);
        }
        for (std::int64_t c = 0; c < d; ++c) out.O.at(i, c) /= ell;
        out.lse[static_cast<std::size_t>(i)] = m + std::log2(ell);
    }
    return out;
}

ForwardOutput attention_forward_tiled(const Matrix& Q, const Matrix& K, const Matrix& V,
                                      const AttentionParams& p, ForwardStats* stats) {
    check_forward_shapes(Q, K, V, p);
    if (p.precision == Precision::KernelFaithful) {
        return forward_tiled_impl<float>(Q, K, V, p, stats);
    }
    return forward_tiled_impl<double>(Q, K, V, p, stats);
}

std::vector<double> attention_backward_preprocess(const Matrix& dO, const Matrix& O) {
    if (!dO.same_shape(O)) throw std::invalid_argument("backward preprocess: shape mismatch");
    std::vector<double> D(static_cast<std::size_t>(dO.rows), 0.0);
    for (std::int64_t i = 0; i < dO.rows; ++i) {
        double acc = 0.0;
        for (std::int64_t c = 0; c < dO.cols; ++c) acc += dO.at(i, c) * O.at(i, c);
        D[static_cast<std::size_t>(i)] = acc;
    }
    return D;
}

BackwardOutput attention_backward_tiled(const Matrix& Q, const Matrix& K, const Matrix& V,
                                        const Matrix& dO, const ForwardOutput& fwd,
                                        const AttentionParams& p, CtaMode cta_mode,
                                        const std::vector<std::int64_t>* kv_order) {
    check_forward_shapes(Q, K, V, p);
    if (!dO.same_shape(fwd.O) || dO.rows != p.n_q || dO.cols != p.head_dim) {
        throw std::invalid_argument("dO/O shape mismatch");
    }
    if (fwd.lse.size() != static_cast<std::size_t>(p.n_q)) {
        throw std::invalid_argument("backward requires the forward lse vector");
    }

    const std::int64_t d = p.head_dim;
    const double alpha = p.resolved_alpha();
    const double a2 = alpha * kLog2e;
    const std::int64_t n_kv_tiles = ceil_div(p.n_kv, p.tile_n);
    if (cta_mode == CtaMode::TwoCta && n_kv_tiles % 2 != 0) {
        throw std::invalid_argument("TwoCta backward needs an even KV tile count");
    }

    std::vector<std::int64_t> order(static_cast<std::size_t>(n_kv_tiles));
    for (std::int64_t t = 0; t < n_kv_tiles; ++t) order[static_cast<std::size_t>(t)] = t;
    if (kv_order != nullptr && cta_mode == CtaMode::OneCta) {
        if (kv_order->size() != order.size()) {
            throw std::invalid_argument("kv_order must be a permutation of the KV tiles");
        }
        order = *kv_order;
    }

    BackwardOutput out;
    out.dQ = Matrix(p.n_q, d);
    out.dK = Matrix(p.n_kv, d);
    out.dV = Matrix(p.n_kv, d);
    out.D = attention_backward_preprocess(dO, fwd.O);

    AtomicAccumulator dq_acc{out.dQ, std::max<std::int64_t>(1, p.tile_m / 2)};

    // dQ contribution of one (query tile, KV tile) pair; also accumulates
    // this KV tile's dK/dV shares
    auto tile_pass = [&](std::int64_t t0, std::int64_t t1, std::int64_t u0, std::int64_t u1,
                         Matrix& dq_contrib) {
        const std::int64_t rows = t1 - t0;
        const std::int64_t cols = u1 - u0;
        Matrix P(rows, cols), dS(rows, cols);
        for (std::int64_t i = 0; i < rows; ++i) {
            const std::int64_t gi = t0 + i;
            const double lse_i = fwd.lse[static_cast<std::size_t>(gi)];
            for (std::int64_t j = 0; j < cols; ++j) {
                const std::int64_t gj = u0 + j;
                if (lse_i == kNegInf || (p.causal && causal_mask(gi, gj, p.n_q, p.n_kv))) {
                    continue; // P stays 0
                }
                double dot = 0.0;
                for (std::int64_t c = 0; c < d; ++c) dot += Q.at(gi, c) * K.at(gj, c);
                P.at(i, j) = std::exp2(a2 * dot - lse_i);
            }
        }
        for (std::int64_t i = 0; i < rows; ++i) {
            const std::int64_t gi = t0 + i;
            for (std::int64_t j = 0; j < cols; ++j) {
                double dp = 0.0;
                for (std::int64_t c = 0; c < d; ++c) dp += dO.at(gi, c) * V.at(u0 + j, c);
                dS.at(i, j) = P.at(i, j) * (dp - out.D[static_cast<std::size_t>(gi)]);
            }
        }
        for (std::int64_t j = 0; j < cols; ++j) {
            const std::int64_t gj = u0 + j;
            for (std::int64_t c = 0; c < d; ++c) {
                double dv = 0.0, dk = 0.0;
                for (std::int64_t i = 0; i < rows; ++i) {
                    dv += P.at(i, j) * dO.at(t0 + i, c);
                    dk += dS.at(i, j) * Q.at(t0 + i, c);
                }
                out.dV.at(gj, c) += dv;
                out.dK.at(gj, c) += alpha * dk;
            }
        }
        for (std::int64_t i = 0; i < rows; ++i) {
            for (std::int64_t c = 0; c < d; ++c) {
                double dq = 0.0;
                for (std::int64_t j = 0; j < cols; ++j) dq += dS.at(i, j) * K.at(u0 + j, c);
                dq_contrib.at(i, c) += alpha * dq;
            }
        }
    };

    for (std::int64_t t0 = 0; t0 < p.n_q; t0 += p.tile_m) {
        const std::int64_t t1 = std::min(t0 + p.tile_m, p.n_q);
        if (cta_mode == CtaMode::OneCta) {
            for (std::int64_t idx = 0; idx < n_kv_tiles; ++idx) {
                const std::int64_t u0 = order[static_cast<std::size_t>(idx)] * p.tile_n;
                const std::int64_t u1 = std::min(u0 + p.tile_n, p.n_kv);
                Matrix contrib(t1 - t0, d);
                tile_pass(t0, t1, u0, u1, contrib);
                dq_acc.add(t0, contrib);
            }
        } else {
            for (std::int64_t pair = 0; pair < n_kv_tiles / 2; ++pair) {
                // peer CTAs exchange their dS halves and emit one combined
                // reduction per pair
                Matrix contrib(t1 - t0, d);
                for (int half = 0; half < 2; ++half) {
                    const std::int64_t u0 = (2 * pair + half) * p.tile_n;
                    const std::int64_t u1 = std::min(u0 + p.tile_n, p.n_kv);
                    tile_pass(t0, t1, u0, u1, contrib);
                }
                dq_acc.add(t0, contrib);
            }
        }
    }
    out.atomic_adds = dq_acc.count;
    return out;
}

} // namespace attnlab::attn
