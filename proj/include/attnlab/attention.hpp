#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "attnlab/hardware.hpp"
#include "attnlab/matrix.hpp"

namespace attnlab::attn {

using attnlab::CtaMode;

enum class ExpKind { Reference, Emulated, Mixed };

/// Which exponential path the softmax uses. Mixed sends every stride-th
/// column (by global key index) of each row through the polynomial
/// emulation, the rest through the reference path; the pattern is
/// deterministic so paired runs are reproducible.
struct ExpMode {
    ExpKind kind = ExpKind::Reference;
    int degree = 3;
    double fraction = 0.0;

    static ExpMode reference() { return {}; }
    static ExpMode emulated(int degree) { return {ExpKind::Emulated, degree, 1.0}; }
    static ExpMode mixed(int degree, double fraction) {
        return {ExpKind::Mixed, degree, fraction};
    }
};

enum class Precision { Fp64Oracle, KernelFaithful };

struct AttentionParams {
    std::int64_t n_q = 0;
    std::int64_t n_kv = 0;
    std::int64_t head_dim = 0;
    double alpha = 0.0; // <= 0 means 1/sqrt(head_dim)
    bool causal = false;
    std::int64_t tile_m = 128;
    std::int64_t tile_n = 128;
    double tau = 8.0; // rescale threshold; <= 0 selects the always-rescale path
    ExpMode exp_mode;
    Precision precision = Precision::Fp64Oracle;
    // KernelFaithful only: round the P tile through bf16 (the faithful
    // default). Lifting it isolates pure fp32-accumulation effects.
    bool quantize_p = true;

    double resolved_alpha() const;
    void validate() const;
};

struct ForwardOutput {
    Matrix O;                // n_q x d
    std::vector<double> lse; // base-2 log-sum-exp per query row; -inf if fully masked
};

struct ForwardStats {
    std::vector<std::int64_t> kv_tiles_per_qtile; // unmasked KV tiles visited
    std::int64_t n_rescales = 0;
    std::int64_t n_blocks = 0;
    double max_exp_arg = 0.0; // largest log2-domain exponent fed to exp2
};

struct BackwardOutput {
    Matrix dQ; // n_q x d
    Matrix dK; // n_kv x d
    Matrix dV; // n_kv x d
    std::vector<double> D;        // rowsum(dO * O) per query row
    std::int64_t atomic_adds = 0; // modeled global dQ reductions
};

/// true iff key j is masked for query i under bottom-right-aligned causal
/// masking: query i sees keys j <= i + (n_kv - n_q).
bool causal_mask(std::int64_t i_query, std::int64_t j_key, std::int64_t n_q, std::int64_t n_kv);

/// Dense double-precision forward: S = alpha Q K^T, row-stable softmax, O = P V.
ForwardOutput attention_reference(const Matrix& Q, const Matrix& K, const Matrix& V,
                                  const AttentionParams& params);

/// Tiled forward over KV blocks using the streaming-softmax state machine.
/// KernelFaithful rounds Q/K/V and the P tile through bf16 and accumulates
/// in fp32; Fp64Oracle keeps everything in double.
ForwardOutput attention_forward_tiled(const Matrix& Q, const Matrix& K, const Matrix& V,
                                      const AttentionParams& params,
                                      ForwardStats* stats = nullptr);

/// D_i = sum_k dO_ik * O_ik, the softmax-gradient correction term.
std::vector<double> attention_backward_preprocess(const Matrix& dO, const Matrix& O);

/// Tiled backward (double precision): per KV tile, recompute P from Q, K and
/// the stored lse, accumulate dV and dK, and push per-tile dQ contributions
/// through a modeled atomic-add accumulator that counts global reductions.
/// TwoCta combines the contributions of each adjacent KV-tile pair before
/// accumulating, halving the atomic count without changing the math.
/// kv_order, when given, fixes the dQ accumulation order (OneCta only).
BackwardOutput attention_backward_tiled(const Matrix& Q, const Matrix& K, const Matrix& V,
                                        const Matrix& dO, const ForwardOutput& fwd,
                                        const AttentionParams& params, CtaMode cta_mode,
                                        const std::vector<std::int64_t>* kv_order = nullptr);

} // namespace attnlab::attn
