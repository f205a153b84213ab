#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace attnlab::sched {

/// The (mblock, head, batch) worktile grid of one attention launch. Varlen
/// batches carry their own sequence lengths; n_mblocks is the grid-level
/// maximum and batches shorter than that simply own fewer tiles.
struct WorktileGrid {
    std::int64_t n_mblocks = 0;
    std::int64_t n_heads = 0;
    std::int64_t n_batches = 0;
    std::int64_t heads_per_kv_head = 1; // GQA group size, 1 = MHA
    bool causal = false;
    std::int64_t tile_m = 128;
    std::int64_t tile_n = 128;
    std::vector<std::int64_t> seqlen_q;  // per batch
    std::vector<std::int64_t> seqlen_kv; // per batch

    static WorktileGrid uniform(std::int64_t n_mblocks, std::int64_t n_heads,
                                std::int64_t n_batches, bool causal,
                                std::int64_t tile_m = 128, std::int64_t tile_n = 128,
                                std::int64_t heads_per_kv_head = 1);

    /// Build a varlen grid from the usual cumulative-seqlen metadata arrays
    /// (length n_batches + 1, 32-bit).
    static WorktileGrid from_cu_seqlens(std::span<const std::int32_t> cu_q,
                                        std::span<const std::int32_t> cu_kv,
                                        std::int64_t n_heads, bool causal,
                                        std::int64_t tile_m = 128, std::int64_t tile_n = 128,
                                        std::int64_t heads_per_kv_head = 1);

    void validate() const;
    std::int64_t mblocks_of_batch(std::int64_t b) const;
    std::int64_t kv_blocks_of_batch(std::int64_t b) const;
    std::int64_t total_tiles() const;
};

struct TileCoord {
    std::int64_t mblock = 0;
    std::int64_t head = 0;
    std::int64_t batch = 0;

    friend bool operator==(const TileCoord&, const TileCoord&) = default;
};

enum class Policy { Naive, LptCausal, LptVarlen, Spt };

const char* to_string(Policy p);
Policy policy_from_string(const std::string& s);

struct Schedule {
    std::vector<TileCoord> order; // bijection onto the grid's valid tiles
    std::vector<double> costs;    // aligned with order
    Policy policy = Policy::Naive;
};

/// KV iterations of one worktile: causal tiles stop at the diagonal, the
/// rest sweep the whole KV range.
std::int64_t tile_kv_iterations(const TileCoord& coord, const WorktileGrid& grid);
double tile_cost(const TileCoord& coord, const WorktileGrid& grid, double per_iter_cycles);

/// Grid order as launched by a plain scheduler: mblocks fastest, ascending.
Schedule order_naive(const WorktileGrid& grid, double per_iter_cycles);

/// Longest-first causal order with L2-aware head sectioning: batches
/// outermost, then head sections sized so one section's KV stays in L2,
/// mblocks in reverse, and all query heads of a KV head together.
Schedule order_lpt_causal(const WorktileGrid& grid, std::int64_t l2_bytes,
                          std::int64_t kv_bytes_per_head, double per_iter_cycles);

struct VarlenSchedule {
    Schedule schedule;
    std::vector<std::int32_t> virtual_to_actual; // virtual batch -> actual batch
};

/// Batches sorted by descending maximum worktile cost (stable), emitted with
/// the virtual-to-actual index map that a kernel would read back.
VarlenSchedule order_lpt_varlen(const WorktileGrid& grid, double per_iter_cycles);

struct MakespanResult {
    double makespan = 0.0;
    std::vector<double> per_processor_load;
};

/// Greedy list scheduling over identical processors: the next tile in
/// schedule order goes to the earliest-free processor, ties to the lowest
/// index.
MakespanResult simulate_makespan(const Schedule& schedule, int n_processors);

/// Exact optimum by subset DP; the oracle side of the Graham-bound check.
/// Throws if the instance exceeds 12 tiles or 4 processors.
double brute_force_optimal_makespan(std::span<const double> costs, int n_processors);

struct ReductionEvent {
    std::int64_t batch = 0;
    std::int64_t head = 0;
    std::int64_t q_block = 0;
    std::int64_t kv_block = 0;
    double time = 0.0;
};

struct LockSimResult {
    double makespan = 0.0;
    std::vector<double> per_cta_stall; // indexed by launch order
    std::int64_t first_write_stalls = 0;
    std::vector<ReductionEvent> reduction_order;
};

struct LockSimOptions {
    double per_iter_cycles = 1.0;
    double lock_fence_cycles = 0.0; // cost of the fenced reduction itself
};

/// Deterministic-backward lock simulation: one CTA per KV block serializes
/// its dQ reductions through per-query-block semaphores in the policy's
/// predefined order. Spt launches KV blocks descending, walks query blocks
/// up from the diagonal and orders each tile's reductions by descending KV
/// block, which keeps every CTA's first write stall-free.
LockSimResult simulate_dq_locks(const WorktileGrid& grid, Policy policy, int n_processors,
                                const LockSimOptions& opts = {});

std::string schedule_to_json(const Schedule& schedule);
std::string lock_sim_to_json(const LockSimResult& result);

} // namespace attnlab::sched
