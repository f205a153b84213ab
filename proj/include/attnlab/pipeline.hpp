#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "attnlab/hardware.hpp"

namespace attnlab::pipeline {

enum class PipeResource { TensorCore, SmemPort, Mufu, Fma, Dsmem, TmaLoad };

const char* to_string(PipeResource r);

struct TaskDep {
    std::string task;
    int lag = 0; // 0 = same iteration, k >= 1 = k iterations earlier
    std::string note;
};

struct PipelineTask {
    std::string id;
    PipeResource resource = PipeResource::TensorCore;
    double duration_cycles = 0.0;
    std::vector<TaskDep> deps;
};

/// One steady-state period of a software pipeline. `beats` is how many tile
/// iterations the period covers (the forward ping-pong advances two output
/// tiles per period).
struct Pipeline {
    std::vector<PipelineTask> tasks;
    int beats = 1;
};

struct FwdPipelineOptions {
    double cost_per_emulated_exp = 7.0; // FMA-class ops per emulated exp2
    // Whether the correction warpgroup's rescale work shares the FMA budget
    // with emulated exponentials; off models it on an unaccounted unit.
    bool correction_on_fma = true;
};

/// Two-output-tile ping-pong forward pipeline: per tile, score MMA, the
/// softmax exponential split across MUFU and FMA at `exp_fraction`, the P
/// store staged in 3/4 + 1/4 chunks, the PV MMA and the decoupled
/// correction. The two softmax critical sections alternate.
Pipeline build_fwd_pipeline(const TileConfig& tile, const HardwareProfile& hw,
                            double exp_fraction, const FwdPipelineOptions& opts = {});

/// Backward pipeline: five MMAs plus softmax and dS elementwise work, with
/// the dQ/dK MMAs carrying the previous iteration's tile so they overlap the
/// current softmax. TwoCta adds the peer dS exchange and reorders dQ behind
/// the current tile's dP.
Pipeline build_bwd_pipeline(const TileConfig& tile, const HardwareProfile& hw, CtaMode cta);

struct SteadyState {
    double cycles_per_iter = 0.0;
    std::map<PipeResource, double> busy;        // per iteration
    std::map<PipeResource, double> utilization; // busy / cycles_per_iter
    PipeResource bottleneck = PipeResource::TensorCore;
    bool dependency_bound = false; // a cross-iteration cycle, not a resource, binds
    double critical_cycle_ratio = 0.0;
};

/// Throughput bound of the pipeline: the larger of the busiest resource and
/// the maximum dependency-cycle ratio (cycle duration over total lag). DSMEM
/// traffic rides the shared-memory ports, so it is folded into SmemPort for
/// the bound. Throws on a zero-lag dependency cycle.
SteadyState steady_state(const Pipeline& pipe);

struct FractionSearch {
    double f_star = 0.0;
    double cycles = 0.0;
    std::vector<std::pair<double, double>> curve; // (fraction, cycles/iter)
};

/// Grid search over the emulated-exponential fraction f in {0, 0.01, .., 1},
/// smallest f wins ties.
FractionSearch optimal_exp_fraction(const TileConfig& tile, const HardwareProfile& hw,
                                    double cost_per_emulated_exp,
                                    const FwdPipelineOptions& opts = {});

// --- tensor memory ---------------------------------------------------------

constexpr int kTmemColumns = 512;        // 256 KB at 512 bytes per column
constexpr int kTmemGranuleColumns = 32;  // allocation granularity

struct TmemAllocation {
    std::string name;
    int columns = 0;
    int first_use = 0;
    int last_use = 0;
    std::string aliases_with; // empty = dedicated storage
};

struct TmemPlan {
    std::vector<TmemAllocation> allocations;
};

struct TmemConflict {
    std::string kind; // "granularity", "lifetime", "unknown-alias", "alias-overlap", "capacity"
    std::vector<std::string> names;
    int time_begin = 0;
    int time_end = 0;
    std::string detail;
};

/// Checks granularity, alias liveness (aliased allocations share storage and
/// must never be live together) and the 512-column capacity at every point
/// of the plan's timeline. Returns the first conflict found, or nothing.
std::optional<TmemConflict> validate_tmem_plan(const TmemPlan& plan);

/// Canonical forward plan: two output tiles, two score tiles whose storage
/// is reused by the bf16 P tiles, and small stats windows for the
/// correction warpgroup.
TmemPlan forward_tmem_plan();

/// Canonical backward plan: S/P share one accumulator block, dP/dS/dQ share
/// the other, dV and dK keep dedicated accumulators.
TmemPlan backward_tmem_plan();

// --- register budgets -------------------------------------------------------

enum class WarpgroupRole { Softmax, Correction, MmaTma };

struct RegBudget {
    WarpgroupRole role = WarpgroupRole::Softmax;
    int regs_input = 0;
    int regs_output = 0;
    int regs_misc = 0;
};

struct RegCheck {
    bool ok = true;
    int overflow = 0; // registers beyond the per-thread cap
};

RegCheck validate_reg_budget(const RegBudget& budget, int regs_per_thread = 256);

std::string pipeline_to_json(const Pipeline& pipe);
std::string steady_state_to_json(const SteadyState& ss);

} // namespace attnlab::pipeline
