#include "attnlab/pipeline.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <unordered_map>

#include <json.hpp>

#include "attnlab/roofline.hpp"

namespace attnlab::pipeline {

const char* to_string(PipeResource r) {
    switch (r) {
        case PipeResource::TensorCore: return "tensor-core";
        case PipeResource::SmemPort: return "smem-port";
        case PipeResource::Mufu: return "mufu";
        case PipeResource::Fma: return "fma";
        case PipeResource::Dsmem: return "dsmem";
        case PipeResource::TmaLoad: return "tma-load";
    }
    return "?";
}

Pipeline build_fwd_pipeline(const TileConfig& tile, const HardwareProfile& hw,
                            double exp_fraction, const FwdPipelineOptions& opts) {
    if (exp_fraction < 0.0 || exp_fraction > 1.0) {
        throw std::invalid_argument("exp_fraction must lie in [0,1]");
    }
    const double mn = static_cast<double>(tile.m) * static_cast<double>(tile.n);
    const double qk_cycles =
        2.0 * mn * static_cast<double>(tile.d) / static_cast<double>(hw.mma_flops_per_clk);
    const double pv_cycles = qk_cycles;
    const double mufu_cycles = (1.0 - exp_fraction) * mn / static_cast<double>(hw.mufu_exp_per_clk);
    const double fma_exp_cycles =
        exp_fraction * mn * opts.cost_per_emulated_exp / static_cast<double>(hw.fma_per_clk);
    const double correction_cycles =
        opts.correction_on_fma
            ? static_cast<double>(tile.m) * static_cast<double>(tile.d) /
                  static_cast<double>(hw.fma_per_clk)
            : 0.0;
    const double smem_cycles =
        static_cast<double>(roofline::fwd_roofline(tile, hw).t_smem_mma_operands);

    Pipeline pipe;
    pipe.beats = 2; // ping-pong: two output tiles advance per period

    const char* tiles[2] = {"hi", "lo"};
    for (int t = 0; t < 2; ++t) {
        const std::string s = tiles[t];
        const std::string peer = tiles[1 - t];
        pipe.tasks.push_back({"load_kv_" + s, PipeResource::TmaLoad, 0.0, {}});
        pipe.tasks.push_back(
            {"qk_mma_" + s,
             PipeResource::TensorCore,
             qk_cycles,
             {{"load_kv_" + s, 0, "scores need the K tile staged"},
              {"pv_mma_" + s, 1, "the score accumulator block is reused once P is consumed"}}});
        pipe.tasks.push_back({"smem_operands_" + s,
                              PipeResource::SmemPort,
                              smem_cycles,
                              {{"load_kv_" + s, 0, "operand reads follow the stage-in"}}});
        // the two softmax critical sections alternate: lo runs after hi in
        // the same period, hi waits for the previous period's lo
        std::vector<TaskDep> mufu_deps = {{"qk_mma_" + s, 0, "exponential reads the score tile"}};
        mufu_deps.push_back(t == 0
                                ? TaskDep{"exp_mufu_lo", 1, "softmax critical sections alternate"}
                                : TaskDep{"exp_mufu_hi", 0, "softmax critical sections alternate"});
        pipe.tasks.push_back({"exp_mufu_" + s, PipeResource::Mufu, mufu_cycles, mufu_deps});
        pipe.tasks.push_back({"exp_fma_" + s,
                              PipeResource::Fma,
                              fma_exp_cycles,
                              {{"qk_mma_" + s, 0, "emulated share reads the same score tile"}}});
        pipe.tasks.push_back({"p_store_major_" + s,
                              PipeResource::Fma,
                              0.0,
                              {{"exp_mufu_" + s, 0, "first three quarters of P stored once"},
                               {"exp_fma_" + s, 0, "emulated entries land in the same store"}}});
        pipe.tasks.push_back({"p_store_tail_" + s,
                              PipeResource::Fma,
                              0.0,
                              {{"p_store_major_" + s, 0, "last quarter stored separately"}}});
        pipe.tasks.push_back({"pv_mma_" + s,
                              PipeResource::TensorCore,
                              pv_cycles,
                              {{"p_store_major_" + s, 0, "PV starts on the staged P chunks"},
                               {"p_store_tail_" + s, 0, "and completes with the tail"}}});
        pipe.tasks.push_back({"correction_" + s,
                              PipeResource::Fma,
                              correction_cycles,
                              {{"exp_mufu_" + s, 0, "rescale factor comes from the row stats"}}});
        (void)peer;
    }
    return pipe;
}

Pipeline build_bwd_pipeline(const TileConfig& tile, const HardwareProfile& hw, CtaMode cta) {
    TileConfig t = tile;
    t.cta = cta;
    const auto rl = roofline::bwd_roofline(t, hw);
    const std::int64_t rows = cta == CtaMode::OneCta ? tile.m : tile.m / 2;
    const double mma_cycles = 2.0 * static_cast<double>(rows) * static_cast<double>(tile.n) *
                              static_cast<double>(tile.d) /
                              static_cast<double>(hw.mma_flops_per_clk);
    const double exp_cycles = static_cast<double>(rl.t_exp);
    const double ds_cycles = static_cast<double>(rows) * static_cast<double>(tile.n) /
                             static_cast<double>(hw.fma_per_clk);

    Pipeline pipe;
    pipe.beats = 1;
    auto add = [&](std::string id, PipeResource res, double dur, std::vector<TaskDep> deps) {
        pipe.tasks.push_back({std::move(id), res, dur, std::move(deps)});
    };

    add("s_mma", PipeResource::TensorCore, mma_cycles,
        {{"dv_mma", 1, "S overwrites the block it shares with P once dV consumed it"},
         {"ds_elem", 1, "and once dS took what it needed from P"}});
    add("softmax_s", PipeResource::Mufu, exp_cycles,
        {{"s_mma", 0, "exponential reads the recomputed scores"}});
    add("dv_mma", PipeResource::TensorCore, mma_cycles,
        {{"softmax_s", 0, "dV consumes the fresh P tile"}});
    add("ds_elem", PipeResource::Fma, ds_cycles,
        {{"softmax_s", 0, "dS needs P"}, {"dp_mma", 0, "and dP"}});
    add("smem_ds_write", PipeResource::SmemPort, static_cast<double>(rl.t_smem_ds_write),
        {{"ds_elem", 0, "dS spills to shared memory in bf16"}});
    add("smem_operands", PipeResource::SmemPort, static_cast<double>(rl.t_smem_mma_operands), {});
    // dQ/dK run one tile behind so they overlap the next softmax
    if (cta == CtaMode::OneCta) {
        add("dp_mma", PipeResource::TensorCore, mma_cycles,
            {{"dq_mma", 1, "dP reuses the accumulator block shared with dS and dQ"}});
        add("dq_mma", PipeResource::TensorCore, mma_cycles,
            {{"smem_ds_write", 1, "dQ reads the previous tile's dS from shared memory"}});
    } else {
        add("dp_mma", PipeResource::TensorCore, mma_cycles,
            {{"ds_elem", 1, "dP reuses the accumulator block once the previous dS is out"}});
        add("dsmem_exchange", PipeResource::Dsmem, static_cast<double>(rl.t_smem_ds_dsmem),
            {{"smem_ds_write", 0, "peer CTAs swap dS halves over the cluster"}});
        add("dq_mma", PipeResource::TensorCore, mma_cycles,
            {{"dsmem_exchange", 1, "dQ consumes the pair-exchanged dS"},
             {"dp_mma", 0, "current tile's dP runs before the previous tile's dQ"}});
    }
    add("dk_mma", PipeResource::TensorCore, mma_cycles,
        {{"ds_elem", 1, "dK reads the previous tile's dS from tensor memory"}});
    add("smem_dq_rw", PipeResource::SmemPort, static_cast<double>(rl.t_smem_dq),
        {{"dq_mma", 0, "fp32 dQ spill and read-back for the reduction"}});
    return pipe;
}

namespace {

struct Graph {
    std::vector<double> dur;
    std::vector<std::array<int, 2>> edges; // from, to
    std::vector<int> lags;
};

Graph build_graph(const Pipeline& pipe) {
    std::unordered_map<std::string, int> index;
    for (std::size_t i = 0; i < pipe.tasks.size(); ++i) {
        if (!index.emplace(pipe.tasks[i].id, static_cast<int>(i)).second) {
            throw std::invalid_argument("duplicate task id: " + pipe.tasks[i].id);
        }
    }
    Graph g;
    g.dur.reserve(pipe.tasks.size());
    for (const auto& t : pipe.tasks) g.dur.push_back(t.duration_cycles);
    for (std::size_t i = 0; i < pipe.tasks.size(); ++i) {
        for (const auto& dep : pipe.tasks[i].deps) {
            const auto it = index.find(dep.task);
            if (it == index.end()) throw std::invalid_argument("unknown dep task: " + dep.task);
            if (dep.lag < 0) throw std::invalid_argument("negative dependency lag");
            g.edges.push_back({it->second, static_cast<int>(i)});
            g.lags.push_back(dep.lag);
        }
    }
    return g;
}

// reject cycles among lag-0 edges (they would deadlock a single iteration)
void check_zero_lag_acyclic(const Graph& g) {
    const int n = static_cast<int>(g.dur.size());
    std::vector<std::vector<int>> adj(static_cast<std::size_t>(n));
    for (std::size_t e = 0; e < g.edges.size(); ++e) {
        if (g.lags[e] == 0) adj[static_cast<std::size_t>(g.edges[e][0])].push_back(g.edges[e][1]);
    }
    std::vector<int> state(static_cast<std::size_t>(n), 0);
    std::function<void(int)> dfs = [&](int v) {
        state[static_cast<std::size_t>(v)] = 1;
        for (int w : adj[static_cast<std::size_t>(v)]) {
            if (state[static_cast<std::size_t>(w)] == 1) {
                throw std::invalid_argument("cyclic zero-lag dependency");
            }
            if (state[static_cast<std::size_t>(w)] == 0) dfs(w);
        }
        state[static_cast<std::size_t>(v)] = 2;
    };
    for (int v = 0; v < n; ++v) {
        if (state[static_cast<std::size_t>(v)] == 0) dfs(v);
    }
}

// longest positive cycle test: with edge weight dur(from) - T*lag, a positive
// cycle exists iff the period T is below the maximum cycle ratio
bool has_positive_cycle(const Graph& g, double period) {
    const int n = static_cast<int>(g.dur.size());
    std::vector<double> dist(static_cast<std::size_t>(n), 0.0);
    for (int it = 0; it < n; ++it) {
        bool relaxed = false;
        for (std::size_t e = 0; e < g.edges.size(); ++e) {
            const double w = g.dur[static_cast<std::size_t>(g.edges[e][0])] -
                             period * static_cast<double>(g.lags[e]);
            const double cand = dist[static_cast<std::size_t>(g.edges[e][0])] + w;
            if (cand > dist[static_cast<std::size_t>(g.edges[e][1])] + 1e-12) {
                dist[static_cast<std::size_t>(g.edges[e][1])] = cand;
                relaxed = true;
            }
        }
        if (!relaxed) return false;
    }
    return true;
}

double max_cycle_ratio(const Graph& g) {
    double lo = 0.0, hi = 0.0;
    for (double d : g.dur) hi += d;
    if (hi <= 0.0) return 0.0;
    for (int it = 0; it < 64 && hi - lo > 1e-9 * std::max(1.0, hi); ++it) {
        const double mid = 0.5 * (lo + hi);
        if (has_positive_cycle(g, mid)) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    return hi;
}

} // namespace

SteadyState steady_state(const Pipeline& pipe) {
    if (pipe.tasks.empty()) throw std::invalid_argument("steady_state: empty pipeline");
    if (pipe.beats < 1) throw std::invalid_argument("steady_state: beats must be >= 1");
    const Graph g = build_graph(pipe);
    check_zero_lag_acyclic(g);

    SteadyState ss;
    for (PipeResource r : {PipeResource::TensorCore, PipeResource::SmemPort, PipeResource::Mufu,
                           PipeResource::Fma, PipeResource::Dsmem, PipeResource::TmaLoad}) {
        ss.busy[r] = 0.0;
    }
    for (const auto& t : pipe.tasks) ss.busy[t.resource] += t.duration_cycles;
    for (auto& [r, b] : ss.busy) b /= static_cast<double>(pipe.beats);

    // DSMEM transfers land on the shared-memory ports of the pair
    double resource_bound = 0.0;
    PipeResource binding = PipeResource::TensorCore;
    for (const auto& [r, b] : ss.busy) {
        double eff = b;
        if (r == PipeResource::SmemPort) eff += ss.busy[PipeResource::Dsmem];
        if (r == PipeResource::Dsmem) continue;
        if (eff > resource_bound) {
            resource_bound = eff;
            binding = r;
        }
    }

    ss.critical_cycle_ratio = max_cycle_ratio(g) / static_cast<double>(pipe.beats);
    ss.cycles_per_iter = std::max(resource_bound, ss.critical_cycle_ratio);
    ss.dependency_bound = ss.critical_cycle_ratio > resource_bound + 1e-9;
    ss.bottleneck = binding;
    for (const auto& [r, b] : ss.busy) {
        ss.utilization[r] = ss.cycles_per_iter > 0.0 ? b / ss.cycles_per_iter : 0.0;
    }
    return ss;
}

FractionSearch optimal_exp_fraction(const TileConfig& tile, const HardwareProfile& hw,
                                    double cost_per_emulated_exp,
                                    const FwdPipelineOptions& opts) {
    if (cost_per_emulated_exp < 1.0) {
        throw std::invalid_argument("cost_per_emulated_exp must be >= 1");
    }
    FwdPipelineOptions o = opts;
    o.cost_per_emulated_exp = cost_per_emulated_exp;
    FractionSearch out;
    out.cycles = std::numeric_limits<double>::infinity();
    for (int i = 0; i <= 100; ++i) {
        const double f = static_cast<double>(i) / 100.0;
        const auto ss = steady_state(build_fwd_pipeline(tile, hw, f, o));
        out.curve.emplace_back(f, ss.cycles_per_iter);
        if (ss.cycles_per_iter < out.cycles - 1e-12) {
            out.cycles = ss.cycles_per_iter;
            out.f_star = f;
        }
    }
    return out;
}

namespace {

struct AliasSets {
    std::vector<int> parent;
    int find(int v) { return parent[static_cast<std::size_t>(v)] == v ? v : parent[static_cast<std::size_t>(v)] = find(parent[static_cast<std::size_t>(v)]); }
    void unite(int a, int b) { parent[static_cast<std::size_t>(find(a))] = find(b); }
};

} // namespace

std::optional<TmemConflict> validate_tmem_plan(const TmemPlan& plan) {
    const auto& allocs = plan.allocations;
    std::unordered_map<std::string, int> index;
    for (std::size_t i = 0; i < allocs.size(); ++i) {
        index[allocs[i].name] = static_cast<int>(i);
    }

    for (const auto& a : allocs) {
        if (a.columns <= 0 || a.columns % kTmemGranuleColumns != 0) {
            return TmemConflict{"granularity", {a.name}, a.first_use, a.last_use,
                                "column counts must be positive multiples of 32"};
        }
        if (a.first_use > a.last_use) {
            return TmemConflict{"lifetime", {a.name}, a.first_use, a.last_use,
                                "lifetime ends before it begins"};
        }
        if (!a.aliases_with.empty() && !index.count(a.aliases_with)) {
            return TmemConflict{"unknown-alias", {a.name, a.aliases_with}, a.first_use,
                                a.last_use, "alias target does not exist"};
        }
    }

    AliasSets sets;
    sets.parent.resize(allocs.size());
    for (std::size_t i = 0; i < allocs.size(); ++i) sets.parent[i] = static_cast<int>(i);
    for (std::size_t i = 0; i < allocs.size(); ++i) {
        if (!allocs[i].aliases_with.empty()) {
            sets.unite(static_cast<int>(i), index[allocs[i].aliases_with]);
        }
    }
    for (std::size_t i = 0; i < allocs.size(); ++i) {
        for (std::size_t j = i + 1; j < allocs.size(); ++j) {
            if (sets.find(static_cast<int>(i)) != sets.find(static_cast<int>(j))) continue;
            const bool overlap = allocs[i].first_use <= allocs[j].last_use &&
                                 allocs[j].first_use <= allocs[i].last_use;
            if (overlap) {
                return TmemConflict{"alias-overlap",
                                    {allocs[i].name, allocs[j].name},
                                    std::max(allocs[i].first_use, allocs[j].first_use),
                                    std::min(allocs[i].last_use, allocs[j].last_use),
                                    "aliased allocations are live at the same time"};
            }
        }
    }

    // capacity sweep over every timeline point where liveness can change
    std::vector<int> times;
    for (const auto& a : allocs) {
        times.push_back(a.first_use);
        times.push_back(a.last_use);
    }
    std::sort(times.begin(), times.end());
    times.erase(std::unique(times.begin(), times.end()), times.end());
    for (int t : times) {
        int live_cols = 0;
        std::vector<std::string> live;
        for (const auto& a : allocs) {
            if (a.first_use <= t && t <= a.last_use) {
                live_cols += a.columns;
                live.push_back(a.name);
            }
        }
        if (live_cols > kTmemColumns) {
            return TmemConflict{"capacity", live, t, t,
                                std::to_string(live_cols) + " columns live, capacity is " +
                                    std::to_string(kTmemColumns)};
        }
    }
    return std::nullopt;
}

TmemPlan forward_tmem_plan() {
    // One 128x128 fp32 accumulator spans 128 columns; the bf16 P tile of the
    // same shape needs 64 and reuses the score tile's storage after the
    // softmax consumed it. 32 columns per tile carry the rescale stats.
    TmemPlan plan;
    plan.allocations = {
        {"o_hi", 128, 0, 9, ""},
        {"o_lo", 128, 0, 9, ""},
        {"s_hi", 128, 0, 2, ""},
        {"p_hi", 64, 3, 5, "s_hi"},
        {"s_lo", 128, 1, 4, ""},
        {"p_lo", 64, 5, 7, "s_lo"},
        {"stats_hi", 32, 3, 9, ""},
        {"stats_lo", 32, 5, 9, ""},
    };
    return plan;
}

TmemPlan backward_tmem_plan() {
    TmemPlan plan;
    plan.allocations = {
        {"dv", 128, 0, 9, ""},
        {"dk", 128, 0, 9, ""},
        {"s", 128, 0, 1, ""},
        {"p", 64, 2, 4, "s"},
        {"dp", 128, 2, 3, ""},
        {"ds", 128, 4, 5, "dp"},
        {"dq", 128, 6, 7, "ds"},
    };
    return plan;
}

RegCheck validate_reg_budget(const RegBudget& budget, int regs_per_thread) {
    if (budget.regs_input < 0 || budget.regs_output < 0 || budget.regs_misc < 0) {
        throw std::invalid_argument("register counts cannot be negative");
    }
    const int total = budget.regs_input + budget.regs_output + budget.regs_misc;
    RegCheck c;
    c.ok = total <= regs_per_thread;
    c.overflow = c.ok ? 0 : total - regs_per_thread;
    return c;
}

std::string pipeline_to_json(const Pipeline& pipe) {
    nlohmann::json j;
    j["beats"] = pipe.beats;
    auto& nodes = j["nodes"];
    nodes = nlohmann::json::array();
    auto& edges = j["edges"];
    edges = nlohmann::json::array();
    for (const auto& t : pipe.tasks) {
        nodes.push_back({{"id", t.id},
                         {"resource", to_string(t.resource)},
                         {"duration_cycles", t.duration_cycles}});
        for (const auto& d : t.deps) {
            edges.push_back(
                {{"from", d.task}, {"to", t.id}, {"lag", d.lag}, {"note", d.note}});
        }
    }
    return j.dump(2);
}

std::string steady_state_to_json(const SteadyState& ss) {
    nlohmann::json j;
    j["cycles_per_iter"] = ss.cycles_per_iter;
    j["bottleneck"] = to_string(ss.bottleneck);
    j["dependency_bound"] = ss.dependency_bound;
    j["critical_cycle_ratio"] = ss.critical_cycle_ratio;
    for (const auto& [r, b] : ss.busy) j["busy"][to_string(r)] = b;
    for (const auto& [r, u] : ss.utilization) j["utilization"][to_string(r)] = u;
    return j.dump(2);
}

} // namespace attnlab::pipeline
