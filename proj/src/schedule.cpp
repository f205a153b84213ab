#include "attnlab/schedule.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <queue>
#include <stdexcept>
#include <tuple>

#include <json.hpp>

#include "attnlab/util.hpp"

namespace attnlab::sched {

WorktileGrid WorktileGrid::uniform(std::int64_t n_mblocks, std::int64_t n_heads,
                                   std::int64_t n_batches, bool causal, std::int64_t tile_m,
                                   std::int64_t tile_n, std::int64_t heads_per_kv_head) {
    WorktileGrid g;
    g.n_mblocks = n_mblocks;
    g.n_heads = n_heads;
    g.n_batches = n_batches;
    g.heads_per_kv_head = heads_per_kv_head;
    g.causal = causal;
    g.tile_m = tile_m;
    g.tile_n = tile_n;
    g.seqlen_q.assign(static_cast<std::size_t>(n_batches), n_mblocks * tile_m);
    g.seqlen_kv = g.seqlen_q;
    g.validate();
    return g;
}

WorktileGrid WorktileGrid::from_cu_seqlens(std::span<const std::int32_t> cu_q,
                                           std::span<const std::int32_t> cu_kv,
                                           std::int64_t n_heads, bool causal,
                                           std::int64_t tile_m, std::int64_t tile_n,
                                           std::int64_t heads_per_kv_head) {
    if (cu_q.size() < 2 || cu_q.size() != cu_kv.size()) {
        throw std::invalid_argument("cumulative seqlen arrays need n_batches + 1 entries");
    }
    WorktileGrid g;
    g.n_batches = static_cast<std::int64_t>(cu_q.size()) - 1;
    g.n_heads = n_heads;
    g.heads_per_kv_head = heads_per_kv_head;
    g.causal = causal;
    g.tile_m = tile_m;
    g.tile_n = tile_n;
    for (std::size_t b = 0; b + 1 < cu_q.size(); ++b) {
        if (cu_q[b + 1] < cu_q[b] || cu_kv[b + 1] < cu_kv[b]) {
            throw std::invalid_argument("cumulative seqlens must be non-decreasing");
        }
        g.seqlen_q.push_back(cu_q[b + 1] - cu_q[b]);
        g.seqlen_kv.push_back(cu_kv[b + 1] - cu_kv[b]);
    }
    g.n_mblocks = 0;
    for (std::int64_t b = 0; b < g.n_batches; ++b) {
        g.n_mblocks = std::max(g.n_mblocks, g.mblocks_of_batch(b));
    }
    g.validate();
    return g;
}

void WorktileGrid::validate() const {
    if (n_mblocks < 1 || n_heads < 1 || n_batches < 1) {
        throw std::invalid_argument("grid dimensions must be positive");
    }
    if (tile_m < 1 || tile_n < 1) throw std::invalid_argument("tile sizes must be positive");
    if (heads_per_kv_head < 1 || n_heads % heads_per_kv_head != 0) {
        throw std::invalid_argument("n_heads must be a multiple of heads_per_kv_head");
    }
    if (seqlen_q.size() != static_cast<std::size_t>(n_batches) ||
        seqlen_kv.size() != static_cast<std::size_t>(n_batches)) {
        throw std::invalid_argument("per-batch seqlen lists must have n_batches entries");
    }
    for (std::int64_t b = 0; b < n_batches; ++b) {
        if (seqlen_q[static_cast<std::size_t>(b)] < 1 || seqlen_kv[static_cast<std::size_t>(b)] < 1) {
            throw std::invalid_argument("sequence lengths must be positive");
        }
        if (mblocks_of_batch(b) > n_mblocks) {
            throw std::invalid_argument("n_mblocks is smaller than a batch needs");
        }
    }
}

std::int64_t WorktileGrid::mblocks_of_batch(std::int64_t b) const {
    return ceil_div(seqlen_q[static_cast<std::size_t>(b)], tile_m);
}

std::int64_t WorktileGrid::kv_blocks_of_batch(std::int64_t b) const {
    return ceil_div(seqlen_kv[static_cast<std::size_t>(b)], tile_n);
}

std::int64_t WorktileGrid::total_tiles() const {
    std::int64_t total = 0;
    for (std::int64_t b = 0; b < n_batches; ++b) total += mblocks_of_batch(b) * n_heads;
    return total;
}

const char* to_string(Policy p) {
    switch (p) {
        case Policy::Naive: return "naive";
        case Policy::LptCausal: return "lpt-causal";
        case Policy::LptVarlen: return "lpt-varlen";
        case Policy::Spt: return "spt";
    }
    return "?";
}

Policy policy_from_string(const std::string& s) {
    if (s == "naive") return Policy::Naive;
    if (s == "lpt-causal") return Policy::LptCausal;
    if (s == "lpt-varlen") return Policy::LptVarlen;
    if (s == "spt") return Policy::Spt;
    throw std::invalid_argument("unknown policy: " + s);
}

std::int64_t tile_kv_iterations(const TileCoord& coord, const WorktileGrid& grid) {
    if (coord.batch < 0 || coord.batch >= grid.n_batches || coord.head < 0 ||
        coord.head >= grid.n_heads || coord.mblock < 0 ||
        coord.mblock >= grid.mblocks_of_batch(coord.batch)) {
        throw std::out_of_range("tile coordinate outside the grid");
    }
    const std::int64_t kv_total = grid.kv_blocks_of_batch(coord.batch);
    if (!grid.causal) return kv_total;
    const std::int64_t offset = grid.seqlen_kv[static_cast<std::size_t>(coord.batch)] -
                                grid.seqlen_q[static_cast<std::size_t>(coord.batch)];
    const std::int64_t visible = (coord.mblock + 1) * grid.tile_m + offset;
    return std::clamp<std::int64_t>(ceil_div(std::max<std::int64_t>(visible, 1), grid.tile_n), 1,
                                    kv_total);
}

double tile_cost(const TileCoord& coord, const WorktileGrid& grid, double per_iter_cycles) {
    return static_cast<double>(tile_kv_iterations(coord, grid)) * per_iter_cycles;
}

namespace {

Schedule finish_schedule(std::vector<TileCoord> order, const WorktileGrid& grid,
                         double per_iter_cycles, Policy policy) {
    Schedule s;
    s.policy = policy;
    s.costs.reserve(order.size());
    for (const auto& c : order) s.costs.push_back(tile_cost(c, grid, per_iter_cycles));
    s.order = std::move(order);
    return s;
}

} // namespace

Schedule order_naive(const WorktileGrid& grid, double per_iter_cycles) {
    grid.validate();
    std::vector<TileCoord> order;
    order.reserve(static_cast<std::size_t>(grid.total_tiles()));
    for (std::int64_t b = 0; b < grid.n_batches; ++b) {
        for (std::int64_t h = 0; h < grid.n_heads; ++h) {
            for (std::int64_t m = 0; m < grid.mblocks_of_batch(b); ++m) {
                order.push_back({m, h, b});
            }
        }
    }
    return finish_schedule(std::move(order), grid, per_iter_cycles, Policy::Naive);
}

Schedule order_lpt_causal(const WorktileGrid& grid, std::int64_t l2_bytes,
                          std::int64_t kv_bytes_per_head, double per_iter_cycles) {
    grid.validate();
    if (kv_bytes_per_head <= 0) throw std::invalid_argument("kv_bytes_per_head must be positive");
    const std::int64_t n_kv_heads = grid.n_heads / grid.heads_per_kv_head;
    // sections of KV heads whose combined KV footprint stays inside L2;
    // clamped to one head when even a single head overflows
    const std::int64_t section = std::max<std::int64_t>(1, l2_bytes / kv_bytes_per_head);

    std::vector<TileCoord> order;
    order.reserve(static_cast<std::size_t>(grid.total_tiles()));
    for (std::int64_t b = 0; b < grid.n_batches; ++b) {
        for (std::int64_t s0 = 0; s0 < n_kv_heads; s0 += section) {
            const std::int64_t s1 = std::min(s0 + section, n_kv_heads);
            for (std::int64_t m = grid.mblocks_of_batch(b) - 1; m >= 0; --m) {
                for (std::int64_t kvh = s0; kvh < s1; ++kvh) {
                    for (std::int64_t g = 0; g < grid.heads_per_kv_head; ++g) {
                        order.push_back({m, kvh * grid.heads_per_kv_head + g, b});
                    }
                }
            }
        }
    }
    return finish_schedule(std::move(order), grid, per_iter_cycles, Policy::LptCausal);
}

VarlenSchedule order_lpt_varlen(const WorktileGrid& grid, double per_iter_cycles) {
    grid.validate();
    std::vector<std::int32_t> batches(static_cast<std::size_t>(grid.n_batches));
    std::iota(batches.begin(), batches.end(), 0);
    std::vector<double> max_cost(static_cast<std::size_t>(grid.n_batches), 0.0);
    for (std::int64_t b = 0; b < grid.n_batches; ++b) {
        for (std::int64_t m = 0; m < grid.mblocks_of_batch(b); ++m) {
            max_cost[static_cast<std::size_t>(b)] =
                std::max(max_cost[static_cast<std::size_t>(b)],
                         tile_cost({m, 0, b}, grid, per_iter_cycles));
        }
    }
    std::stable_sort(batches.begin(), batches.end(), [&](std::int32_t a, std::int32_t b) {
        return max_cost[static_cast<std::size_t>(a)] > max_cost[static_cast<std::size_t>(b)];
    });

    std::vector<TileCoord> order;
    order.reserve(static_cast<std::size_t>(grid.total_tiles()));
    for (std::int32_t b : batches) {
        for (std::int64_t h = 0; h < grid.n_heads; ++h) {
            if (grid.causal) {
                for (std::int64_t m = grid.mblocks_of_batch(b) - 1; m >= 0; --m) {
                    order.push_back({m, h, b});
                }
            } else {
                for (std::int64_t m = 0; m < grid.mblocks_of_batch(b); ++m) {
                    order.push_back({m, h, b});
                }
            }
        }
    }
    VarlenSchedule out;
    out.schedule = finish_schedule(std::move(order), grid, per_iter_cycles, Policy::LptVarlen);
    out.virtual_to_actual = std::move(batches);
    return out;
}

MakespanResult simulate_makespan(const Schedule& schedule, int n_processors) {
    if (n_processors < 1) throw std::invalid_argument("n_processors must be >= 1");
    using Slot = std::pair<double, int>; // (free time, processor)
    std::priority_queue<Slot, std::vector<Slot>, std::greater<>> free_at;
    for (int p = 0; p < n_processors; ++p) free_at.push({0.0, p});
    MakespanResult out;
    out.per_processor_load.assign(static_cast<std::size_t>(n_processors), 0.0);
    for (double c : schedule.costs) {
        auto [t, p] = free_at.top();
        free_at.pop();
        t += c;
        out.per_processor_load[static_cast<std::size_t>(p)] += c;
        out.makespan = std::max(out.makespan, t);
        free_at.push({t, p});
    }
    return out;
}

double brute_force_optimal_makespan(std::span<const double> costs, int n_processors) {
    if (costs.size() > 12 || n_processors > 4 || n_processors < 1) {
        throw std::invalid_argument("brute force limited to 12 tiles and 4 processors");
    }
    const int n = static_cast<int>(costs.size());
    if (n == 0) return 0.0;
    const std::size_t full = (1u << n);
    std::vector<double> sum(full, 0.0);
    for (std::size_t mask = 1; mask < full; ++mask) {
        const int low = std::countr_zero(mask);
        sum[mask] = sum[mask & (mask - 1)] + costs[static_cast<std::size_t>(low)];
    }
    std::vector<double> best(sum); // one processor: makespan = subset sum
    for (int k = 2; k <= n_processors; ++k) {
        std::vector<double> next(full, 0.0);
        for (std::size_t mask = 0; mask < full; ++mask) {
            double v = best[mask]; // empty k-th processor
            for (std::size_t sub = mask; sub != 0; sub = (sub - 1) & mask) {
                v = std::min(v, std::max(sum[sub], best[mask ^ sub]));
            }
            next[mask] = v;
        }
        best = std::move(next);
    }
    return best[full - 1];
}

namespace {

struct Cta {
    std::int64_t batch = 0, head = 0, kv = 0;
    std::vector<std::int64_t> q_blocks; // traversal order
    std::size_t pos = 0;                // current reduction target
    double arrival = -1.0;              // when the pending reduction became ready
    double stall = 0.0;
    bool first_write_done = false;
    bool first_write_stalled = false;
};

// first query block with any unmasked entry against KV block `kv`
std::int64_t first_visible_qblock(const WorktileGrid& g, std::int64_t b, std::int64_t kv) {
    const std::int64_t off = g.seqlen_kv[static_cast<std::size_t>(b)] -
                             g.seqlen_q[static_cast<std::size_t>(b)];
    for (std::int64_t q = 0; q < g.mblocks_of_batch(b); ++q) {
        const std::int64_t i_max =
            std::min((q + 1) * g.tile_m, g.seqlen_q[static_cast<std::size_t>(b)]) - 1;
        if (kv * g.tile_n <= i_max + off) return q;
    }
    return g.mblocks_of_batch(b); // contributes nowhere
}

} // namespace

LockSimResult simulate_dq_locks(const WorktileGrid& grid, Policy policy, int n_processors,
                                const LockSimOptions& opts) {
    grid.validate();
    if (n_processors < 1) throw std::invalid_argument("n_processors must be >= 1");
    if (policy == Policy::Spt && !grid.causal) {
        throw std::invalid_argument("the SPT lock schedule is defined for causal grids");
    }

    // CTAs in launch order: batches, heads, then KV blocks in the policy's
    // direction (descending puts the long diagonal-owners first)
    std::vector<Cta> ctas;
    for (std::int64_t b = 0; b < grid.n_batches; ++b) {
        for (std::int64_t h = 0; h < grid.n_heads; ++h) {
            const std::int64_t nkv = grid.kv_blocks_of_batch(b);
            for (std::int64_t i = 0; i < nkv; ++i) {
                const std::int64_t kv =
                    (policy == Policy::Naive || policy == Policy::LptVarlen) ? i : nkv - 1 - i;
                Cta c;
                c.batch = b;
                c.head = h;
                c.kv = kv;
                const std::int64_t q0 = grid.causal ? first_visible_qblock(grid, b, kv) : 0;
                for (std::int64_t q = q0; q < grid.mblocks_of_batch(b); ++q) {
                    c.q_blocks.push_back(q);
                }
                if (!c.q_blocks.empty()) ctas.push_back(std::move(c));
            }
        }
    }

    // per-dQ-tile semaphores; each contributor holds a fixed sequence number
    struct Sem {
        std::int64_t counter = 0;
        double ready_time = 0.0;
        std::map<std::int64_t, std::size_t> waiting; // seq -> parked cta
    };
    using TileKey = std::tuple<std::int64_t, std::int64_t, std::int64_t>;
    std::map<TileKey, Sem> sems;
    std::map<std::tuple<std::int64_t, std::int64_t, std::int64_t, std::int64_t>, std::int64_t>
        seq_of;
    {
        std::map<TileKey, std::vector<std::int64_t>> contributors;
        for (const auto& c : ctas) {
            for (std::int64_t q : c.q_blocks) contributors[{c.batch, c.head, q}].push_back(c.kv);
        }
        for (auto& [key, kvs] : contributors) {
            // Spt orders each tile's reductions by descending KV block, so
            // the diagonal owner (whose first write this is) goes first
            if (policy == Policy::Spt) {
                std::sort(kvs.begin(), kvs.end(), std::greater<>());
            } else {
                std::sort(kvs.begin(), kvs.end());
            }
            for (std::size_t s = 0; s < kvs.size(); ++s) {
                seq_of[{std::get<0>(key), std::get<1>(key), std::get<2>(key), kvs[s]}] =
                    static_cast<std::int64_t>(s);
            }
            sems[key];
        }
    }

    LockSimResult result;
    result.per_cta_stall.assign(ctas.size(), 0.0);

    using Event = std::pair<double, std::size_t>; // reduction attempt: (time, cta)
    std::priority_queue<Event, std::vector<Event>, std::greater<>> events;
    std::size_t next_launch = 0;
    for (int p = 0; p < n_processors && next_launch < ctas.size(); ++p, ++next_launch) {
        events.push({opts.per_iter_cycles, next_launch});
    }

    while (!events.empty()) {
        const auto [t, ci] = events.top();
        events.pop();
        Cta& c = ctas[ci];
        const std::int64_t q = c.q_blocks[c.pos];
        Sem& sem = sems[{c.batch, c.head, q}];
        const std::int64_t my_seq = seq_of[{c.batch, c.head, q, c.kv}];
        if (c.arrival < 0.0) c.arrival = t;
        if (sem.counter != my_seq) {
            sem.waiting[my_seq] = ci; // park until predecessors release
            continue;
        }
        const double start = std::max(t, sem.ready_time);
        const double wait = start - c.arrival;
        c.stall += wait;
        if (!c.first_write_done) {
            c.first_write_done = true;
            c.first_write_stalled = wait > 0.0;
        }
        const double release = start + opts.lock_fence_cycles;
        sem.counter += 1;
        sem.ready_time = release;
        result.reduction_order.push_back({c.batch, c.head, q, c.kv, release});
        if (auto it = sem.waiting.find(sem.counter); it != sem.waiting.end()) {
            events.push({release, it->second});
            sem.waiting.erase(it);
        }
        c.pos += 1;
        c.arrival = -1.0;
        if (c.pos >= c.q_blocks.size()) {
            result.makespan = std::max(result.makespan, release);
            if (next_launch < ctas.size()) {
                events.push({release + opts.per_iter_cycles, next_launch});
                ++next_launch;
            }
        } else {
            events.push({release + opts.per_iter_cycles, ci});
        }
    }

    for (std::size_t i = 0; i < ctas.size(); ++i) {
        result.per_cta_stall[i] = ctas[i].stall;
        if (ctas[i].first_write_stalled) result.first_write_stalls += 1;
    }
    return result;
}

std::string schedule_to_json(const Schedule& schedule) {
    nlohmann::json j;
    j["policy"] = to_string(schedule.policy);
    auto& tiles = j["tiles"];
    tiles = nlohmann::json::array();
    for (std::size_t i = 0; i < schedule.order.size(); ++i) {
        tiles.push_back({{"mblock", schedule.order[i].mblock},
                         {"head", schedule.order[i].head},
                         {"batch", schedule.order[i].batch},
                         {"cost", schedule.costs[i]}});
    }
    return j.dump(2);
}

std::string lock_sim_to_json(const LockSimResult& result) {
    nlohmann::json j;
    j["makespan"] = result.makespan;
    j["first_write_stalls"] = result.first_write_stalls;
    j["per_cta_stall"] = result.per_cta_stall;
    auto& red = j["reduction_order"];
    red = nlohmann::json::array();
    for (const auto& e : result.reduction_order) {
        red.push_back({{"batch", e.batch},
                       {"head", e.head},
                       {"q_block", e.q_block},
                       {"kv_block", e.kv_block},
                       {"time", e.time}});
    }
    return j.dump(2);
}

} // namespace attnlab::sched
