#pragma once

#include <span>
#include <string>
#include <vector>

#include "attnlab/hardware.hpp"

namespace attnlab::roofline {

enum class Pass { Forward, Backward };
enum class Resource { Mma, Smem, Exp };

const char* to_string(Resource r);
const char* to_string(Pass p);

/// Per-resource cycle counts for one kernel iteration. Shared-memory traffic
/// is split the way the backward analysis needs; the forward pass leaves the
/// dS/dQ fields at zero.
struct CycleBreakdown {
    std::int64_t t_mma = 0;
    std::int64_t t_smem_mma_operands = 0;
    std::int64_t t_smem_ds_write = 0;
    std::int64_t t_smem_ds_dsmem = 0;
    std::int64_t t_smem_dq = 0;
    std::int64_t t_smem_total = 0;
    std::int64_t t_exp = 0;
    Resource bottleneck = Resource::Mma; // argmax, ties resolved toward MMA
};

/// Forward iteration: QK^T and PV MMAs, operand traffic with 128-wide
/// instruction-tile re-reads, and one exponential per score entry.
CycleBreakdown fwd_roofline(const TileConfig& tile, const HardwareProfile& hw);

/// Backward iteration: five MMAs, operand traffic, the bf16 dS spill, and
/// the fp32 dQ write + read-back. TwoCta reports the per-CTA view of an
/// M-row pair: operand staging shared across the pair, dQ traffic halved,
/// plus the calibrated DSMEM exchange term. Throws on TwoCta with odd M.
CycleBreakdown bwd_roofline(const TileConfig& tile, const HardwareProfile& hw);

struct BottleneckRow {
    TileConfig tile;
    Pass pass = Pass::Forward;
    CycleBreakdown cycles;
    double excess_over_mma_pct = 0.0;   // (max - t_mma) / t_mma * 100
    std::vector<Resource> co_bottlenecks; // every resource at the max
};

std::vector<BottleneckRow> bottleneck_report(std::span<const TileConfig> tiles,
                                             const HardwareProfile& hw, Pass pass);

std::string breakdown_csv_header();
std::string breakdown_csv_row(const TileConfig& tile, Pass pass, const CycleBreakdown& c);
std::string report_to_json(std::span<const BottleneckRow> rows, const HardwareProfile& hw);

} // namespace attnlab::roofline
