#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace attnlab {

enum class CtaMode { OneCta, TwoCta };

/// Per-SM, per-clock throughputs and capacities of a modeled GPU generation.
struct HardwareProfile {
    std::string name = "b200-class";
    std::int64_t mma_flops_per_clk = 8192; // bf16 tensor-core ops / clock / SM
    std::int64_t smem_bytes_per_clk = 128; // shared memory read bandwidth
    std::int64_t mufu_exp_per_clk = 16;    // transcendental unit throughput
    std::int64_t fma_per_clk = 128;        // fp32 FMA throughput
    std::int64_t tmem_bytes = 262144;      // tensor memory per SM
    int regs_per_thread = 256;
    double clock_mhz = 1850.0;
    int n_sms = 148;
    std::int64_t l2_bytes = 132120576; // ~126 MiB, approximate

    // The peer-CTA dS exchange has no published traffic formula; this factor
    // is calibrated so the modeled cost matches the measured-table value at
    // the (256,128,128) backward tile (bytes = factor * M/2 * N * dtype).
    double dsmem_exchange_factor = 1.5;
};

/// Tile shape of one kernel iteration: M queries by N keys at head dim d.
struct TileConfig {
    std::int64_t m = 128;
    std::int64_t n = 128;
    std::int64_t d = 128;
    int dtype_bytes = 2; // bf16 operands
    CtaMode cta = CtaMode::OneCta;
};

HardwareProfile b200_profile();
HardwareProfile hopper_profile(); // half the tensor-core rate
HardwareProfile b300_profile();   // doubled exponential unit

std::vector<std::string> profile_names();
HardwareProfile profile_by_name(const std::string& name);

std::string profile_to_json(const HardwareProfile& hw);
HardwareProfile profile_from_json(const std::string& text);

} // namespace attnlab
