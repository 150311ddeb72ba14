#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "apsim/domain.hpp"

namespace apsim {

// Analytical stand-in for one GPU instance. The default values are synthetic
// (see configs/hardware/default.json), shaped so the mixed-batch latency
// curve crosses 50 ms near 29 decodes at ctx=1024 with a 512-token prefill.
struct HardwareProfile {
    double flops_per_ms = 1.8e11;
    double mem_bw_bytes_per_ms = 2.0e9;
    double weight_bytes = 1.6e10;
    double kv_bytes_per_token = 131072.0;
    double link_bw_bytes_per_ms = 2.5e7;
    double link_latency_ms = 0.05;
    double fixed_overhead_ms = 1.5;
    TokenCount hbm_capacity_tokens = 480000;
    double c_lin = 1.6e10;        // flops per processed token
    double c_attn = 524288.0;     // flops per (query, key) token pair in prefill
    double noise_sigma = 0.0;     // lognormal sigma on measured batch latency

    // Throws Error naming the first non-positive rate.
    void validate() const;
};

struct BatchShape {
    TokenCount plen = 0;
    TokenCount dnum = 0;
    double ctx = 0.0;               // mean decode context length
    double prefill_ctx_sum = 0.0;   // sum over chunks of chunk_len * cached prefix

    bool empty() const { return plen + dnum == 0; }
};

double compute_time_ms(const BatchShape& shape, const HardwareProfile& hw);
double memory_time_ms(const BatchShape& shape, const HardwareProfile& hw);

// max(compute, memory) + fixed overhead. Deterministic.
double batch_latency(const BatchShape& shape, const HardwareProfile& hw);

// batch_latency with multiplicative lognormal noise when hw.noise_sigma > 0.
// The noise is mean-one: exp(sigma * z - sigma^2 / 2).
double noisy_batch_latency(const BatchShape& shape, const HardwareProfile& hw,
                           std::mt19937_64& rng);

double transfer_time(TokenCount tokens, const HardwareProfile& hw);

struct CalibrationTarget {
    BatchShape shape;
    double latency_ms = 0.0;
};

struct CalibrationResult {
    HardwareProfile profile;
    double rms_residual_ms = 0.0;
    double max_abs_residual_ms = 0.0;
    std::vector<double> residuals_ms;
    int iterations = 0;
};

// Least-squares fit of the roofline model to observed batch latencies.
// Keeps flops_per_ms and kv_bytes_per_token from `base` (they only scale the
// fitted coefficients) and fits c_lin, c_attn, mem_bw, weight_bytes and
// fixed_overhead. Targets are assigned to the compute or memory regime,
// solved jointly, and reassigned until the assignment is stable.
// Throws Error on fewer than 4 targets or a rank-deficient system; the
// message names the unidentifiable parameters.
CalibrationResult calibrate(const std::vector<CalibrationTarget>& targets,
                            const HardwareProfile& base = {});

}  // namespace apsim
