#pragma once

#include <cstdint>
#include <vector>

#include "apsim/config.hpp"
#include "apsim/engine.hpp"
#include "apsim/metrics.hpp"
#include "apsim/predictor.hpp"

namespace apsim {

// Independent simulations fan out over OpenMP threads; kSerial runs the same
// jobs in order on the calling thread and is the reference the tests compare
// against. Results are always returned in job order.
enum class Execution : std::uint8_t { kSerial, kParallel };

struct RunJob {
    const std::vector<Request>* workload = nullptr;
    ClusterConfig config;
};

std::vector<RunResult> run_jobs(const std::vector<RunJob>& jobs, Execution exec);

// Evenly spaced split positions over [0, len], plus every value in `extra`
// (deduplicated, sorted).
std::vector<TokenCount> split_grid(TokenCount len, int points,
                                   const std::vector<TokenCount>& extra = {});

struct SplitPoint {
    TokenCount split = 0;
    double throughput_tps = 0.0;  // output tokens / (last token - first arrival)
    double makespan_ms = 0.0;
};

// One run per split position with the split forced on every request.
std::vector<SplitPoint> sweep_split(const std::vector<Request>& workload, ClusterConfig base,
                                    const std::vector<TokenCount>& splits, Execution exec);

double run_throughput(const RunResult& r);

struct OracleResult {
    TokenCount best_split = 0;
    double best_makespan_ms = 0.0;
    std::vector<double> makespan_ms;  // max(T1, T2) for every s in [0, L]
};

// Exhaustive search over every split point of the planning-view request,
// scoring each by the predicted pair makespan. Each worker owns a predictor
// with caching disabled.
OracleResult grid_oracle(const PredictorOptions& options, const PlanningView& r,
                         InstanceId alpha_instance, InstanceId beta_instance,
                         const ClusterSnapshot& load, Execution exec);

// Summaries for one system at one rate, one run per seed.
std::vector<Summary> probe_seeds(const ExperimentConfig& cfg, SystemKind system, double qps,
                                 Execution exec);

// Capacity by bisection; a probe passes when every seed meets the criteria.
CapacityReport system_capacity(const ExperimentConfig& cfg, SystemKind system, Execution exec);

}  // namespace apsim
