#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "apsim/config.hpp"
#include "apsim/sweep.hpp"

namespace apsim {

// Each command prints a human-readable report to `out` and, when
// `write_files` is set, writes its CSV/JSONL outputs under cfg.output_dir.
// Every report starts with a "# " header carrying the config name and seeds.

struct RunOutput {
    RunResult result;
    Summary summary;
    std::uint64_t seed = 0;
};
// One simulation of cfg.cluster.system on the first seed.
RunOutput cmd_run(const ExperimentConfig& cfg, std::ostream& out, bool write_files = true);

struct SweepOutput {
    TokenCount prompt_len = 0;
    TokenCount planned_len = 0;
    std::vector<SplitPoint> points;
    double searched_tps = 0.0;  // unforced APS run on the same workload
    double mean_split = 0.0;    // mean committed split of that run
    const SplitPoint& best() const;
    const SplitPoint& at(TokenCount split) const;
};
// Forced-split sweep on a two-instance cluster. The workload must have a
// single fixed shape; the grid spans its planned length.
SweepOutput cmd_sweep_split(const ExperimentConfig& cfg, std::ostream& out,
                            bool write_files = true, Execution exec = Execution::kParallel);

struct CapacityRow {
    SystemKind system = SystemKind::kAps;
    CapacityReport report;
};
std::vector<CapacityRow> cmd_capacity(const ExperimentConfig& cfg, std::ostream& out,
                                      bool write_files = true,
                                      Execution exec = Execution::kParallel);

struct ReplayRow {
    SystemKind system = SystemKind::kAps;
    std::size_t bucket = 0;
    double start_min = 0.0;
    double goodput_tps = 0.0;
};
// Replays a trace (trace_path overrides cfg.workload.trace_path) through every
// configured system and reports goodput per arrival bucket.
std::vector<ReplayRow> cmd_replay(const ExperimentConfig& cfg, std::ostream& out,
                                  const std::optional<std::string>& trace_path = std::nullopt,
                                  std::optional<double> bucket_min = std::nullopt,
                                  bool write_files = true,
                                  Execution exec = Execution::kParallel);

struct AblationRow {
    std::string variant;
    Summary summary;
    double transfer_wait_ms = 0.0;
};
// APS with SLO-aware vs fixed-chunk local batching, and chunked vs
// whole-cache KV transfer, on the first seed.
std::vector<AblationRow> cmd_ablate(const ExperimentConfig& cfg, std::ostream& out,
                                    bool write_files = true,
                                    Execution exec = Execution::kParallel);

}  // namespace apsim
