#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "apsim/engine.hpp"
#include "apsim/metrics.hpp"
#include "apsim/workload.hpp"

namespace apsim {

struct WorkloadConfig {
    std::string preset;  // empty when the mix is given explicitly or a trace is used
    WorkloadSpec spec;
    std::optional<std::string> trace_path;
    double time_scale = 1.0;
};

struct SweepOptions {
    int points = 33;              // forced split positions across [0, L]
    std::size_t requests = 1200;  // per run; enough for a steady middle section
    double rate_qps = 10.0;
};

struct ExperimentConfig {
    std::string name = "experiment";
    ClusterConfig cluster;
    WorkloadConfig workload;
    MetricsOptions metrics;
    CapacityCriteria criteria;
    CapacityOptions capacity;
    double capacity_duration_s = 120.0;
    std::vector<std::uint64_t> seeds{1, 2, 3};
    std::vector<SystemKind> systems{SystemKind::kAps, SystemKind::kDisagg, SystemKind::kColoc};
    SweepOptions sweep;
    double replay_bucket_min = 6.0;
    std::string output_dir = "out";
};

// Parses a JSON config. Unknown keys, wrong types and missing required keys
// raise Error with the offending key path (e.g. "cluster.instances").
// `overrides` are "dotted.key=value" strings applied before validation; the
// value is parsed as JSON and falls back to a plain string. Relative paths
// (hardware files, traces) resolve against `base_dir`.
ExperimentConfig parse_config(const std::string& text,
                              const std::vector<std::string>& overrides = {},
                              const std::string& base_dir = ".");
ExperimentConfig load_config(const std::string& path,
                             const std::vector<std::string>& overrides = {});

// Requests for one seed: generated from the spec or loaded from the trace.
std::vector<Request> build_workload(const WorkloadConfig& w, std::uint64_t seed,
                                    std::optional<double> rate_qps = std::nullopt,
                                    std::optional<double> duration_s = std::nullopt);

HardwareProfile load_hardware(const std::string& path);

}  // namespace apsim
