#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "apsim/cost_model.hpp"
#include "apsim/domain.hpp"
#include "apsim/global_scheduler.hpp"
#include "apsim/local_scheduler.hpp"
#include "apsim/profile_table.hpp"

namespace apsim {

enum class SystemKind : std::uint8_t {
    kAps,     // split search + SLO-aware local batching
    kColoc,   // whole requests round-robin, fixed-chunk batching
    kDisagg,  // prefill pool + decode pool, s = P
};
std::string to_string(SystemKind kind);
SystemKind parse_system_kind(const std::string& name);

enum class TransferMode : std::uint8_t { kChunked, kWhole };
std::string to_string(TransferMode mode);
TransferMode parse_transfer_mode(const std::string& name);

struct ClusterConfig {
    HardwareProfile hardware;
    int instances = 2;
    SystemKind system = SystemKind::kAps;
    LocalPolicy aps_policy;                                   // kAps local policy
    LocalPolicy coloc_policy{PolicyKind::kChunked};           // kColoc
    // When non-empty, instance i runs instance_policies[i] whatever the system.
    std::vector<LocalPolicy> instance_policies;
    SchedulerConfig scheduler;
    PredictorOptions predictor;
    ForcedSplit forced;
    TransferMode transfer = TransferMode::kChunked;
    TokenCount chunk_size = 256;
    ProfileTableOptions table;
    bool seed_table = true;   // pre-fill profile tables from the cost model
    std::uint64_t noise_seed = 1;
    bool record_batches = false;

    // Throws Error on an inconsistent config (e.g. odd instance count for a
    // paired system).
    void validate() const;
    LocalPolicy policy_for(InstanceId id) const;
};

struct RequestRecord {
    RequestId id = 0;
    double arrival_ms = 0.0;
    TokenCount prompt_len = 0;
    TokenCount decode_len = 0;
    TokenCount predicted_decode = 0;
    double slo_tbt_ms = 0.0;
    double admitted_ms = 0.0;  // leaves the backlog (== arrival unless HBM-bound)
    SplitPlan plan;
    bool beta_cancelled = false;
    std::vector<double> token_ms;  // emission time of output token j at [j - 1]
    // KV handoff, only when both halves ran on different instances.
    bool handoff = false;
    double alpha_done_ms = 0.0;
    double kv_ready_ms = 0.0;  // last covering chunk delivered
    TokenCount transferred_tokens = 0;
    std::size_t chunks = 0;
    std::size_t probes = 0;
    double decision_us = 0.0;
    // Predicted drain of the alpha and beta instances for the committed
    // probe, in ms after admitted_ms. Negative when no probe was committed.
    double predicted_alpha_ms = -1.0;
    double predicted_beta_ms = -1.0;

    double ttft() const { return token_ms.empty() ? 0.0 : token_ms.front() - arrival_ms; }
    double completion_ms() const { return token_ms.empty() ? arrival_ms : token_ms.back(); }
    // Time beta sat ready-to-run but waiting for KV to arrive.
    double handoff_wait() const { return handoff ? kv_ready_ms - alpha_done_ms : 0.0; }
};

struct InstanceStats {
    double busy_ms = 0.0;
    double idle_ms = 0.0;
    std::size_t batches = 0;
    TokenCount prefill_tokens = 0;
    TokenCount decode_tokens = 0;
    TokenCount peak_kv = 0;
};

struct BatchRecord {
    InstanceId instance = 0;
    double start_ms = 0.0;
    double end_ms = 0.0;
    BatchShape shape;
    TokenCount budget = 0;
    double model_ms = 0.0;  // noise-free cost-model latency
};

struct TransferStats {
    std::size_t chunks = 0;
    TokenCount tokens = 0;
    std::size_t discarded_chunks = 0;
    double channel_busy_ms = 0.0;
    double total_wait_ms = 0.0;  // summed handoff_wait over requests
};

struct RunResult {
    std::vector<RequestRecord> requests;  // in workload order
    std::vector<InstanceStats> instances;
    std::vector<BatchRecord> batches;     // only with record_batches
    TransferStats transfer;
    double end_ms = 0.0;
    std::size_t events = 0;
    std::size_t predictor_probes = 0;
    std::size_t predictor_cache_hits = 0;
    std::size_t scheduler_fallbacks = 0;
    std::uint64_t digest = 0;  // FNV-1a over every token timestamp and batch

    // busy / end, per instance
    std::vector<double> utilization() const;
};

// Discrete-event run of `workload` (sorted by arrival) on the cluster.
// Deterministic for a given config and workload. Throws Error on an invalid
// config, a KV overflow, or a deadlock (work left with no pending event).
RunResult run(const std::vector<Request>& workload, const ClusterConfig& config);

// One JSON object per request, then a {"summary": ...} line.
void write_jsonl(std::ostream& out, const RunResult& result);

}  // namespace apsim
