#pragma once

#include <cstdint>
#include <deque>
#include <optional>
#include <string>
#include <vector>

#include "apsim/cost_model.hpp"
#include "apsim/domain.hpp"
#include "apsim/profile_table.hpp"

namespace apsim {

using MicroId = std::uint64_t;

inline MicroId micro_id(RequestId parent, Role role) {
    return (parent << 1) | (role == Role::kBeta ? 1u : 0u);
}

// Execution state of one micro-request resident on an instance.
struct WorkItem {
    MicroId id = 0;
    RequestId parent = 0;
    Role role = Role::kAlpha;
    TokenCount prompt_len = 0;
    TokenCount prefill_left = 0;
    TokenCount decode_left = 0;          // execution truth
    TokenCount planned_decode_left = 0;  // planning view (from D^)
    TokenCount context = 0;              // tokens whose KV is resident
    TokenCount span_end = 0;             // one past the last position this item owns
    std::uint64_t seq = 0;               // admission order
    double ready_at = 0.0;               // only used by the virtual replay

    bool done() const { return prefill_left == 0 && decode_left == 0; }
};

// prefill: FIFO of items with outstanding prompt tokens.
// decode: items currently decoding, in the order they started decoding.
struct SchedulerQueues {
    std::deque<WorkItem> prefill;
    std::vector<WorkItem> decode;

    bool empty() const { return prefill.empty() && decode.empty(); }
    std::size_t size() const { return prefill.size() + decode.size(); }
};

struct DecodeEntry {
    MicroId id = 0;
    TokenCount context = 0;
};

struct PrefillGrant {
    MicroId id = 0;
    TokenCount tokens = 0;
    TokenCount prefix = 0;  // tokens already cached before this grant
};

struct Batch {
    std::vector<DecodeEntry> decode_entries;  // the first decode_entries.size() items of decode
    std::vector<PrefillGrant> prefill_grants; // the first prefill_grants.size() items of prefill
    BatchShape shape;
    TokenCount budget = 0;  // M used at composition (chunk size / cap for baselines)
    double composed_at = 0.0;
    double measured_time = 0.0;

    bool empty() const { return decode_entries.empty() && prefill_grants.empty(); }
};

enum class PolicyKind : std::uint8_t { kAps, kChunked, kDisaggPrefill, kDisaggDecode };

struct LocalPolicy {
    PolicyKind kind = PolicyKind::kAps;
    double slo_ms = 48.0;            // per-batch latency target for kAps
    TokenCount chunk_size = 2048;    // kChunked
    TokenCount prefill_cap = 8192;   // kDisaggPrefill token cap per batch
    TokenCount n_max = 256;          // max decode entries per batch
};

std::string to_string(PolicyKind kind);
PolicyKind parse_policy_kind(const std::string& name);

// Per-composition resource view: KV tokens still free on the instance.
struct ComposeLimits {
    TokenCount kv_free = 0;
};

// SLO-aware batching: record the previous batch, admit all running decodes, query
// the prefill budget M from the table, then grant prefill FIFO with
// min(remaining, M) per request until M is exhausted.
// Returns nullopt when both queues are empty (idle).
std::optional<Batch> compose_batch_aps(const SchedulerQueues& q, double slo_ms,
                                       const Batch* prev, ProfileTable& table,
                                       TokenCount n_max, ComposeLimits limits);

// Fixed-chunk colocation baseline: all decodes plus up to chunk_size prefill
// tokens regardless of predicted latency.
std::optional<Batch> compose_batch_chunked(const SchedulerQueues& q, TokenCount chunk_size,
                                           TokenCount n_max, ComposeLimits limits);

// Disaggregation baseline: prefill-only instances batch prefill FIFO up to
// the cap; decode-only instances batch decodes.
std::optional<Batch> compose_batch_disagg(const SchedulerQueues& q, PolicyKind role,
                                          TokenCount prefill_cap, TokenCount n_max,
                                          ComposeLimits limits);

// Dispatch on policy.kind. `table` and `prev` are only used by kAps.
std::optional<Batch> compose_batch(const SchedulerQueues& q, const LocalPolicy& policy,
                                   const Batch* prev, ProfileTable& table,
                                   ComposeLimits limits);

}  // namespace apsim
