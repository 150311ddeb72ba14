#pragma once

#include <cstdint>
#include <list>
#include <optional>
#include <unordered_map>
#include <utility>
#include <vector>

#include "apsim/domain.hpp"
#include "apsim/instance.hpp"

namespace apsim {

// A beta micro-request registered on `beta_instance` whose KV still has to
// arrive from its alpha on `alpha_instance`.
struct PendingHandoff {
    WorkItem beta;
    InstanceId beta_instance = 0;
    InstanceId alpha_instance = 0;
    MicroId alpha = 0;
    TokenCount split = 0;
};

struct InstanceView {
    const InstanceCore* core = nullptr;
    std::optional<Batch> inflight;  // batch currently executing, if any
    double inflight_end = 0.0;
};

// Read-only view of the live cluster handed to the predictor.
struct ClusterSnapshot {
    double now = 0.0;
    std::vector<InstanceView> instances;  // indexed by InstanceId
    std::vector<PendingHandoff> pending;
};

// A copy of one instance, in the planning view (actual decode lengths are
// replaced by the planned ones), plus work that is not runnable yet.
struct VirtualState {
    InstanceCore core;
    double clock = 0.0;
    std::vector<WorkItem> waiting;  // ready_at > clock, not yet enqueued
    double prefill_clk = 0.0;       // cumulative time spent in batches with prefill
    double decode_clk = 0.0;        // cumulative time spent in decode-only batches

    // Copies the instance, applies its in-flight batch (if any) and switches
    // to the planning view.
    static VirtualState from_live(const InstanceView& view, double now);
    std::uint64_t digest() const;
    TokenCount outstanding_tokens() const;
};

struct PassSnapshot {
    double end_ms = 0.0;
    TokenCount plen = 0;
    TokenCount dnum = 0;
    TokenCount outstanding = 0;
};

struct Timeline {
    double start_ms = 0.0;
    double end_ms = 0.0;
    std::size_t passes = 0;
    std::vector<std::pair<MicroId, double>> finish_ms;  // in completion order
    std::vector<PassSnapshot> history;                  // only when requested

    double completion() const { return end_ms - start_ms; }
    std::optional<double> finish_of(MicroId id) const;
};

struct SimulateOptions {
    bool record_history = false;
    std::size_t max_passes = 10'000'000;
    bool skip_decode_runs = true;  // false steps every pass (reference path)
};

// Replay the instance's local policy on a virtual copy until all work is
// done. Batch latency comes from the cost model with noise disabled.
// Throws Error if a pass makes no progress while work remains.
Timeline simulate_virtual(VirtualState& state, const SimulateOptions& options = {});

WorkItem make_work_item(const MicroRequest& m, TokenCount prompt_len);

struct PredictorOptions {
    // When true, a beta only becomes runnable after its alpha finishes plus
    // the final KV chunk's transfer; when false each instance's assigned work
    // counts as runnable immediately (pure execution-time balance).
    bool model_handoff = false;
    TokenCount transfer_chunk = 256;  // 0 = whole-cache transfer
    std::size_t cache_capacity = 4096;
    bool skip_decode_runs = true;  // see SimulateOptions
};

struct PairPrediction {
    double t1 = 0.0;  // alpha instance, ms from snapshot time
    double t2 = 0.0;  // beta instance
    double prefill_clk = 0.0;  // summed over both virtual instances
    double decode_clk = 0.0;
    bool cached = false;
};

class Predictor {
public:
    explicit Predictor(PredictorOptions options = {});

    // Predicted time until each instance of the pair finishes all assigned
    // work including the new pair (either micro-request may be empty).
    // Throws Error if an instance is missing from the snapshot.
    PairPrediction predict_pair(const MicroRequest& alpha, const MicroRequest& beta,
                                TokenCount prompt_len, InstanceId alpha_instance,
                                InstanceId beta_instance, const ClusterSnapshot& load);

    struct PairTimelines {
        Timeline first;
        Timeline second;
        double prefill_clk = 0.0;
        double decode_clk = 0.0;
    };

    // Co-simulation of a pair used by predict_pair; exposed for tests.
    // `links` are betas that become runnable once their alpha finishes.
    PairTimelines simulate_pair(VirtualState a, VirtualState b,
                                const std::vector<PendingHandoff>& links) const;

    std::size_t cache_hits() const { return hits_; }
    std::size_t cache_misses() const { return misses_; }
    std::size_t probes() const { return hits_ + misses_; }
    const PredictorOptions& options() const { return options_; }

private:
    struct CacheKey {
        std::uint64_t a = 0, b = 0, shape = 0;
        friend bool operator==(const CacheKey&, const CacheKey&) = default;
    };
    struct CacheKeyHash {
        std::size_t operator()(const CacheKey& k) const;
    };

    std::optional<PairPrediction> cache_get(const CacheKey& k);
    void cache_put(const CacheKey& k, PairPrediction v);

    PredictorOptions options_;
    std::list<std::pair<CacheKey, PairPrediction>> lru_;
    std::unordered_map<CacheKey, decltype(lru_)::iterator, CacheKeyHash> index_;
    std::size_t hits_ = 0;
    std::size_t misses_ = 0;
};

}  // namespace apsim
