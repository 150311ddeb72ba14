#pragma once

#include <optional>
#include <vector>

#include "apsim/cost_model.hpp"
#include "apsim/local_scheduler.hpp"
#include "apsim/profile_table.hpp"

namespace apsim {

struct TokenEmission {
    RequestId parent = 0;
    MicroId id = 0;
    TokenCount position = 0;  // 1-based token position just produced
};

struct ComputedProgress {
    MicroId id = 0;
    RequestId parent = 0;
    Role role = Role::kAlpha;
    TokenCount context = 0;  // resident KV after this batch
};

// Cursor for InstanceCore::run_decode_passes.
struct DecodeRun {
    double clock = 0.0;         // start of the next pass, advanced by each pass
    double start_before = 0.0;  // a pass may only start while clock < start_before
    double busy_ms = 0.0;       // each pass's latency is added here
    std::size_t max_passes = 0;
    std::size_t passes = 0;     // passes run by the call
};

struct StepOutcome {
    std::vector<TokenEmission> tokens;
    std::vector<ComputedProgress> progress;
    std::vector<WorkItem> finished;

    void clear() {
        tokens.clear();
        progress.clear();
        finished.clear();
    }
};

// One execution instance: queues, KV accounting, local policy and its
// profile table. The live engine and the predictor's virtual replay drive
// the same object, so both compose batches with identical code.
class InstanceCore {
public:
    InstanceCore(InstanceId id, HardwareProfile hw, LocalPolicy policy, ProfileTable table);

    InstanceId id() const { return id_; }
    const HardwareProfile& hardware() const { return hw_; }
    const LocalPolicy& policy() const { return policy_; }
    const ProfileTable& table() const { return table_; }
    ProfileTable& table() { return table_; }
    const SchedulerQueues& queues() const { return queues_; }
    const std::optional<Batch>& previous() const { return prev_; }

    TokenCount kv_used() const { return kv_used_; }
    TokenCount kv_free() const { return hw_.hbm_capacity_tokens - kv_used_; }
    double busy_ms() const { return busy_ms_; }
    bool has_work() const { return !queues_.empty(); }

    // Appends to the prefill queue (prompt tokens left) or the decode queue.
    // KV for item.context tokens (e.g. a transferred prefix) is charged here.
    // Throws Error if that would exceed HBM capacity.
    void enqueue(WorkItem item);
    void release_kv(TokenCount tokens);

    // Compose the next batch under the instance's policy (the SLO-aware policy records
    // the previous batch first). nullopt when there is nothing runnable.
    std::optional<Batch> compose(double now);

    // Apply a composed batch that took `measured_ms` and finished at `end`.
    // The returned reference stays valid until the next call.
    const StepOutcome& complete(Batch batch, double measured_ms);

    // Back-to-back decode-only passes at noise-free cost-model latency,
    // stopping before any item would finish. Leaves the same state as
    // compose() + complete() per pass at O(1) cost per pass. Runs nothing
    // unless the prefill queue is empty.
    void run_decode_passes(DecodeRun& run);

    // Replace every item's execution decode length by its planned one, so a
    // copy can be replayed without seeing the hidden truth. Items already
    // decoding keep at least one token.
    void adopt_planning_view();

private:
    InstanceId id_;
    HardwareProfile hw_;
    LocalPolicy policy_;
    ProfileTable table_;
    SchedulerQueues queues_;
    std::optional<Batch> prev_;
    TokenCount kv_used_ = 0;
    double busy_ms_ = 0.0;
    std::uint64_t next_seq_ = 0;
    StepOutcome outcome_;
};

}  // namespace apsim
