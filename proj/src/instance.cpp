#include "apsim/instance.hpp"

#include <algorithm>
#include <limits>
#include <string>

namespace apsim {

InstanceCore::InstanceCore(InstanceId id, HardwareProfile hw, LocalPolicy policy,
                           ProfileTable table)
    : id_(id), hw_(hw), policy_(policy), table_(std::move(table)) {}

void InstanceCore::enqueue(WorkItem item) {
    if (item.done()) throw Error("enqueue: micro-request has no work");
    if (kv_used_ + item.context > hw_.hbm_capacity_tokens)
        throw Error("enqueue: KV overflow on instance " + std::to_string(id_));
    kv_used_ += item.context;
    item.seq = next_seq_++;
    if (item.prefill_left > 0)
        queues_.prefill.push_back(item);
    else
        queues_.decode.push_back(item);
}

void InstanceCore::release_kv(TokenCount tokens) {
    kv_used_ -= tokens;
    if (kv_used_ < 0) throw Error("release_kv: negative KV occupancy");
}

std::optional<Batch> InstanceCore::compose(double now) {
    const Batch* prev = prev_ ? &*prev_ : nullptr;
    auto b = compose_batch(queues_, policy_, prev, table_, ComposeLimits{kv_free()});
    // The previous batch has been recorded; never record it twice.
    prev_.reset();
    if (b) b->composed_at = now;
    return b;
}

const StepOutcome& InstanceCore::complete(Batch batch, double measured_ms) {
    outcome_.clear();
    batch.measured_time = measured_ms;
    busy_ms_ += measured_ms;

    const std::size_t dnum = batch.decode_entries.size();
    const std::size_t ngrants = batch.prefill_grants.size();
    if (dnum > queues_.decode.size() || ngrants > queues_.prefill.size())
        throw Error("complete: batch does not match queues");
    const TokenCount growth = batch.shape.plen + batch.shape.dnum;
    if (kv_used_ + growth > hw_.hbm_capacity_tokens)
        throw Error("complete: KV overflow on instance " + std::to_string(id_));
    kv_used_ += growth;

    bool any_decode_done = false;
    for (std::size_t i = 0; i < dnum; ++i) {
        WorkItem& item = queues_.decode[i];
        if (item.id != batch.decode_entries[i].id)
            throw Error("complete: decode entry order changed");
        ++item.context;
        --item.decode_left;
        if (item.planned_decode_left > 0) --item.planned_decode_left;
        outcome_.tokens.push_back({item.parent, item.id, item.context});
        outcome_.progress.push_back({item.id, item.parent, item.role, item.context});
        if (item.decode_left == 0) any_decode_done = true;
    }
    if (any_decode_done) {
        auto it = std::stable_partition(queues_.decode.begin(), queues_.decode.end(),
                                        [](const WorkItem& w) { return w.decode_left > 0; });
        for (auto f = it; f != queues_.decode.end(); ++f) outcome_.finished.push_back(*f);
        queues_.decode.erase(it, queues_.decode.end());
    }

    for (std::size_t i = 0; i < ngrants; ++i) {
        WorkItem& item = queues_.prefill[i];
        const PrefillGrant& g = batch.prefill_grants[i];
        if (item.id != g.id) throw Error("complete: prefill grant order changed");
        item.context += g.tokens;
        item.prefill_left -= g.tokens;
        outcome_.progress.push_back({item.id, item.parent, item.role, item.context});
    }
    // Only a prefix of the FIFO can finish; it always starts at the front.
    while (!queues_.prefill.empty() && queues_.prefill.front().prefill_left == 0) {
        WorkItem item = queues_.prefill.front();
        queues_.prefill.pop_front();
        if (item.decode_left > 0)
            queues_.decode.push_back(item);
        else
            outcome_.finished.push_back(item);
    }

    prev_ = std::move(batch);
    return outcome_;
}

void InstanceCore::run_decode_passes(DecodeRun& run) {
    run.passes = 0;
    if (!queues_.prefill.empty() || queues_.decode.empty() ||
        policy_.kind == PolicyKind::kDisaggPrefill)
        return;
    const auto n = std::min<std::size_t>(queues_.decode.size(),
                                         static_cast<std::size_t>(policy_.n_max));
    const auto dnum = static_cast<TokenCount>(n);
    TokenCount min_left = std::numeric_limits<TokenCount>::max();
    double ctx_sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        min_left = std::min(min_left, queues_.decode[i].decode_left);
        ctx_sum += static_cast<double>(queues_.decode[i].context);
    }
    const auto limit = static_cast<std::size_t>(std::max<TokenCount>(
        0, std::min(min_left - 1, (hw_.hbm_capacity_tokens - kv_used_) / dnum)));
    const std::size_t max_passes = std::min(run.max_passes, limit);
    if (max_passes == 0 || !(run.clock < run.start_before)) return;

    const bool records = policy_.kind == PolicyKind::kAps;
    BatchShape prev_shape;
    double prev_time = 0.0;
    if (prev_ && !prev_->empty()) {
        prev_shape = prev_->shape;
        prev_time = prev_->measured_time;
    }
    BatchShape shape;
    shape.dnum = dnum;
    double composed_at = run.clock;
    double d = 0.0;
    while (run.passes < max_passes && run.clock < run.start_before) {
        if (records && prev_time > 0.0)
            table_.record(prev_shape.plen, prev_shape.ctx, prev_shape.dnum, prev_time);
        shape.ctx = ctx_sum / static_cast<double>(n);
        d = batch_latency(shape, hw_);
        busy_ms_ += d;
        kv_used_ += dnum;
        composed_at = run.clock;
        run.busy_ms += d;
        run.clock += d;
        ctx_sum += static_cast<double>(n);
        prev_shape = shape;
        prev_time = d;
        ++run.passes;
    }
    if (run.passes == 0) return;

    const auto k = static_cast<TokenCount>(run.passes);
    Batch last;
    last.shape = shape;
    last.budget = policy_.kind == PolicyKind::kChunked ? policy_.chunk_size : 0;
    last.composed_at = composed_at;
    last.measured_time = d;
    last.decode_entries.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        WorkItem& item = queues_.decode[i];
        last.decode_entries.push_back({item.id, item.context + k - 1});
        item.context += k;
        item.decode_left -= k;
        item.planned_decode_left = std::max<TokenCount>(0, item.planned_decode_left - k);
    }
    prev_ = std::move(last);
}

void InstanceCore::adopt_planning_view() {
    for (WorkItem& w : queues_.prefill) w.decode_left = w.planned_decode_left;
    for (WorkItem& w : queues_.decode) {
        w.planned_decode_left = std::max<TokenCount>(w.planned_decode_left, 1);
        w.decode_left = w.planned_decode_left;
    }
}

}  // namespace apsim
