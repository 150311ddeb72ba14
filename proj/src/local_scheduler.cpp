#include "apsim/local_scheduler.hpp"

#include <algorithm>
#include <limits>

namespace apsim {

std::string to_string(PolicyKind kind) {
    switch (kind) {
        case PolicyKind::kAps: return "aps";
        case PolicyKind::kChunked: return "chunked";
        case PolicyKind::kDisaggPrefill: return "disagg-prefill";
        case PolicyKind::kDisaggDecode: return "disagg-decode";
    }
    return "?";
}

PolicyKind parse_policy_kind(const std::string& name) {
    if (name == "aps") return PolicyKind::kAps;
    if (name == "chunked") return PolicyKind::kChunked;
    if (name == "disagg-prefill") return PolicyKind::kDisaggPrefill;
    if (name == "disagg-decode") return PolicyKind::kDisaggDecode;
    throw Error("unknown local policy '" + name + "'");
}

namespace {

void add_decodes(const SchedulerQueues& q, TokenCount n_max, Batch& b) {
    const auto n = std::min<std::size_t>(q.decode.size(), static_cast<std::size_t>(n_max));
    b.decode_entries.reserve(n);
    double ctx_sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        b.decode_entries.push_back({q.decode[i].id, q.decode[i].context});
        ctx_sum += static_cast<double>(q.decode[i].context);
    }
    b.shape.dnum = static_cast<TokenCount>(n);
    b.shape.ctx = n > 0 ? ctx_sum / static_cast<double>(n) : 0.0;
}

// FIFO grants of min(remaining, budget). Each decode entry grows KV by one
// token this pass, so that much is reserved before prefill is admitted.
void add_prefill(const SchedulerQueues& q, TokenCount budget, ComposeLimits limits, Batch& b) {
    b.budget = budget;
    TokenCount kv_room = limits.kv_free - b.shape.dnum;
    for (const WorkItem& item : q.prefill) {
        if (budget <= 0 || kv_room <= 0) break;
        const TokenCount t = std::min({item.prefill_left, budget, kv_room});
        if (t <= 0) break;
        b.prefill_grants.push_back({item.id, t, item.context});
        b.shape.plen += t;
        b.shape.prefill_ctx_sum += static_cast<double>(t) * static_cast<double>(item.context);
        budget -= t;
        kv_room -= t;
        // A partially granted request blocks later ones (FIFO fairness).
        if (t < item.prefill_left) break;
    }
}

std::optional<Batch> finish(Batch b) {
    if (b.empty()) return std::nullopt;
    return b;
}

}  // namespace

std::optional<Batch> compose_batch_aps(const SchedulerQueues& q, double slo_ms,
                                       const Batch* prev, ProfileTable& table,
                                       TokenCount n_max, ComposeLimits limits) {
    if (prev != nullptr && !prev->empty() && prev->measured_time > 0.0)
        table.record(prev->shape.plen, prev->shape.ctx, prev->shape.dnum, prev->measured_time);
    if (q.empty()) return std::nullopt;
    Batch b;
    add_decodes(q, n_max, b);
    if (!q.prefill.empty()) {
        const TokenCount m = table.max_prefill_allowed(slo_ms, b.shape.ctx, b.shape.dnum);
        add_prefill(q, m, limits, b);
    }
    return finish(std::move(b));
}

std::optional<Batch> compose_batch_chunked(const SchedulerQueues& q, TokenCount chunk_size,
                                           TokenCount n_max, ComposeLimits limits) {
    if (chunk_size < 1) throw Error("chunk_size must be >= 1");
    Batch b;
    add_decodes(q, n_max, b);
    add_prefill(q, chunk_size, limits, b);
    return finish(std::move(b));
}

std::optional<Batch> compose_batch_disagg(const SchedulerQueues& q, PolicyKind role,
                                          TokenCount prefill_cap, TokenCount n_max,
                                          ComposeLimits limits) {
    Batch b;
    if (role == PolicyKind::kDisaggDecode) {
        add_decodes(q, n_max, b);
    } else if (role == PolicyKind::kDisaggPrefill) {
        add_prefill(q, prefill_cap, limits, b);
    } else {
        throw Error("compose_batch_disagg: role must be disagg-prefill or disagg-decode");
    }
    return finish(std::move(b));
}

std::optional<Batch> compose_batch(const SchedulerQueues& q, const LocalPolicy& policy,
                                   const Batch* prev, ProfileTable& table,
                                   ComposeLimits limits) {
    switch (policy.kind) {
        case PolicyKind::kAps:
            return compose_batch_aps(q, policy.slo_ms, prev, table, policy.n_max, limits);
        case PolicyKind::kChunked:
            return compose_batch_chunked(q, policy.chunk_size, policy.n_max, limits);
        case PolicyKind::kDisaggPrefill:
        case PolicyKind::kDisaggDecode:
            return compose_batch_disagg(q, policy.kind, policy.prefill_cap, policy.n_max,
                                        limits);
    }
    return std::nullopt;
}

}  // namespace apsim
