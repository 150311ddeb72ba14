#include "apsim/engine.hpp"

#include <algorithm>
#include <bit>
#include <deque>
#include <map>
#include <ostream>
#include <queue>
#include <random>
#include <set>
#include <sstream>
#include <unordered_map>

#include "apsim/instance.hpp"
#include "apsim/predictor.hpp"
#include "json.hpp"

namespace apsim {

std::string to_string(SystemKind kind) {
    switch (kind) {
        case SystemKind::kAps: return "aps";
        case SystemKind::kColoc: return "coloc";
        case SystemKind::kDisagg: return "disagg";
    }
    return "?";
}

SystemKind parse_system_kind(const std::string& name) {
    if (name == "aps") return SystemKind::kAps;
    if (name == "coloc") return SystemKind::kColoc;
    if (name == "disagg") return SystemKind::kDisagg;
    throw Error("unknown system '" + name + "' (expected aps, coloc or disagg)");
}

std::string to_string(TransferMode mode) {
    return mode == TransferMode::kChunked ? "chunked" : "whole";
}

TransferMode parse_transfer_mode(const std::string& name) {
    if (name == "chunked") return TransferMode::kChunked;
    if (name == "whole") return TransferMode::kWhole;
    throw Error("unknown transfer mode '" + name + "' (expected chunked or whole)");
}

void ClusterConfig::validate() const {
    hardware.validate();
    if (instances < 1) throw Error("cluster.instances must be >= 1");
    if (system != SystemKind::kColoc && (instances < 2 || instances % 2 != 0))
        throw Error("cluster.instances must be even and >= 2 for " + to_string(system));
    if (!instance_policies.empty() &&
        instance_policies.size() != static_cast<std::size_t>(instances))
        throw Error("cluster.instance_policies must list one policy per instance");
    if (chunk_size < 1) throw Error("transfer.chunk_size must be >= 1");
    scheduler.validate();
}

LocalPolicy ClusterConfig::policy_for(InstanceId id) const {
    if (!instance_policies.empty()) return instance_policies.at(id);
    switch (system) {
        case SystemKind::kAps: return aps_policy;
        case SystemKind::kColoc: return coloc_policy;
        case SystemKind::kDisagg: {
            LocalPolicy p = aps_policy;
            p.kind = id % 2 == 0 ? PolicyKind::kDisaggPrefill : PolicyKind::kDisaggDecode;
            return p;
        }
    }
    return aps_policy;
}

std::vector<double> RunResult::utilization() const {
    std::vector<double> u;
    u.reserve(instances.size());
    for (const InstanceStats& s : instances) u.push_back(end_ms > 0.0 ? s.busy_ms / end_ms : 0.0);
    return u;
}

namespace {

constexpr std::uint64_t kFnvOffset = 1469598103934665603ull;
constexpr std::uint64_t kFnvPrime = 1099511628211ull;

void fnv(std::uint64_t& h, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
        h ^= (v >> (8 * i)) & 0xffu;
        h *= kFnvPrime;
    }
}
void fnv(std::uint64_t& h, double v) { fnv(h, std::bit_cast<std::uint64_t>(v)); }

// Lower value wins a tie at equal time.
enum class EventKind : std::uint8_t { kDelivery = 0, kTransferStarted = 1, kBatchDone = 2, kArrival = 3 };

struct Event {
    double time = 0.0;
    EventKind kind = EventKind::kArrival;
    std::uint64_t seq = 0;
    std::size_t payload = 0;  // request index, instance id or chunk index
};

struct Later {
    bool operator()(const Event& x, const Event& y) const {
        if (x.time != y.time) return x.time > y.time;
        if (x.kind != y.kind) return x.kind > y.kind;
        return x.seq > y.seq;
    }
};

struct Chunk {
    std::size_t req = 0;
    TokenCount tokens = 0;
    double start_ms = 0.0;
};

// Engine-side bookkeeping of one request.
struct Live {
    bool admitted = false;
    bool alpha_live = false;     // alpha enqueued and not finished
    bool beta_waiting = false;   // beta registered, not yet enqueued
    bool beta_live = false;      // beta enqueued and not finished
    bool cancelled = false;
    bool needs_transfer = false;
    WorkItem beta;
    TokenCount shipped = 0;      // alpha tokens handed to the channel
    TokenCount delivered = 0;
    std::size_t chunks_in_flight = 0;
    TokenCount alpha_kv = 0;     // alpha KV held until delivery completes
    TokenCount emitted = 0;
    TokenCount reserve_alpha = 0;
    TokenCount reserve_beta = 0;
    bool done = false;
};

class Simulation {
public:
    Simulation(const std::vector<Request>& workload, const ClusterConfig& cfg)
        : w_(workload), cfg_(cfg), rng_(cfg.noise_seed) {
        cfg_.validate();
        ProfileTable base(cfg_.table);
        if (cfg_.seed_table) base.seed_from(cfg_.hardware);
        for (int i = 0; i < cfg_.instances; ++i) {
            const auto id = static_cast<InstanceId>(i);
            cores_.emplace_back(id, cfg_.hardware, cfg_.policy_for(id), base);
        }
        const auto n = static_cast<std::size_t>(cfg_.instances);
        inflight_.resize(n);
        inflight_end_.assign(n, 0.0);
        reserved_.assign(n, 0);
        activation_.resize(n);
        result_.instances.resize(n);
        if (cfg_.system == SystemKind::kAps) {
            std::vector<InstancePair> pairs;
            for (int i = 0; i + 1 < cfg_.instances; i += 2)
                pairs.push_back({static_cast<InstanceId>(i), static_cast<InstanceId>(i + 1)});
            PredictorOptions po = cfg_.predictor;
            po.transfer_chunk = cfg_.transfer == TransferMode::kChunked ? cfg_.chunk_size : 0;
            scheduler_.emplace(cfg_.scheduler, std::move(pairs), po, cfg_.forced);
        }

        live_.resize(w_.size());
        result_.requests.resize(w_.size());
        double prev = 0.0;
        for (std::size_t i = 0; i < w_.size(); ++i) {
            const Request& r = w_[i];
            r.validate();
            if (r.arrival_ms < prev) throw Error("workload is not sorted by arrival time");
            prev = r.arrival_ms;
            if (std::max(r.planned_len(), r.actual_len()) > cfg_.hardware.hbm_capacity_tokens)
                throw Error("request " + std::to_string(r.id) + " does not fit in HBM");
            if (!index_.emplace(r.id, i).second)
                throw Error("duplicate request id " + std::to_string(r.id));
            RequestRecord& rec = result_.requests[i];
            rec.id = r.id;
            rec.arrival_ms = r.arrival_ms;
            rec.prompt_len = r.prompt_len;
            rec.decode_len = r.decode_len;
            rec.predicted_decode = r.predicted_decode;
            rec.slo_tbt_ms = r.slo_tbt_ms;
            rec.token_ms.assign(static_cast<std::size_t>(r.decode_len), -1.0);
            push({r.arrival_ms, EventKind::kArrival, 0, i});
        }
        remaining_ = w_.size();
    }

    RunResult run() {
        while (!events_.empty()) {
            const Event e = events_.top();
            events_.pop();
            if (e.time < clock_) throw Error("event clock went backwards");
            clock_ = e.time;
            ++result_.events;
            switch (e.kind) {
                case EventKind::kArrival: on_arrival(e.payload); break;
                case EventKind::kBatchDone: on_batch_done(static_cast<InstanceId>(e.payload)); break;
                case EventKind::kTransferStarted: break;
                case EventKind::kDelivery: on_delivery(e.payload); break;
            }
        }
        if (remaining_ > 0) throw Error(deadlock_report());
        finish();
        return std::move(result_);
    }

private:
    void push(Event e) {
        e.seq = seq_++;
        events_.push(e);
    }

    const Request& req(std::size_t i) const { return w_[i]; }

    std::size_t index_of(RequestId id) const { return index_.at(id); }

    bool fits(std::size_t i) const {
        const TokenCount need = req(i).planned_len();
        for (std::size_t k = 0; k < cores_.size(); ++k)
            if (cfg_.hardware.hbm_capacity_tokens - reserved_[k] < need) return false;
        return true;
    }

    void on_arrival(std::size_t i) {
        if (!backlog_.empty() || !fits(i)) {
            backlog_.push_back(i);
            return;
        }
        admit(i);
    }

    void drain_backlog() {
        while (!backlog_.empty() && fits(backlog_.front())) {
            const std::size_t i = backlog_.front();
            backlog_.pop_front();
            admit(i);
        }
    }

    ClusterSnapshot snapshot() const {
        ClusterSnapshot s;
        s.now = clock_;
        s.instances.reserve(cores_.size());
        for (std::size_t k = 0; k < cores_.size(); ++k)
            s.instances.push_back({&cores_[k], inflight_[k], inflight_end_[k]});
        for (std::size_t i : waiting_betas_) {
            const Live& l = live_[i];
            const SplitPlan& p = result_.requests[i].plan;
            s.pending.push_back({l.beta, p.beta_instance, p.alpha_instance,
                                 micro_id(req(i).id, Role::kAlpha), p.split});
        }
        return s;
    }

    void admit(std::size_t i) {
        const Request& r = req(i);
        RequestRecord& rec = result_.requests[i];
        rec.admitted_ms = clock_;
        SplitPlan plan;
        const auto n = static_cast<InstanceId>(cores_.size());
        switch (cfg_.system) {
            case SystemKind::kAps: {
                const Decision d = scheduler_->schedule(r.planning(), snapshot());
                plan = d.plan;
                rec.probes = d.probes.size();
                rec.decision_us = d.decision_us;
                if (d.committed_probe >= 0) {
                    const Probe& p = d.probes[static_cast<std::size_t>(d.committed_probe)];
                    rec.predicted_alpha_ms = p.t1;
                    rec.predicted_beta_ms = p.t2;
                }
                break;
            }
            case SystemKind::kColoc: {
                const InstanceId k = coloc_cursor_++ % n;
                plan = {0.0, 0, k, k};
                break;
            }
            case SystemKind::kDisagg: {
                const InstanceId pools = n / 2;
                plan.alpha_instance = 2 * (prefill_cursor_++ % pools);
                plan.beta_instance = 2 * (decode_cursor_++ % pools) + 1;
                plan.split = r.prompt_len;
                plan.phi = static_cast<double>(r.prompt_len) / static_cast<double>(r.planned_len());
                break;
            }
        }
        commit(i, plan);
    }

    void commit(std::size_t i, const SplitPlan& plan) {
        const Request& r = req(i);
        Live& l = live_[i];
        RequestRecord& rec = result_.requests[i];
        rec.plan = plan;
        l.admitted = true;
        const TokenCount s = plan.split;
        const TokenCount lp = r.planned_len();
        auto [alpha, beta] = split_at(r.id, r.prompt_len, lp, s);

        if (!alpha.empty()) {
            WorkItem a = make_work_item(alpha, r.prompt_len);
            const TokenCount planned_decode = std::max<TokenCount>(0, s - r.prompt_len);
            a.decode_left = beta.empty() ? r.decode_len : std::min(planned_decode, r.decode_len);
            l.alpha_live = true;
            l.reserve_alpha = s;
            reserved_[plan.alpha_instance] += s;
            cores_[plan.alpha_instance].enqueue(a);
        }
        if (!beta.empty()) {
            WorkItem b = make_work_item(beta, r.prompt_len);
            b.decode_left =
                std::max<TokenCount>(0, r.decode_len - std::max<TokenCount>(0, s - r.prompt_len));
            l.beta = b;
            if (alpha.empty()) {
                activate_beta(i);
            } else {
                l.beta_waiting = true;
                l.needs_transfer = plan.alpha_instance != plan.beta_instance;
                rec.handoff = l.needs_transfer;
                waiting_betas_.insert(i);
            }
        }
        kick(plan.alpha_instance);
        kick(plan.beta_instance);
    }

    // Enqueue beta once its KV is present; waits for HBM room if needed.
    void activate_beta(std::size_t i) {
        Live& l = live_[i];
        const InstanceId k = result_.requests[i].plan.beta_instance;
        l.beta_waiting = false;
        if (l.beta.done()) {
            // Actual decode ended inside alpha's span.
            waiting_betas_.erase(i);
            l.cancelled = true;
            result_.requests[i].beta_cancelled = true;
            result_.requests[i].handoff = false;
            maybe_done(i);
            return;
        }
        if (!activation_[k].empty() || !room_for_beta(i)) {
            activation_[k].push_back(i);
            return;
        }
        enqueue_beta(i);
        kick(k);
    }

    // Beta reserves its planned final KV only once it lands on its instance.
    bool room_for_beta(std::size_t i) const {
        const Live& l = live_[i];
        const InstanceId k = result_.requests[i].plan.beta_instance;
        return cfg_.hardware.hbm_capacity_tokens - reserved_[k] >= req(i).planned_len() &&
               cores_[k].kv_free() >= l.beta.context;
    }

    void enqueue_beta(std::size_t i) {
        Live& l = live_[i];
        const InstanceId k = result_.requests[i].plan.beta_instance;
        waiting_betas_.erase(i);
        l.beta_live = true;
        l.reserve_beta = req(i).planned_len();
        reserved_[k] += l.reserve_beta;
        cores_[k].enqueue(l.beta);
    }

    void drain_activation(InstanceId k) {
        auto& q = activation_[k];
        while (!q.empty() && room_for_beta(q.front())) {
            const std::size_t i = q.front();
            q.pop_front();
            enqueue_beta(i);
        }
        kick(k);
    }

    void release_reservation(InstanceId k, TokenCount n) {
        reserved_[k] -= n;
        if (reserved_[k] < 0) throw Error("KV reservation underflow");
    }

    void maybe_done(std::size_t i) {
        Live& l = live_[i];
        if (l.done || l.alpha_live || l.beta_waiting || l.beta_live || l.chunks_in_flight > 0 ||
            l.alpha_kv > 0)
            return;
        l.done = true;
        if (l.emitted != req(i).decode_len)
            throw Error("request " + std::to_string(req(i).id) + " emitted " +
                        std::to_string(l.emitted) + " of " + std::to_string(req(i).decode_len) +
                        " tokens");
        --remaining_;
    }

    void kick(InstanceId k) {
        if (inflight_[k] || !cores_[k].has_work()) return;
        auto b = cores_[k].compose(clock_);
        if (!b) return;
        const double model = batch_latency(b->shape, cfg_.hardware);
        const double lat = cfg_.hardware.noise_sigma > 0.0
                               ? noisy_batch_latency(b->shape, cfg_.hardware, rng_)
                               : model;
        if (cfg_.record_batches)
            result_.batches.push_back({k, clock_, clock_ + lat, b->shape, b->budget, model});
        inflight_[k] = std::move(*b);
        inflight_end_[k] = clock_ + lat;
        push({clock_ + lat, EventKind::kBatchDone, 0, k});
    }

    void on_batch_done(InstanceId k) {
        Batch b = std::move(*inflight_[k]);
        inflight_[k].reset();
        const double start = b.composed_at;
        InstanceStats& st = result_.instances[k];
        st.busy_ms += clock_ - start;
        ++st.batches;
        st.prefill_tokens += b.shape.plen;
        st.decode_tokens += b.shape.dnum;
        fnv(digest_, static_cast<std::uint64_t>(k));
        fnv(digest_, start);
        fnv(digest_, clock_);

        const StepOutcome& out = cores_[k].complete(std::move(b), clock_ - start);
        st.peak_kv = std::max(st.peak_kv, cores_[k].kv_used());

        for (const TokenEmission& t : out.tokens) {
            const std::size_t i = index_of(t.parent);
            const TokenCount j = t.position - req(i).prompt_len;
            auto& slots = result_.requests[i].token_ms;
            if (j < 1 || j > static_cast<TokenCount>(slots.size()) || slots[j - 1] >= 0.0)
                throw Error("token conservation violated for request " + std::to_string(t.parent));
            slots[j - 1] = clock_;
            ++live_[i].emitted;
        }
        if (cfg_.transfer == TransferMode::kChunked) {
            for (const ComputedProgress& p : out.progress) {
                if (p.role != Role::kAlpha) continue;
                const std::size_t i = index_of(p.parent);
                Live& l = live_[i];
                if (!l.needs_transfer) continue;
                // An alpha finishing in this batch ships its tail as one
                // message below instead of a full chunk plus a remainder.
                const bool finishing = std::any_of(
                    out.finished.begin(), out.finished.end(),
                    [&](const WorkItem& f) { return f.id == p.id; });
                if (finishing) continue;
                while (p.context - l.shipped >= cfg_.chunk_size)
                    push_chunk(i, cfg_.chunk_size);
            }
        }

        bool freed = false;
        for (const WorkItem& f : out.finished) {
            const std::size_t i = index_of(f.parent);
            Live& l = live_[i];
            const SplitPlan& plan = result_.requests[i].plan;
            if (f.role == Role::kBeta || (!l.beta_waiting)) {
                cores_[k].release_kv(f.context);
                if (f.role == Role::kBeta) {
                    l.beta_live = false;
                    release_reservation(k, l.reserve_beta);
                } else {
                    l.alpha_live = false;
                    release_reservation(k, l.reserve_alpha);
                }
                freed = true;
                maybe_done(i);
                continue;
            }
            // Alpha with a registered beta.
            l.alpha_live = false;
            RequestRecord& rec = result_.requests[i];
            rec.alpha_done_ms = clock_;
            if (f.context < plan.split) {
                // The request ended before the split point: drop beta and any
                // chunks still on the wire.
                result_.transfer.discarded_chunks += l.chunks_in_flight;
                cores_[k].release_kv(f.context);
                release_reservation(k, l.reserve_alpha);
                freed = true;
                activate_beta(i);
                maybe_done(i);
                continue;
            }
            if (!l.needs_transfer) {
                cores_[k].release_kv(f.context);
                release_reservation(k, l.reserve_alpha);
                freed = true;
                activate_beta(i);
                continue;
            }
            l.alpha_kv = f.context;
            const TokenCount rest = f.context - l.shipped;
            if (rest > 0) push_chunk(i, rest);
            if (l.chunks_in_flight == 0) alpha_transfer_complete(i);
        }

        if (freed) after_release();
        kick(k);
    }

    void push_chunk(std::size_t i, TokenCount tokens) {
        Live& l = live_[i];
        const SplitPlan& plan = result_.requests[i].plan;
        double& busy = channels_[{plan.alpha_instance, plan.beta_instance}];
        const double start = std::max(clock_, busy);
        const double dt = transfer_time(tokens, cfg_.hardware);
        busy = start + dt;
        result_.transfer.channel_busy_ms += dt;
        ++result_.transfer.chunks;
        result_.transfer.tokens += tokens;
        RequestRecord& rec = result_.requests[i];
        rec.transferred_tokens += tokens;
        ++rec.chunks;
        l.shipped += tokens;
        ++l.chunks_in_flight;
        chunks_.push_back({i, tokens, start});
        const std::size_t c = chunks_.size() - 1;
        push({start, EventKind::kTransferStarted, 0, c});
        push({start + dt, EventKind::kDelivery, 0, c});
    }

    void on_delivery(std::size_t c) {
        const Chunk& ch = chunks_[c];
        Live& l = live_[ch.req];
        --l.chunks_in_flight;
        if (l.cancelled) {
            maybe_done(ch.req);
            return;
        }
        l.delivered += ch.tokens;
        if (!l.alpha_live && l.alpha_kv > 0 && l.chunks_in_flight == 0)
            alpha_transfer_complete(ch.req);
    }

    void alpha_transfer_complete(std::size_t i) {
        Live& l = live_[i];
        RequestRecord& rec = result_.requests[i];
        rec.kv_ready_ms = clock_;
        const InstanceId a = rec.plan.alpha_instance;
        cores_[a].release_kv(l.alpha_kv);
        release_reservation(a, l.reserve_alpha);
        l.alpha_kv = 0;
        activate_beta(i);
        after_release();
        kick(a);
    }

    void after_release() {
        for (std::size_t k = 0; k < cores_.size(); ++k)
            if (!activation_[k].empty()) drain_activation(static_cast<InstanceId>(k));
        drain_backlog();
    }

    std::string deadlock_report() const {
        std::ostringstream os;
        os << "deadlock at t=" << clock_ << " ms: " << remaining_ << " request(s) unfinished";
        int shown = 0;
        for (std::size_t i = 0; i < live_.size() && shown < 5; ++i) {
            const Live& l = live_[i];
            if (l.done) continue;
            ++shown;
            os << "\n  request " << req(i).id << ": admitted=" << l.admitted
               << " alpha_live=" << l.alpha_live << " beta_waiting=" << l.beta_waiting
               << " beta_live=" << l.beta_live << " emitted=" << l.emitted << "/"
               << req(i).decode_len << " chunks_in_flight=" << l.chunks_in_flight;
        }
        for (std::size_t k = 0; k < cores_.size(); ++k)
            os << "\n  instance " << k << ": queued=" << cores_[k].queues().size()
               << " kv_used=" << cores_[k].kv_used() << " reserved=" << reserved_[k];
        os << "\n  backlog=" << backlog_.size();
        return os.str();
    }

    void finish() {
        result_.end_ms = clock_;
        for (std::size_t k = 0; k < cores_.size(); ++k) {
            InstanceStats& st = result_.instances[k];
            st.idle_ms = clock_ - st.busy_ms;
        }
        for (const RequestRecord& rec : result_.requests) {
            fnv(digest_, rec.id);
            for (double t : rec.token_ms) fnv(digest_, t);
            result_.transfer.total_wait_ms += rec.handoff_wait();
        }
        result_.digest = digest_;
        if (scheduler_) {
            result_.predictor_probes = scheduler_->predictor().probes();
            result_.predictor_cache_hits = scheduler_->predictor().cache_hits();
            result_.scheduler_fallbacks = scheduler_->fallbacks();
        }
    }

    const std::vector<Request>& w_;
    ClusterConfig cfg_;
    std::mt19937_64 rng_;
    std::vector<InstanceCore> cores_;
    std::vector<std::optional<Batch>> inflight_;
    std::vector<double> inflight_end_;
    std::vector<TokenCount> reserved_;
    std::vector<std::deque<std::size_t>> activation_;
    std::optional<GlobalScheduler> scheduler_;
    std::vector<Live> live_;
    std::unordered_map<RequestId, std::size_t> index_;
    std::set<std::size_t> waiting_betas_;
    std::deque<std::size_t> backlog_;
    std::map<std::pair<InstanceId, InstanceId>, double> channels_;
    std::vector<Chunk> chunks_;
    std::priority_queue<Event, std::vector<Event>, Later> events_;
    std::uint64_t seq_ = 0;
    double clock_ = 0.0;
    std::size_t remaining_ = 0;
    InstanceId coloc_cursor_ = 0;
    InstanceId prefill_cursor_ = 0;
    InstanceId decode_cursor_ = 0;
    std::uint64_t digest_ = kFnvOffset;
    RunResult result_;
};

}  // namespace

RunResult run(const std::vector<Request>& workload, const ClusterConfig& config) {
    if (workload.empty()) {
        RunResult r;
        r.instances.resize(static_cast<std::size_t>(std::max(config.instances, 0)));
        config.validate();
        r.digest = kFnvOffset;
        return r;
    }
    Simulation sim(workload, config);
    return sim.run();
}

void write_jsonl(std::ostream& out, const RunResult& result) {
    using nlohmann::json;
    for (const RequestRecord& r : result.requests) {
        json j;
        j["id"] = r.id;
        j["arrival_ms"] = r.arrival_ms;
        j["prompt_tokens"] = r.prompt_len;
        j["output_tokens"] = r.decode_len;
        j["predicted_output"] = r.predicted_decode;
        j["split"] = r.plan.split;
        j["phi"] = r.plan.phi;
        j["alpha_instance"] = r.plan.alpha_instance;
        j["beta_instance"] = r.plan.beta_instance;
        j["ttft_ms"] = r.ttft();
        j["handoff_wait_ms"] = r.handoff_wait();
        j["beta_cancelled"] = r.beta_cancelled;
        j["token_ms"] = r.token_ms;
        out << j.dump() << '\n';
    }
    json s;
    s["end_ms"] = result.end_ms;
    s["events"] = result.events;
    s["requests"] = result.requests.size();
    s["utilization"] = result.utilization();
    s["transfer_chunks"] = result.transfer.chunks;
    s["transfer_tokens"] = result.transfer.tokens;
    s["transfer_wait_ms"] = result.transfer.total_wait_ms;
    s["predictor_probes"] = result.predictor_probes;
    s["predictor_cache_hits"] = result.predictor_cache_hits;
    std::ostringstream d;
    d << std::hex << result.digest;
    s["digest"] = d.str();
    out << json{{"summary", s}}.dump() << '\n';
}

}  // namespace apsim
