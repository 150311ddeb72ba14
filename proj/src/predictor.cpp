#include "apsim/predictor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <string>

namespace apsim {

namespace {

constexpr std::uint64_t kFnvOffset = 1469598103934665603ull;
constexpr std::uint64_t kFnvPrime = 1099511628211ull;

struct Fnv {
    std::uint64_t h = kFnvOffset;
    void mix(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) {
            h ^= (v >> (8 * i)) & 0xffu;
            h *= kFnvPrime;
        }
    }
    void mix(double v) { mix(std::bit_cast<std::uint64_t>(v)); }
    void mix(TokenCount v) { mix(static_cast<std::uint64_t>(v)); }
};

void mix_item(Fnv& f, const WorkItem& w) {
    f.mix(w.id);
    f.mix(w.prefill_left);
    f.mix(w.planned_decode_left);
    f.mix(w.context);
    f.mix(w.ready_at);
}

constexpr double kNever = std::numeric_limits<double>::infinity();

}  // namespace

VirtualState VirtualState::from_live(const InstanceView& view, double now) {
    if (view.core == nullptr) throw Error("predictor: instance snapshot missing");
    VirtualState s{*view.core, now, {}, 0.0, 0.0};
    if (view.inflight) {
        const double measured = view.inflight_end - view.inflight->composed_at;
        const StepOutcome& out = s.core.complete(*view.inflight, measured);
        for (const WorkItem& f : out.finished) s.core.release_kv(f.context);
        s.clock = std::max(now, view.inflight_end);
    }
    s.core.adopt_planning_view();
    return s;
}

std::uint64_t VirtualState::digest() const {
    Fnv f;
    f.mix(clock);
    f.mix(core.kv_used());
    f.mix(core.table().version());
    f.mix(static_cast<std::uint64_t>(core.queues().prefill.size()));
    f.mix(static_cast<std::uint64_t>(core.queues().decode.size()));
    for (const WorkItem& w : core.queues().prefill) mix_item(f, w);
    for (const WorkItem& w : core.queues().decode) mix_item(f, w);
    for (const WorkItem& w : waiting) mix_item(f, w);
    if (const auto& p = core.previous()) {
        f.mix(p->shape.plen);
        f.mix(p->shape.dnum);
        f.mix(p->shape.ctx);
        f.mix(p->measured_time);
    }
    return f.h;
}

TokenCount VirtualState::outstanding_tokens() const {
    TokenCount n = 0;
    for (const WorkItem& w : core.queues().prefill) n += w.prefill_left + w.decode_left;
    for (const WorkItem& w : core.queues().decode) n += w.decode_left;
    for (const WorkItem& w : waiting) n += w.prefill_left + w.decode_left;
    return n;
}

std::optional<double> Timeline::finish_of(MicroId id) const {
    for (const auto& [m, t] : finish_ms)
        if (m == id) return t;
    return std::nullopt;
}

WorkItem make_work_item(const MicroRequest& m, TokenCount prompt_len) {
    WorkItem w;
    w.id = micro_id(m.parent, m.role);
    w.parent = m.parent;
    w.role = m.role;
    w.prompt_len = prompt_len;
    w.prefill_left = m.prefill_tokens;
    w.decode_left = m.decode_tokens;
    w.planned_decode_left = m.decode_tokens;
    w.context = m.prefix_tokens();
    w.span_end = m.span.end;
    return w;
}

namespace {

// Single-instance stepping shared by simulate_virtual and simulate_pair.
class Stepper {
public:
    Stepper(VirtualState& s, Timeline& t, const SimulateOptions& o) : s_(s), t_(t), o_(o) {
        t_.start_ms = s_.clock;
        t_.end_ms = s_.clock;
    }

    // Earliest time this instance can do something, or kNever.
    double next_time() const {
        if (s_.core.has_work()) return s_.clock;
        const double r = next_ready();
        return r == kNever ? kNever : std::max(r, s_.clock);
    }

    // Runs the decode-only passes that start before `before` and before the
    // next waiting item is admitted. Same result as step() per pass. Returns
    // whether any pass ran.
    bool skip_decodes(double before) {
        if (!o_.skip_decode_runs || o_.record_history || t_.passes >= o_.max_passes)
            return false;
        DecodeRun r;
        r.clock = s_.clock;
        r.start_before = std::min(before, next_ready());
        r.busy_ms = s_.decode_clk;
        r.max_passes = o_.max_passes - t_.passes;
        s_.core.run_decode_passes(r);
        if (r.passes == 0) return false;
        s_.clock = r.clock;
        s_.decode_clk = r.busy_ms;
        t_.passes += r.passes;
        t_.end_ms = s_.clock;
        return true;
    }

    void admit_ready() {
        auto& w = s_.waiting;
        if (w.empty()) return;
        std::stable_sort(w.begin(), w.end(),
                         [](const WorkItem& a, const WorkItem& b) { return a.ready_at < b.ready_at; });
        std::size_t n = 0;
        while (n < w.size() && w[n].ready_at <= s_.clock) {
            s_.core.enqueue(w[n]);
            ++n;
        }
        w.erase(w.begin(), w.begin() + static_cast<std::ptrdiff_t>(n));
    }

    // One pass. Returns the items that finished (valid until the next call).
    const std::vector<WorkItem>& step() {
        finished_.clear();
        if (!s_.core.has_work()) s_.clock = std::max(s_.clock, next_time());
        admit_ready();
        auto b = s_.core.compose(s_.clock);
        if (!b) {
            if (s_.core.has_work())
                throw Error("simulate_virtual: no progress possible with " +
                            std::to_string(s_.core.queues().size()) + " micro-requests queued");
            return finished_;
        }
        if (++t_.passes > o_.max_passes) throw Error("simulate_virtual: pass limit exceeded");
        const double d = batch_latency(b->shape, s_.core.hardware());
        (b->shape.plen > 0 ? s_.prefill_clk : s_.decode_clk) += d;
        const TokenCount plen = b->shape.plen;
        const TokenCount dnum = b->shape.dnum;
        const StepOutcome& out = s_.core.complete(std::move(*b), d);
        s_.clock += d;
        for (const WorkItem& f : out.finished) {
            s_.core.release_kv(f.context);
            t_.finish_ms.emplace_back(f.id, s_.clock);
            finished_.push_back(f);
        }
        t_.end_ms = s_.clock;
        if (o_.record_history) t_.history.push_back({s_.clock, plen, dnum, s_.outstanding_tokens()});
        return finished_;
    }

private:
    double next_ready() const {
        double r = kNever;
        for (const WorkItem& w : s_.waiting) r = std::min(r, w.ready_at);
        return r;
    }

    VirtualState& s_;
    Timeline& t_;
    const SimulateOptions& o_;
    std::vector<WorkItem> finished_;
};

}  // namespace

Timeline simulate_virtual(VirtualState& state, const SimulateOptions& options) {
    Timeline t;
    Stepper st(state, t, options);
    while (st.next_time() != kNever)
        if (!st.skip_decodes(kNever)) st.step();
    if (!state.waiting.empty()) throw Error("simulate_virtual: work blocked on a missing dependency");
    return t;
}

Predictor::Predictor(PredictorOptions options) : options_(options) {}

std::size_t Predictor::CacheKeyHash::operator()(const CacheKey& k) const {
    return static_cast<std::size_t>(k.a ^ (k.b * 0x9e3779b97f4a7c15ull) ^ (k.shape << 1));
}

std::optional<PairPrediction> Predictor::cache_get(const CacheKey& k) {
    const auto it = index_.find(k);
    if (it == index_.end()) return std::nullopt;
    lru_.splice(lru_.begin(), lru_, it->second);
    return it->second->second;
}

void Predictor::cache_put(const CacheKey& k, PairPrediction v) {
    if (options_.cache_capacity == 0) return;
    lru_.emplace_front(k, v);
    index_[k] = lru_.begin();
    if (lru_.size() > options_.cache_capacity) {
        index_.erase(lru_.back().first);
        lru_.pop_back();
    }
}

Predictor::PairTimelines Predictor::simulate_pair(
    VirtualState a, VirtualState b, const std::vector<PendingHandoff>& links) const {
    Timeline ta, tb;
    SimulateOptions opts;
    opts.skip_decode_runs = options_.skip_decode_runs;
    VirtualState* states[2] = {&a, &b};
    Stepper steppers[2] = {Stepper(a, ta, opts), Stepper(b, tb, opts)};

    // Betas blocked on an alpha that is still queued somewhere in the pair.
    struct Blocked {
        PendingHandoff link;
        int target;
        bool released = false;
    };
    std::vector<Blocked> blocked;
    for (const PendingHandoff& l : links) {
        const int target = l.beta_instance == a.core.id() ? 0 : 1;
        WorkItem beta = l.beta;
        beta.ready_at = kNever;
        states[target]->waiting.push_back(beta);
        blocked.push_back({l, target});
    }
    auto delay = [&](const PendingHandoff& l, const HardwareProfile& hw) {
        const TokenCount chunk = options_.transfer_chunk;
        const TokenCount last = chunk > 0 ? ((l.split - 1) % chunk) + 1 : l.split;
        return transfer_time(last, hw);
    };

    while (true) {
        const double n0 = steppers[0].next_time();
        const double n1 = steppers[1].next_time();
        if (n0 == kNever && n1 == kNever) break;
        const int i = n0 <= n1 ? 0 : 1;
        // While a beta here still waits on the other instance, passes may only
        // start where per-pass stepping would: up to n1 for instance 0 (it wins
        // ties), strictly before n0 for instance 1.
        const bool linked = std::any_of(blocked.begin(), blocked.end(), [&](const Blocked& bl) {
            return bl.target == i && !bl.released;
        });
        const double before = !linked ? kNever : i == 0 ? std::nextafter(n1, kNever) : n0;
        if (steppers[i].skip_decodes(before)) continue;
        const auto& finished = steppers[i].step();
        for (const WorkItem& f : finished) {
            for (Blocked& bl : blocked) {
                if (bl.released || bl.link.alpha != f.id) continue;
                bl.released = true;
                const double ready = states[i]->clock + delay(bl.link, states[i]->core.hardware());
                for (WorkItem& w : states[bl.target]->waiting)
                    if (w.id == bl.link.beta.id) w.ready_at = ready;
            }
        }
    }
    if (!a.waiting.empty() || !b.waiting.empty())
        throw Error("predictor: beta waits on an alpha outside the pair");
    return {std::move(ta), std::move(tb), a.prefill_clk + b.prefill_clk,
            a.decode_clk + b.decode_clk};
}

PairPrediction Predictor::predict_pair(const MicroRequest& alpha, const MicroRequest& beta,
                                       TokenCount prompt_len, InstanceId alpha_instance,
                                       InstanceId beta_instance, const ClusterSnapshot& load) {
    if (alpha_instance == beta_instance) throw Error("predict_pair: instances must differ");
    if (alpha_instance >= load.instances.size() || beta_instance >= load.instances.size() ||
        load.instances[alpha_instance].core == nullptr ||
        load.instances[beta_instance].core == nullptr)
        throw Error("predict_pair: instance snapshot missing");

    VirtualState a = VirtualState::from_live(load.instances[alpha_instance], load.now);
    VirtualState b = VirtualState::from_live(load.instances[beta_instance], load.now);

    std::vector<PendingHandoff> links;
    auto in_queues = [](const VirtualState& s, MicroId id) {
        for (const WorkItem& w : s.core.queues().prefill)
            if (w.id == id) return true;
        for (const WorkItem& w : s.core.queues().decode)
            if (w.id == id) return true;
        return false;
    };
    for (const PendingHandoff& p : load.pending) {
        VirtualState* target = p.beta_instance == alpha_instance  ? &a
                               : p.beta_instance == beta_instance ? &b
                                                                   : nullptr;
        if (target == nullptr) continue;
        WorkItem w = p.beta;
        w.decode_left = w.planned_decode_left;
        const VirtualState& src = p.alpha_instance == alpha_instance ? a : b;
        if (options_.model_handoff && p.alpha_instance != p.beta_instance &&
            (p.alpha_instance == alpha_instance || p.alpha_instance == beta_instance) &&
            in_queues(src, p.alpha)) {
            PendingHandoff l = p;
            l.beta = w;
            links.push_back(l);
        } else {
            w.ready_at = load.now;
            target->waiting.push_back(w);
        }
    }

    if (!alpha.empty()) {
        WorkItem w = make_work_item(alpha, prompt_len);
        w.ready_at = load.now;
        a.waiting.push_back(w);
    }
    if (!beta.empty()) {
        WorkItem w = make_work_item(beta, prompt_len);
        if (options_.model_handoff && !alpha.empty()) {
            links.push_back({w, beta_instance, alpha_instance, micro_id(alpha.parent, Role::kAlpha),
                             alpha.span.end - 1});
        } else {
            w.ready_at = load.now;
            b.waiting.push_back(w);
        }
    }

    Fnv shape;
    shape.mix(alpha.span.begin);
    shape.mix(alpha.span.end);
    shape.mix(beta.span.begin);
    shape.mix(beta.span.end);
    shape.mix(prompt_len);
    shape.mix(static_cast<std::uint64_t>(links.size()));
    for (const auto& l : links) {
        shape.mix(l.alpha);
        shape.mix(l.beta.id);
    }
    const CacheKey key{a.digest(), b.digest(), shape.h};
    if (auto hit = cache_get(key)) {
        ++hits_;
        hit->cached = true;
        return *hit;
    }
    ++misses_;

    const double now = load.now;
    const PairTimelines sim = simulate_pair(std::move(a), std::move(b), links);
    PairPrediction p;
    p.t1 = std::max(0.0, sim.first.end_ms - now);
    p.t2 = std::max(0.0, sim.second.end_ms - now);
    p.prefill_clk = sim.prefill_clk;
    p.decode_clk = sim.decode_clk;
    cache_put(key, p);
    return p;
}

}  // namespace apsim
