#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>

#include "apsim/global_scheduler.hpp"
#include "apsim/instance.hpp"
#include "apsim/predictor.hpp"

using namespace apsim;

namespace {

ProfileTable seeded() {
    ProfileTable t;
    t.seed_from(HardwareProfile{});
    return t;
}

InstanceCore make_core(InstanceId id) {
    return InstanceCore(id, HardwareProfile{}, LocalPolicy{}, seeded());
}

ClusterSnapshot snapshot(const std::vector<InstanceCore>& cores) {
    ClusterSnapshot s;
    for (const InstanceCore& c : cores) s.instances.push_back({&c, std::nullopt, 0.0});
    return s;
}

// Whole request of prompt p, planned decode d as one micro-request.
WorkItem whole(RequestId id, TokenCount p, TokenCount d) {
    const auto [a, b] = split_at(id, p, p + d, p + d);
    (void)b;
    WorkItem w = make_work_item(a, p);
    w.planned_decode_left = w.decode_left;
    return w;
}

}  // namespace

TEST_CASE("empty state gives an empty timeline") {
    VirtualState v{make_core(0)};
    v.clock = 12.5;
    const Timeline t = simulate_virtual(v);
    CHECK(t.passes == 0);
    CHECK(t.completion() == 0.0);
    CHECK(v.clock == 12.5);
}

TEST_CASE("ten decode tokens take ten passes") {
    VirtualState v{make_core(0)};
    WorkItem w;
    w.id = micro_id(1, Role::kBeta);
    w.parent = 1;
    w.role = Role::kBeta;
    w.prompt_len = 5;
    w.context = 5;
    w.decode_left = w.planned_decode_left = 10;
    w.span_end = 16;
    v.core.enqueue(w);
    const Timeline t = simulate_virtual(v);
    CHECK(t.passes == 10);
    REQUIRE(t.finish_of(w.id).has_value());
}

TEST_CASE("single request: completion is the sum of its batch latencies") {
    VirtualState v{make_core(0)};
    v.core.enqueue(whole(1, 700, 5));
    SimulateOptions o;
    o.record_history = true;
    const Timeline t = simulate_virtual(v, o);
    REQUIRE(!t.history.empty());
    // Rebuild each pass from the recorded shapes and the cost model.
    InstanceCore ref = make_core(0);
    ref.enqueue(whole(1, 700, 5));
    double sum = 0.0;
    while (auto b = ref.compose(sum)) {
        const double ms = batch_latency(b->shape, HardwareProfile{});
        sum += ms;
        ref.complete(*b, ms);
    }
    CHECK(t.completion() == doctest::Approx(sum));
    CHECK(t.passes == t.history.size());
}

TEST_CASE("empty beta leaves the beta instance's prediction at its own load") {
    std::vector<InstanceCore> cores{make_core(0), make_core(1)};
    cores[1].enqueue(whole(5, 900, 40));
    const ClusterSnapshot s = snapshot(cores);
    Predictor p;
    const auto [a, b] = split_at(9, 300, 340, 340);
    const PairPrediction pp = p.predict_pair(a, b, 300, 0, 1, s);
    VirtualState alone = VirtualState::from_live(s.instances[1], 0.0);
    CHECK(pp.t2 == doctest::Approx(simulate_virtual(alone).completion()));
    CHECK(pp.t1 > 0.0);
}

TEST_CASE("symmetric idle pair has a balanced split") {
    std::vector<InstanceCore> cores{make_core(0), make_core(1)};
    const ClusterSnapshot s = snapshot(cores);
    Predictor p;
    double best = 1e18;
    for (TokenCount k = 0; k <= 2048; ++k) {
        const auto [a, b] = split_at(1, 1024, 2048, k);
        const PairPrediction pp = p.predict_pair(a, b, 1024, 0, 1, s);
        best = std::min(best, std::abs(pp.t1 - pp.t2));
    }
    CHECK(best <= SchedulerConfig{}.epsilon_ms);
}

TEST_CASE("predict_pair leaves the live cluster untouched") {
    std::vector<InstanceCore> cores{make_core(0), make_core(1)};
    cores[0].enqueue(whole(3, 1200, 30));
    cores[1].enqueue(whole(4, 100, 300));
    const ClusterSnapshot s = snapshot(cores);
    const std::uint64_t d0 = VirtualState::from_live(s.instances[0], 0.0).digest();
    const std::uint64_t d1 = VirtualState::from_live(s.instances[1], 0.0).digest();
    Predictor p;
    const auto [a, b] = split_at(9, 512, 1024, 700);
    p.predict_pair(a, b, 512, 0, 1, s);
    CHECK(VirtualState::from_live(s.instances[0], 0.0).digest() == d0);
    CHECK(VirtualState::from_live(s.instances[1], 0.0).digest() == d1);
    CHECK(cores[0].queues().size() == 1);
}

TEST_CASE("adding load never shortens predictions") {
    std::mt19937_64 rng(8);
    std::uniform_int_distribution<TokenCount> p(1, 3000), d(1, 400);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<InstanceCore> cores{make_core(0), make_core(1)};
        for (int i = 0; i < 3; ++i) cores[i % 2].enqueue(whole(10 + i, p(rng), d(rng)));
        Predictor pred({false, 256, 0});
        const TokenCount pl = p(rng), len = pl + d(rng);
        const auto [a, b] = split_at(99, pl, len, len / 2);
        const PairPrediction before = pred.predict_pair(a, b, pl, 0, 1, snapshot(cores));
        cores[0].enqueue(whole(50, p(rng), d(rng)));
        cores[1].enqueue(whole(51, p(rng), d(rng)));
        const PairPrediction after = pred.predict_pair(a, b, pl, 0, 1, snapshot(cores));
        CHECK(after.t1 >= before.t1 - 1e-9);
        CHECK(after.t2 >= before.t2 - 1e-9);
    }
}

TEST_CASE("repeat probes hit the cache") {
    std::vector<InstanceCore> cores{make_core(0), make_core(1)};
    const ClusterSnapshot s = snapshot(cores);
    Predictor p;
    const auto [a, b] = split_at(1, 512, 600, 550);
    const PairPrediction first = p.predict_pair(a, b, 512, 0, 1, s);
    const PairPrediction second = p.predict_pair(a, b, 512, 0, 1, s);
    CHECK_FALSE(first.cached);
    CHECK(second.cached);
    CHECK(second.t1 == first.t1);
    CHECK(p.cache_hits() == 1);
    CHECK(p.probes() == 2);

    Predictor off({false, 256, 0});
    off.predict_pair(a, b, 512, 0, 1, s);
    CHECK_FALSE(off.predict_pair(a, b, 512, 0, 1, s).cached);
}

TEST_CASE("handoff modelling delays beta until alpha's KV lands") {
    std::vector<InstanceCore> cores{make_core(0), make_core(1)};
    const ClusterSnapshot s = snapshot(cores);
    const auto [a, b] = split_at(1, 1024, 2048, 1024);
    Predictor plain({false, 256, 16});
    Predictor handoff({true, 256, 16});
    const PairPrediction x = plain.predict_pair(a, b, 1024, 0, 1, s);
    const PairPrediction y = handoff.predict_pair(a, b, 1024, 0, 1, s);
    CHECK(y.t2 > x.t2);
    CHECK(y.t2 > y.t1);
    CHECK(y.t1 == doctest::Approx(x.t1));
}

TEST_CASE("a missing instance is an error") {
    std::vector<InstanceCore> cores{make_core(0)};
    Predictor p;
    const auto [a, b] = split_at(1, 10, 20, 10);
    CHECK_THROWS_AS(p.predict_pair(a, b, 10, 0, 1, snapshot(cores)), Error);
}

TEST_CASE("skipping decode runs matches stepping every pass") {
    std::mt19937_64 rng(21);
    std::uniform_int_distribution<TokenCount> p(1, 3000), d(1, 600);
    for (int trial = 0; trial < 40; ++trial) {
        LocalPolicy policy;
        if (trial % 3 == 1) policy.kind = PolicyKind::kChunked;
        if (trial % 3 == 2) policy.n_max = 3;
        std::vector<InstanceCore> cores;
        for (InstanceId i = 0; i < 2; ++i) cores.emplace_back(i, HardwareProfile{}, policy, seeded());
        for (int i = 0; i < 6; ++i) {
            InstanceCore& c = cores[static_cast<std::size_t>(i % 2)];
            c.enqueue(whole(10 + i, p(rng), d(rng)));
            // Run a few live passes so items are mid-decode with a previous batch.
            for (int k = 0; k < 4; ++k)
                if (auto b = c.compose(0.0)) {
                    const StepOutcome& out = c.complete(*b, batch_latency(b->shape, c.hardware()));
                    for (const WorkItem& f : out.finished) c.release_kv(f.context);
                }
        }
        const ClusterSnapshot s = snapshot(cores);

        VirtualState fast = VirtualState::from_live(s.instances[0], 0.0);
        VirtualState ref = fast;
        WorkItem later = whole(90, p(rng), d(rng));
        later.ready_at = 40.0 * trial;
        fast.waiting.push_back(later);
        ref.waiting.push_back(later);
        SimulateOptions slow;
        slow.skip_decode_runs = false;
        const Timeline tf = simulate_virtual(fast);
        const Timeline tr = simulate_virtual(ref, slow);
        CHECK(tf.end_ms == tr.end_ms);
        CHECK(tf.passes == tr.passes);
        CHECK(tf.finish_ms == tr.finish_ms);
        CHECK(fast.digest() == ref.digest());
        CHECK(fast.decode_clk == ref.decode_clk);

        const TokenCount pl = p(rng), len = pl + d(rng);
        const auto [a, b] = split_at(99, pl, len, pl + (len - pl) / 3);
        PredictorOptions o{true, 256, 0};
        const PairPrediction x = Predictor(o).predict_pair(a, b, pl, 0, 1, s);
        o.skip_decode_runs = false;
        const PairPrediction y = Predictor(o).predict_pair(a, b, pl, 0, 1, s);
        CHECK(x.t1 == y.t1);
        CHECK(x.t2 == y.t2);
        CHECK(x.prefill_clk == y.prefill_clk);
        CHECK(x.decode_clk == y.decode_clk);
    }
}
