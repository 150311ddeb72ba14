#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <random>

#include "apsim/cost_model.hpp"
#include "apsim/local_scheduler.hpp"

using namespace apsim;

namespace {

constexpr TokenCount kLots = 1 << 30;

WorkItem prefill_item(MicroId id, TokenCount left, TokenCount context = 0) {
    WorkItem w;
    w.id = id;
    w.prefill_left = left;
    w.decode_left = 1;
    w.context = context;
    return w;
}

WorkItem decode_item(MicroId id, TokenCount context) {
    WorkItem w;
    w.id = id;
    w.decode_left = 10;
    w.context = context;
    return w;
}

SchedulerQueues random_queues(std::mt19937_64& rng) {
    SchedulerQueues q;
    std::uniform_int_distribution<int> nd(0, 300), np(0, 6);
    std::uniform_int_distribution<TokenCount> ctx(1, 16384), left(1, 8192), prefix(0, 4096);
    // Resident KV never exceeds HBM on a real instance.
    const int d = nd(rng);
    TokenCount resident = 0;
    for (int i = 0; i < d; ++i) {
        const TokenCount c = ctx(rng);
        if (resident + c > HardwareProfile{}.hbm_capacity_tokens) break;
        resident += c;
        q.decode.push_back(decode_item(1000 + i, c));
    }
    const int p = np(rng);
    for (int i = 0; i < p; ++i) q.prefill.push_back(prefill_item(i + 1, left(rng), i == 0 ? prefix(rng) : 0));
    return q;
}

double slack_for(const ProfileTable& t, const Batch& b, const HardwareProfile& hw) {
    const int pb = t.plen_edges().bucket(b.shape.plen);
    BatchShape lo = b.shape, hi = b.shape;
    lo.plen = t.plen_edges().lower(pb);
    hi.plen = t.plen_edges().upper(pb);
    return batch_latency(hi, hw) - batch_latency(lo, hw);
}

}  // namespace

TEST_CASE("one long prefill receives exactly the budget") {
    ProfileTableOptions o;
    o.default_budget = 2048;
    ProfileTable empty(o);
    SchedulerQueues q;
    q.prefill.push_back(prefill_item(1, 4096));
    const auto b = compose_batch_aps(q, 48, nullptr, empty, 256, {kLots});
    REQUIRE(b);
    REQUIRE(b->prefill_grants.size() == 1);
    CHECK(b->prefill_grants[0].tokens == 2048);
    CHECK(b->shape.plen == 2048);
    CHECK(b->decode_entries.empty());
}

TEST_CASE("exhausted budget yields a pure decode batch") {
    ProfileTable t;
    t.seed_from(HardwareProfile{});
    SchedulerQueues q;
    for (int i = 0; i < 256; ++i) q.decode.push_back(decode_item(100 + i, 65536));
    q.prefill.push_back(prefill_item(1, 500));
    const auto b = compose_batch_aps(q, 48, nullptr, t, 256, {kLots});
    REQUIRE(b);
    CHECK(b->budget == 0);
    CHECK(b->prefill_grants.empty());
    CHECK(b->decode_entries.size() == 256);
}

TEST_CASE("empty queues compose nothing") {
    ProfileTable t;
    SchedulerQueues q;
    CHECK_FALSE(compose_batch_aps(q, 48, nullptr, t, 256, {kLots}));
    CHECK_FALSE(compose_batch_chunked(q, 2048, 256, {kLots}));
}

TEST_CASE("previous batch is recorded before composing") {
    ProfileTable t;
    Batch prev;
    prev.decode_entries.push_back({1, 100});
    prev.shape = {0, 1, 100.0, 0.0};
    prev.measured_time = 9.5;
    SchedulerQueues q;
    compose_batch_aps(q, 48, &prev, t, 256, {kLots});
    CHECK(*t.lookup(0, 100, 1) == 9.5);
}

TEST_CASE("random queues: SLO bound, FIFO, work conservation, caps") {
    const HardwareProfile hw;
    ProfileTable t;
    t.seed_from(hw);
    std::mt19937_64 rng(2024);
    std::uniform_int_distribution<TokenCount> kv(0, 600000);
    for (int i = 0; i < 1000; ++i) {
        const SchedulerQueues q = random_queues(rng);
        const ComposeLimits lim{kv(rng)};
        const ProfileTable before = t;
        const auto b = compose_batch_aps(q, 48, nullptr, t, 256, lim);
        if (q.empty()) {
            CHECK_FALSE(b);
            continue;
        }
        if (!b) {
            // Only possible with no decodes and no admissible prefill.
            CHECK(q.decode.empty());
            continue;
        }
        CHECK(b->decode_entries.size() == std::min<std::size_t>(q.decode.size(), 256));
        if (!b->decode_entries.empty() || b->prefill_grants.size() > 0) {
            const double lat = batch_latency(b->shape, hw);
            CHECK(lat <= 48.0 + slack_for(before, *b, hw) + 1e-9);
        }
        TokenCount granted = 0;
        for (std::size_t g = 0; g < b->prefill_grants.size(); ++g) {
            CHECK(b->prefill_grants[g].id == q.prefill[g].id);
            granted += b->prefill_grants[g].tokens;
            if (g + 1 < b->prefill_grants.size())
                CHECK(b->prefill_grants[g].tokens == q.prefill[g].prefill_left);
        }
        CHECK(granted <= b->budget);
        CHECK(granted + b->shape.dnum <= std::max<TokenCount>(lim.kv_free, b->shape.dnum));
        const TokenCount room = lim.kv_free - b->shape.dnum;
        if (b->budget > 0 && !q.prefill.empty() && room > 0) CHECK(granted > 0);
    }
}

TEST_CASE("HBM room limits prefill grants") {
    ProfileTable t;
    SchedulerQueues q;
    q.decode.push_back(decode_item(50, 10));
    q.prefill.push_back(prefill_item(1, 400));
    const auto b = compose_batch_aps(q, 48, nullptr, t, 256, {101});
    REQUIRE(b);
    REQUIRE(b->prefill_grants.size() == 1);
    CHECK(b->prefill_grants[0].tokens == 100);
}

TEST_CASE("fixed-chunk baseline ignores latency") {
    const HardwareProfile hw;
    SchedulerQueues q;
    for (int i = 0; i < 128; ++i) q.decode.push_back(decode_item(100 + i, 8192));
    q.prefill.push_back(prefill_item(1, 1500));
    q.prefill.push_back(prefill_item(2, 3000));
    const auto b = compose_batch_chunked(q, 2048, 256, {kLots});
    REQUIRE(b);
    CHECK(b->shape.plen == 2048);
    CHECK(b->prefill_grants.size() == 2);
    CHECK(b->prefill_grants[1].tokens == 548);
    // Heavy decode load plus a full chunk blows through a 100 ms TBT target.
    CHECK(batch_latency(b->shape, hw) > 100.0);

    const auto whole = compose_batch_chunked(q, kLots, 256, {kLots});
    REQUIRE(whole);
    CHECK(whole->shape.plen == 4500);
}

TEST_CASE("disaggregated roles") {
    SchedulerQueues q;
    for (int i = 0; i < 8; ++i) q.decode.push_back(decode_item(100 + i, 64));
    q.prefill.push_back(prefill_item(1, 9000));
    const auto d = compose_batch_disagg(q, PolicyKind::kDisaggDecode, 8192, 256, {kLots});
    REQUIRE(d);
    CHECK(d->decode_entries.size() == 8);
    CHECK(d->prefill_grants.empty());
    const auto p = compose_batch_disagg(q, PolicyKind::kDisaggPrefill, 8192, 256, {kLots});
    REQUIRE(p);
    CHECK(p->decode_entries.empty());
    CHECK(p->shape.plen == 8192);
    CHECK_THROWS_AS(compose_batch_disagg(q, PolicyKind::kAps, 8192, 256, {kLots}), Error);
}

TEST_CASE("policy names round trip") {
    for (PolicyKind k : {PolicyKind::kAps, PolicyKind::kChunked, PolicyKind::kDisaggPrefill,
                         PolicyKind::kDisaggDecode})
        CHECK(parse_policy_kind(to_string(k)) == k);
    CHECK_THROWS_AS(parse_policy_kind("fifo"), Error);
}
