#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <sstream>

#include "apsim/engine.hpp"
#include "apsim/instance.hpp"
#include "apsim/workload.hpp"

using namespace apsim;

namespace {

Request req(RequestId id, double at, TokenCount p, TokenCount d, TokenCount dhat = 0) {
    Request r;
    r.id = id;
    r.arrival_ms = at;
    r.prompt_len = p;
    r.decode_len = d;
    r.predicted_decode = dhat > 0 ? dhat : d;
    return r;
}

ClusterConfig forced_token(TokenCount s) {
    ClusterConfig c;
    c.forced.mode = ForcedSplit::Mode::kToken;
    c.forced.token = s;
    c.record_batches = true;
    return c;
}

void check_invariants(const std::vector<Request>& w, const RunResult& r) {
    REQUIRE(r.requests.size() == w.size());
    TokenCount shipped = 0;
    for (std::size_t i = 0; i < w.size(); ++i) {
        const RequestRecord& q = r.requests[i];
        CHECK(q.id == w[i].id);
        CHECK(static_cast<TokenCount>(q.token_ms.size()) == w[i].decode_len);
        CHECK(q.token_ms.front() >= q.arrival_ms);
        for (std::size_t j = 1; j < q.token_ms.size(); ++j) CHECK(q.token_ms[j] >= q.token_ms[j - 1]);
        CHECK(q.handoff_wait() >= 0.0);
        shipped += q.transferred_tokens;
    }
    CHECK(r.transfer.tokens == shipped);
    for (const BatchRecord& b : r.batches) CHECK(b.end_ms >= b.start_ms);
    for (double u : r.utilization()) {
        CHECK(u >= 0.0);
        CHECK(u <= 1.0 + 1e-12);
    }
}

}  // namespace

TEST_CASE("empty workload") {
    const RunResult r = run({}, ClusterConfig{});
    CHECK(r.requests.empty());
    CHECK(r.end_ms == 0.0);
}

TEST_CASE("single tenant: TTFT is the sum of the batches before it") {
    const std::vector<Request> w{req(0, 3.0, 1500, 20)};
    ClusterConfig c;
    c.forced.mode = ForcedSplit::Mode::kPhi;
    c.forced.phi = 1.0;
    c.record_batches = true;
    const RunResult r = run(w, c);
    const RequestRecord& q = r.requests.front();
    double before_first = 0.0;
    for (const BatchRecord& b : r.batches)
        if (b.end_ms <= q.token_ms.front()) before_first += b.end_ms - b.start_ms;
    CHECK(q.ttft() == doctest::Approx(before_first));
    CHECK_FALSE(q.handoff);
    // After the first token every batch is one decode step of this request.
    for (std::size_t j = 1; j < q.token_ms.size(); ++j) {
        const double gap = q.token_ms[j] - q.token_ms[j - 1];
        CHECK(gap == doctest::Approx(batch_latency({0, 1, static_cast<double>(1500 + j), 0.0},
                                                   HardwareProfile{})));
    }
    check_invariants(w, r);
}

TEST_CASE("repeat runs are identical") {
    const std::vector<Request> w = generate(workload_preset("hybrid", 1.0, 30.0, 4));
    ClusterConfig c;
    c.hardware.noise_sigma = 0.1;
    const RunResult a = run(w, c), b = run(w, c);
    CHECK(a.digest == b.digest);
    CHECK(a.events == b.events);
    c.noise_seed = 2;
    CHECK(run(w, c).digest != a.digest);
    check_invariants(w, a);
}

TEST_CASE("the predictor's decode-run skipping does not change a run") {
    for (const char* preset : {"reasoning", "hybrid"}) {
        const std::vector<Request> w = generate(workload_preset(preset, 4.0, 20.0, 5));
        ClusterConfig c;
        const RunResult fast = run(w, c);
        c.predictor.skip_decode_runs = false;
        CHECK(run(w, c).digest == fast.digest);
    }
}

TEST_CASE("instance core accounting") {
    InstanceCore core(0, HardwareProfile{}, LocalPolicy{}, ProfileTable{});
    for (RequestId i = 0; i < 8; ++i) {
        WorkItem w;
        w.id = micro_id(i, Role::kBeta);
        w.parent = i;
        w.role = Role::kBeta;
        w.prompt_len = 10;
        w.context = 10;
        w.decode_left = w.planned_decode_left = 3;
        w.span_end = 14;
        core.enqueue(w);
    }
    CHECK(core.kv_used() == 80);
    auto b = core.compose(0.0);
    REQUIRE(b);
    CHECK(b->shape.dnum == 8);
    const StepOutcome& out = core.complete(*b, 9.0);
    CHECK(out.tokens.size() == 8);
    CHECK(core.busy_ms() == 9.0);
    CHECK(core.kv_used() == 88);

    ProfileTableOptions o;
    o.default_budget = 4096;
    InstanceCore p(1, HardwareProfile{}, LocalPolicy{}, ProfileTable(o));
    const auto [alpha, beta] = split_at(1, 3000, 3010, 3010);
    (void)beta;
    p.enqueue(make_work_item(alpha, 3000));
    auto pb = p.compose(0.0);
    REQUIRE(pb);
    p.complete(*pb, 40.0);
    CHECK(p.kv_used() == pb->shape.plen);
}

TEST_CASE("disaggregation split ships exactly the prompt") {
    const std::vector<Request> w{req(0, 0.0, 1000, 50)};
    ClusterConfig c = forced_token(1000);
    c.transfer = TransferMode::kWhole;
    const RunResult r = run(w, c);
    const RequestRecord& q = r.requests.front();
    CHECK(q.handoff);
    CHECK(q.transferred_tokens == 1000);
    CHECK(q.kv_ready_ms - q.alpha_done_ms == doctest::Approx(transfer_time(1000, c.hardware)));
    CHECK(q.token_ms.front() >= q.kv_ready_ms);
    check_invariants(w, r);
}

TEST_CASE("decode-merged split ships more than the prompt, in chunks") {
    const std::vector<Request> w{req(0, 0.0, 1000, 600)};
    const RunResult r = run(w, forced_token(1300));
    const RequestRecord& q = r.requests.front();
    CHECK(q.transferred_tokens == 1300);
    CHECK(q.chunks == 6);  // five full 256-token chunks plus a 20-token tail
    CHECK(q.kv_ready_ms >= q.alpha_done_ms);
    // Tokens 1..300 come from alpha, the rest only after the last chunk lands.
    CHECK(q.token_ms[299] <= q.alpha_done_ms);
    CHECK(q.token_ms[300] >= q.kv_ready_ms);
    check_invariants(w, r);
}

TEST_CASE("chunking never waits longer than a whole-cache transfer") {
    for (TokenCount s : {500, 1000, 1200, 1500}) {
        const std::vector<Request> w{req(0, 0.0, 1000, 600)};
        ClusterConfig chunked = forced_token(s);
        ClusterConfig whole = forced_token(s);
        whole.transfer = TransferMode::kWhole;
        const RunResult a = run(w, chunked), b = run(w, whole);
        CHECK(a.requests[0].handoff_wait() <= b.requests[0].handoff_wait() + 1e-9);
        CHECK(b.requests[0].handoff_wait() ==
              doctest::Approx(transfer_time(s, HardwareProfile{})));
    }
}

TEST_CASE("short actual decode cancels beta") {
    const std::vector<Request> w{req(0, 0.0, 200, 10, 120)};
    const RunResult r = run(w, forced_token(260));
    const RequestRecord& q = r.requests.front();
    CHECK(q.beta_cancelled);
    CHECK(q.token_ms.size() == 10);
    CHECK_FALSE(q.handoff);
    check_invariants(w, r);
}

TEST_CASE("baseline systems run and respect roles") {
    const std::vector<Request> w = generate(workload_preset("balanced", 0.5, 60.0, 2));
    for (SystemKind k : {SystemKind::kColoc, SystemKind::kDisagg, SystemKind::kAps}) {
        ClusterConfig c;
        c.system = k;
        c.instances = 4;
        c.record_batches = true;
        const RunResult r = run(w, c);
        check_invariants(w, r);
        if (k == SystemKind::kDisagg) {
            for (const BatchRecord& b : r.batches) {
                if (b.instance % 2 == 0) CHECK(b.shape.dnum == 0);
                else CHECK(b.shape.plen == 0);
            }
        }
        if (k == SystemKind::kColoc) CHECK(r.transfer.chunks == 0);
    }
}

TEST_CASE("invalid cluster configs") {
    ClusterConfig c;
    c.instances = 3;
    CHECK_THROWS_AS(c.validate(), Error);
    c.instances = 2;
    c.chunk_size = 0;
    CHECK_THROWS_AS(c.validate(), Error);
    CHECK(parse_system_kind(to_string(SystemKind::kDisagg)) == SystemKind::kDisagg);
    CHECK(parse_transfer_mode("whole") == TransferMode::kWhole);
    CHECK_THROWS_AS(parse_system_kind("nope"), Error);
}

TEST_CASE("jsonl output has one line per request plus a summary") {
    const std::vector<Request> w{req(0, 0.0, 100, 5), req(1, 1.0, 50, 3)};
    std::ostringstream out;
    write_jsonl(out, run(w, ClusterConfig{}));
    const std::string s = out.str();
    CHECK(std::count(s.begin(), s.end(), '\n') == 3);
    CHECK(s.find("\"summary\"") != std::string::npos);
}
