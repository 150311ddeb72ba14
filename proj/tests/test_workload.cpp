#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <sstream>

#include "apsim/workload.hpp"

using namespace apsim;

TEST_CASE("table shapes") {
    const ShapeSpec ph = shape_preset("prefill_heavy");
    CHECK(ph.prompt == 8192);
    CHECK(ph.output == 32);
    const ShapeSpec rs = shape_preset("reasoning");
    CHECK(rs.prompt == 219);
    CHECK(rs.output == 1467);
    CHECK(shape_preset("balanced").prompt == 2048);
    CHECK(shape_preset("sweep").output == 1024);
    CHECK_THROWS_AS(shape_preset("nope"), Error);
}

TEST_CASE("poisson arrivals have the requested mean gap") {
    WorkloadSpec s = workload_preset("balanced", 4.0, 1e9, 11);
    s.max_requests = 10000;
    const std::vector<Request> w = generate(s);
    REQUIRE(w.size() == 10000);
    const double mean_gap = w.back().arrival_ms / static_cast<double>(w.size());
    CHECK(mean_gap == doctest::Approx(250.0).epsilon(0.02));
    for (std::size_t i = 1; i < w.size(); ++i) CHECK(w[i].arrival_ms >= w[i - 1].arrival_ms);
}

TEST_CASE("generation is deterministic and streams are independent") {
    WorkloadSpec s = workload_preset("hybrid", 2.0, 120.0, 5);
    const auto a = generate(s);
    const auto b = generate(s);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].arrival_ms == b[i].arrival_ms);
        CHECK(a[i].prompt_len == b[i].prompt_len);
    }
    s.predictor.mode = LengthPredictor::Mode::kNoisy;
    s.predictor.sigma = 100;
    const auto c = generate(s);
    REQUIRE(c.size() == a.size());
    bool any_diff = false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(c[i].arrival_ms == a[i].arrival_ms);
        CHECK(c[i].decode_len == a[i].decode_len);
        any_diff |= c[i].predicted_decode != a[i].predicted_decode;
    }
    CHECK(any_diff);
    // The hybrid mix draws both shapes.
    std::size_t heavy = 0;
    for (const Request& r : a) heavy += r.prompt_len == 8192;
    CHECK(heavy > 0);
    CHECK(heavy < a.size());
}

TEST_CASE("length predictor") {
    std::mt19937_64 rng(1);
    LengthPredictor oracle;
    CHECK(predict_length(1467, oracle, rng) == 1487);
    LengthPredictor exact;
    exact.margin = 0;
    CHECK(predict_length(1467, exact, rng) == 1467);

    LengthPredictor noisy;
    noisy.mode = LengthPredictor::Mode::kNoisy;
    noisy.sigma = 100;
    noisy.margin = 0;
    int within = 0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) within += std::abs(predict_length(1467, noisy, rng) - 1467) <= 200;
    CHECK(static_cast<double>(within) / n == doctest::Approx(0.954).epsilon(0.01));

    LengthPredictor wild = noisy;
    wild.sigma = 5000;
    for (int i = 0; i < 1000; ++i) CHECK(predict_length(10, wild, rng) >= 1);

    // A larger margin never lowers a prediction drawn from the same stream.
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        std::mt19937_64 r1(seed), r2(seed);
        LengthPredictor lo = noisy, hi = noisy;
        hi.margin = 40;
        CHECK(predict_length(300, hi, r2) >= predict_length(300, lo, r1));
    }
}

TEST_CASE("trace loading") {
    std::istringstream ok("arrival_ms,prompt_tokens,output_tokens\n0,10,5\n2.5,20,6\n9,30,7\n");
    const auto w = load_trace(ok);
    REQUIRE(w.size() == 3);
    CHECK(w[1].arrival_ms == 2.5);
    CHECK(w[2].prompt_len == 30);
    CHECK(w[2].predicted_decode == 27);

    std::istringstream neg("arrival_ms,prompt_tokens,output_tokens\n0,10,5\n1,-3,6\n");
    CHECK_THROWS_WITH_AS(load_trace(neg), doctest::Contains("line 3"), Error);
    std::istringstream unsorted("arrival_ms,prompt_tokens,output_tokens\n5,10,5\n1,3,6\n");
    CHECK_THROWS_AS(load_trace(unsorted), Error);
    std::istringstream header("when,p,d\n0,1,1\n");
    CHECK_THROWS_AS(load_trace(header), Error);
    CHECK_THROWS_AS(load_trace(std::string("/nonexistent/trace.csv")), Error);
}

TEST_CASE("generate, dump, load round trip") {
    const auto w = generate(workload_preset("hybrid", 3.0, 60.0, 9));
    std::stringstream s;
    dump_trace(s, w);
    TraceOptions o;
    o.seed = 9;
    const auto back = load_trace(s, o);
    REQUIRE(back.size() == w.size());
    for (std::size_t i = 0; i < w.size(); ++i) {
        CHECK(back[i].arrival_ms == w[i].arrival_ms);
        CHECK(back[i].prompt_len == w[i].prompt_len);
        CHECK(back[i].decode_len == w[i].decode_len);
        CHECK(back[i].predicted_decode == w[i].predicted_decode);
    }
}

TEST_CASE("lognormal shapes stay within bounds") {
    WorkloadSpec s;
    s.mix = {{ShapeSpec{ShapeKind::kLognormal, 1000, 200, 1.0, 1.0, 4000, 800}, 1.0}};
    s.rate_qps = 10;
    s.duration_s = 100;
    for (const Request& r : generate(s)) {
        CHECK(r.prompt_len >= 1);
        CHECK(r.prompt_len <= 4000);
        CHECK(r.decode_len <= 800);
    }
}

TEST_CASE("spec validation") {
    WorkloadSpec s;
    s.rate_qps = 0;
    CHECK_THROWS_AS(s.validate(), Error);
    s = {};
    s.mix = {{shape_preset("balanced"), 0.5}};
    CHECK_THROWS_AS(s.validate(), Error);
    s = {};
    s.mix.clear();
    CHECK_THROWS_AS(s.validate(), Error);
}
