#pragma once

#include <cstdint>
#include <iosfwd>
#include <random>
#include <string>
#include <vector>

#include "apsim/domain.hpp"

namespace apsim {

enum class ShapeKind : std::uint8_t { kFixed, kLognormal };

// Request length distribution. For kLognormal, prompt/output are medians and
// draws are clamped to [1, max_*].
struct ShapeSpec {
    ShapeKind kind = ShapeKind::kFixed;
    TokenCount prompt = 1024;
    TokenCount output = 1024;
    double prompt_sigma = 0.0;
    double output_sigma = 0.0;
    TokenCount max_prompt = 32768;
    TokenCount max_output = 8192;

    void validate() const;
};

// Named shapes: prefill_heavy, balanced, reasoning, sweep (1024/1024).
ShapeSpec shape_preset(const std::string& name);

struct LengthPredictor {
    enum class Mode : std::uint8_t { kOracle, kNoisy };
    Mode mode = Mode::kOracle;
    double sigma = 0.0;  // tokens, additive normal error (kNoisy)
    TokenCount margin = 20;

    void validate() const;
};

// D^ = D + margin (oracle) or max(1, round(D + N(0, sigma))) + margin.
TokenCount predict_length(TokenCount decode_len, const LengthPredictor& p, std::mt19937_64& rng);

struct WorkloadSource {
    ShapeSpec shape;
    double weight = 1.0;
};

struct WorkloadSpec {
    std::vector<WorkloadSource> mix{WorkloadSource{}};
    double rate_qps = 1.0;
    double duration_s = 60.0;
    std::size_t max_requests = 0;  // 0 = bounded by duration only
    std::uint64_t seed = 1;
    double slo_tbt_ms = 100.0;
    LengthPredictor predictor;

    // Throws Error on a non-positive rate or duration, an empty mix, or
    // weights that do not sum to 1.
    void validate() const;
};

// Preset names accepted by workload_preset: prefill_heavy, balanced,
// reasoning, sweep, hybrid (prefill_heavy and balanced, 50/50).
WorkloadSpec workload_preset(const std::string& name, double rate_qps, double duration_s,
                             std::uint64_t seed);

// Poisson arrivals starting at t = 0 (first request after one exponential
// gap). Lengths and predictions use separate mt19937_64 streams derived from
// spec.seed, so changing the predictor leaves arrivals and lengths intact.
std::vector<Request> generate(const WorkloadSpec& spec);

struct TraceOptions {
    double time_scale = 1.0;  // arrival_ms multiplier
    double slo_tbt_ms = 100.0;
    LengthPredictor predictor;
    std::uint64_t seed = 1;
};

// CSV with header arrival_ms,prompt_tokens,output_tokens; rows sorted by
// arrival. Errors carry the 1-based line number.
std::vector<Request> load_trace(std::istream& in, const TraceOptions& options = {});
std::vector<Request> load_trace(const std::string& path, const TraceOptions& options = {});
void dump_trace(std::ostream& out, const std::vector<Request>& requests);

// Re-draw D^ for every request (fresh predictor stream from `seed`).
void apply_predictor(std::vector<Request>& requests, const LengthPredictor& p,
                     std::uint64_t seed);

}  // namespace apsim
