#include "apsim/workload.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "apsim/rng.hpp"

namespace apsim {

namespace {

// Stream separation for the per-run PRNGs.
constexpr std::uint64_t kLengthStream = 0x9e3779b97f4a7c15ull;
constexpr std::uint64_t kPredictorStream = 0xc2b2ae3d27d4eb4full;

TokenCount draw(TokenCount median, double sigma, TokenCount max_value, std::mt19937_64& rng) {
    if (sigma <= 0.0) return median;
    const double x = static_cast<double>(median) * std::exp(sigma * standard_normal(rng));
    return std::clamp<TokenCount>(static_cast<TokenCount>(std::llround(x)), 1, max_value);
}

}  // namespace

void ShapeSpec::validate() const {
    if (prompt < 1 || output < 1) throw Error("shape: prompt and output must be >= 1");
    if (prompt_sigma < 0.0 || output_sigma < 0.0) throw Error("shape: sigma must be >= 0");
    if (max_prompt < prompt || max_output < output) throw Error("shape: max below median");
}

ShapeSpec shape_preset(const std::string& name) {
    ShapeSpec s;
    if (name == "prefill_heavy") {
        s.prompt = 8192;
        s.output = 32;
    } else if (name == "balanced") {
        s.prompt = 2048;
        s.output = 512;
    } else if (name == "reasoning") {
        s.prompt = 219;
        s.output = 1467;
    } else if (name == "sweep") {
        s.prompt = 1024;
        s.output = 1024;
    } else {
        throw Error("unknown shape preset '" + name + "'");
    }
    return s;
}

void LengthPredictor::validate() const {
    if (sigma < 0.0) throw Error("predictor.sigma must be >= 0");
    if (margin < 0) throw Error("predictor.margin must be >= 0");
}

TokenCount predict_length(TokenCount decode_len, const LengthPredictor& p, std::mt19937_64& rng) {
    TokenCount raw = decode_len;
    if (p.mode == LengthPredictor::Mode::kNoisy) {
        const double x = static_cast<double>(decode_len) + p.sigma * standard_normal(rng);
        raw = std::max<TokenCount>(1, static_cast<TokenCount>(std::llround(x)));
    }
    return raw + p.margin;
}

void WorkloadSpec::validate() const {
    if (!(rate_qps > 0.0)) throw Error("workload.rate_qps must be > 0");
    if (!(duration_s > 0.0)) throw Error("workload.duration_s must be > 0");
    if (mix.empty()) throw Error("workload.mix must not be empty");
    double total = 0.0;
    for (const WorkloadSource& s : mix) {
        if (s.weight < 0.0) throw Error("workload.mix weights must be >= 0");
        s.shape.validate();
        total += s.weight;
    }
    if (std::abs(total - 1.0) > 1e-9) throw Error("workload.mix weights must sum to 1");
    if (!(slo_tbt_ms > 0.0)) throw Error("workload.slo_tbt_ms must be > 0");
    predictor.validate();
}

WorkloadSpec workload_preset(const std::string& name, double rate_qps, double duration_s,
                             std::uint64_t seed) {
    WorkloadSpec w;
    w.rate_qps = rate_qps;
    w.duration_s = duration_s;
    w.seed = seed;
    if (name == "hybrid")
        w.mix = {{shape_preset("prefill_heavy"), 0.5}, {shape_preset("balanced"), 0.5}};
    else
        w.mix = {{shape_preset(name), 1.0}};
    return w;
}

std::vector<Request> generate(const WorkloadSpec& spec) {
    spec.validate();
    std::mt19937_64 arrivals(spec.seed);
    std::mt19937_64 lengths(spec.seed ^ kLengthStream);
    std::mt19937_64 predict(spec.seed ^ kPredictorStream);
    const double rate_per_ms = spec.rate_qps / 1000.0;
    const double horizon = spec.duration_s * 1000.0;

    std::vector<Request> out;
    double t = 0.0;
    while (true) {
        t += exponential(arrivals, rate_per_ms);
        if (t >= horizon) break;
        if (spec.max_requests > 0 && out.size() >= spec.max_requests) break;
        const WorkloadSource* src = &spec.mix.back();
        if (spec.mix.size() > 1) {
            double u = uniform01(lengths);
            for (const WorkloadSource& s : spec.mix) {
                if (u < s.weight) {
                    src = &s;
                    break;
                }
                u -= s.weight;
            }
        }
        const ShapeSpec& sh = src->shape;
        Request r;
        r.id = out.size();
        r.arrival_ms = t;
        r.prompt_len = draw(sh.prompt, sh.prompt_sigma, sh.max_prompt, lengths);
        r.decode_len = draw(sh.output, sh.output_sigma, sh.max_output, lengths);
        r.predicted_decode = predict_length(r.decode_len, spec.predictor, predict);
        r.slo_tbt_ms = spec.slo_tbt_ms;
        out.push_back(r);
    }
    return out;
}

namespace {

std::string trim(std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

template <class T>
T parse_field(const std::string& text, std::size_t line, const char* name) {
    const std::string f = trim(text);
    T v{};
    const auto [p, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
    if (ec != std::errc() || p != f.data() + f.size() || f.empty())
        throw Error("trace line " + std::to_string(line) + ": bad " + name + " '" + f + "'");
    return v;
}

}  // namespace

std::vector<Request> load_trace(std::istream& in, const TraceOptions& options) {
    if (!(options.time_scale > 0.0)) throw Error("trace time_scale must be > 0");
    options.predictor.validate();
    std::string line;
    std::size_t n = 0;
    if (!std::getline(in, line)) throw Error("trace is empty (missing header)");
    ++n;
    if (trim(line) != "arrival_ms,prompt_tokens,output_tokens")
        throw Error("trace line 1: expected header arrival_ms,prompt_tokens,output_tokens");

    std::mt19937_64 predict(options.seed ^ kPredictorStream);
    std::vector<Request> out;
    double prev = -1.0;
    while (std::getline(in, line)) {
        ++n;
        if (trim(line).empty()) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) f.push_back(cell);
        if (f.size() != 3)
            throw Error("trace line " + std::to_string(n) + ": expected 3 fields, got " +
                        std::to_string(f.size()));
        Request r;
        r.id = out.size();
        const double arrival = parse_field<double>(f[0], n, "arrival_ms");
        r.prompt_len = parse_field<TokenCount>(f[1], n, "prompt_tokens");
        r.decode_len = parse_field<TokenCount>(f[2], n, "output_tokens");
        if (arrival < 0.0 || !std::isfinite(arrival))
            throw Error("trace line " + std::to_string(n) + ": arrival_ms must be >= 0");
        if (r.prompt_len < 1 || r.decode_len < 1)
            throw Error("trace line " + std::to_string(n) + ": token counts must be >= 1");
        if (arrival < prev)
            throw Error("trace line " + std::to_string(n) + ": rows not sorted by arrival_ms");
        prev = arrival;
        r.arrival_ms = arrival * options.time_scale;
        r.slo_tbt_ms = options.slo_tbt_ms;
        r.predicted_decode = predict_length(r.decode_len, options.predictor, predict);
        out.push_back(r);
    }
    return out;
}

std::vector<Request> load_trace(const std::string& path, const TraceOptions& options) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open trace '" + path + "'");
    return load_trace(in, options);
}

void dump_trace(std::ostream& out, const std::vector<Request>& requests) {
    out << "arrival_ms,prompt_tokens,output_tokens\n";
    char buf[64];
    for (const Request& r : requests) {
        std::snprintf(buf, sizeof buf, "%.17g", r.arrival_ms);
        out << buf << ',' << r.prompt_len << ',' << r.decode_len << '\n';
    }
}

void apply_predictor(std::vector<Request>& requests, const LengthPredictor& p,
                     std::uint64_t seed) {
    p.validate();
    std::mt19937_64 predict(seed ^ kPredictorStream);
    for (Request& r : requests) r.predicted_decode = predict_length(r.decode_len, p, predict);
}

}  // namespace apsim
