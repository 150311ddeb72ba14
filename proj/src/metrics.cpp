#include "apsim/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

namespace apsim {

double percentile(std::vector<double> values, double q) {
    if (values.empty()) throw Error("percentile of an empty sample");
    if (!(q > 0.0 && q <= 1.0)) throw Error("percentile rank must be in (0, 1]");
    const auto n = values.size();
    auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(n)));
    rank = std::clamp<std::size_t>(rank, 1, n);
    std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(rank - 1),
                     values.end());
    return values[rank - 1];
}

RequestOutcome outcome(const RequestRecord& r, const MetricsOptions& options) {
    RequestOutcome o;
    o.id = r.id;
    o.arrival_ms = r.arrival_ms;
    o.output_tokens = static_cast<TokenCount>(r.token_ms.size());
    if (r.token_ms.empty()) return o;
    o.ttft_ms = r.token_ms.front() - r.arrival_ms;
    o.completion_ms = r.token_ms.back();
    const double bound = options.slo_tbt_ms > 0.0 ? options.slo_tbt_ms : r.slo_tbt_ms;
    o.tokens_within_slo = 1;
    o.tbt_ms.reserve(r.token_ms.size() - 1);
    for (std::size_t i = 1; i < r.token_ms.size(); ++i) {
        const double g = r.token_ms[i] - r.token_ms[i - 1];
        o.tbt_ms.push_back(g);
        if (g <= bound) ++o.tokens_within_slo;
    }
    if (!o.tbt_ms.empty()) {
        o.max_tbt_ms = *std::max_element(o.tbt_ms.begin(), o.tbt_ms.end());
        o.p50_tbt_ms = percentile(o.tbt_ms, 0.5);
        o.p99_tbt_ms = percentile(o.tbt_ms, 0.99);
    }
    o.met_slo = o.max_tbt_ms <= bound;
    if (options.slo_ttft_ms && o.ttft_ms > *options.slo_ttft_ms) o.met_slo = false;
    return o;
}

std::vector<RequestOutcome> outcomes(const RunResult& run, const MetricsOptions& options) {
    std::vector<RequestOutcome> out;
    out.reserve(run.requests.size());
    for (const RequestRecord& r : run.requests) out.push_back(outcome(r, options));
    return out;
}

double goodput(const std::vector<RequestOutcome>& o, double window_s,
               const MetricsOptions& options) {
    if (!(window_s > 0.0)) throw Error("goodput window must be > 0");
    double tokens = 0.0;
    for (const RequestOutcome& x : o) {
        if (options.strict_goodput)
            tokens += x.met_slo ? static_cast<double>(x.output_tokens) : 0.0;
        else
            tokens += static_cast<double>(x.tokens_within_slo);
    }
    return tokens / window_s;
}

double raw_throughput(const std::vector<RequestOutcome>& o, double window_s) {
    if (!(window_s > 0.0)) throw Error("throughput window must be > 0");
    double tokens = 0.0;
    for (const RequestOutcome& x : o) tokens += static_cast<double>(x.output_tokens);
    return tokens / window_s;
}

double attainment(const std::vector<RequestOutcome>& o) {
    if (o.empty()) throw Error("attainment of an empty request set");
    const auto met = std::count_if(o.begin(), o.end(), [](const auto& x) { return x.met_slo; });
    return static_cast<double>(met) / static_cast<double>(o.size());
}

Summary summarize(const RunResult& run, const MetricsOptions& options) {
    Summary s;
    s.requests = run.requests.size();
    s.utilization = run.utilization();
    if (run.requests.empty()) return s;
    const std::vector<RequestOutcome> o = outcomes(run, options);
    double first = o.front().arrival_ms;
    double last = first;
    std::vector<double> gaps;
    std::vector<double> ttft;
    double wait = 0.0;
    std::size_t handoffs = 0;
    for (std::size_t i = 0; i < o.size(); ++i) {
        first = std::min(first, o[i].arrival_ms);
        last = std::max(last, o[i].completion_ms);
        gaps.insert(gaps.end(), o[i].tbt_ms.begin(), o[i].tbt_ms.end());
        ttft.push_back(o[i].ttft_ms);
        if (run.requests[i].handoff) {
            wait += run.requests[i].handoff_wait();
            ++handoffs;
        }
    }
    s.window_s = (last - first) / 1000.0;
    if (s.window_s > 0.0) {
        s.goodput_tps = goodput(o, s.window_s, options);
        s.throughput_tps = raw_throughput(o, s.window_s);
    }
    s.attainment = attainment(o);
    if (!gaps.empty()) {
        s.p50_tbt_ms = percentile(gaps, 0.5);
        s.p99_tbt_ms = percentile(gaps, 0.99);
    }
    s.p50_ttft_ms = percentile(ttft, 0.5);
    s.p99_ttft_ms = percentile(ttft, 0.99);
    s.mean_handoff_wait_ms = handoffs > 0 ? wait / static_cast<double>(handoffs) : 0.0;
    return s;
}

void write_summary_csv(std::ostream& out, const std::vector<SummaryRow>& rows) {
    out << "policy,workload,qps,requests,goodput_tps,throughput_tps,attainment,p50_tbt_ms,"
           "p99_tbt_ms,p50_ttft_ms,p99_ttft_ms,mean_utilization\n";
    for (const SummaryRow& r : rows) {
        const Summary& s = r.summary;
        double u = 0.0;
        for (double x : s.utilization) u += x;
        if (!s.utilization.empty()) u /= static_cast<double>(s.utilization.size());
        out << r.policy << ',' << r.workload << ',' << r.qps << ',' << s.requests << ','
            << s.goodput_tps << ',' << s.throughput_tps << ',' << s.attainment << ','
            << s.p50_tbt_ms << ',' << s.p99_tbt_ms << ',' << s.p50_ttft_ms << ','
            << s.p99_ttft_ms << ',' << u << '\n';
    }
}

bool meets(const Summary& s, const CapacityCriteria& c) {
    if (s.requests == 0) return true;
    if (s.attainment < c.target_attainment) return false;
    if (s.p99_tbt_ms > c.slo_tbt_ms) return false;
    if (c.p99_ttft_ms && s.p99_ttft_ms > *c.p99_ttft_ms) return false;
    return true;
}

CapacityReport find_capacity(const std::function<bool(double qps)>& passes,
                             const CapacityOptions& options) {
    if (!(options.lo_qps > 0.0) || !(options.hi_qps > options.lo_qps))
        throw Error("capacity bracket must satisfy 0 < lo < hi");
    if (!(options.resolution_qps > 0.0)) throw Error("capacity resolution must be > 0");
    CapacityReport rep;
    auto probe = [&](double q) {
        const bool ok = passes(q);
        rep.probes.emplace_back(q, ok);
        return ok;
    };
    double lo = options.lo_qps;
    double hi = options.hi_qps;
    if (!probe(lo)) {
        rep.below_bracket = true;
        return rep;
    }
    if (probe(hi)) {
        rep.above_bracket = true;
        rep.capacity_qps = hi;
        return rep;
    }
    while (hi - lo > options.resolution_qps) {
        const double mid = 0.5 * (lo + hi);
        (probe(mid) ? lo : hi) = mid;
    }
    rep.capacity_qps = lo;
    return rep;
}

LcuPoint lcu_point(const HardwareProfile& hw, double slo_ms, double ctx, TokenCount plen,
                   TokenCount n_max) {
    auto latency = [&](TokenCount dnum) {
        BatchShape s;
        s.plen = plen;
        s.dnum = dnum;
        s.ctx = dnum > 0 ? ctx : 0.0;
        return batch_latency(s, hw);
    };
    if (latency(0) > slo_ms) return {};
    // Latency is monotone in dnum, so binary search the last admissible one.
    TokenCount lo = 0;
    TokenCount hi = n_max;
    if (latency(hi) <= slo_ms) {
        lo = hi;
    } else {
        while (hi - lo > 1) {
            const TokenCount mid = (lo + hi) / 2;
            (latency(mid) <= slo_ms ? lo : hi) = mid;
        }
    }
    if (lo == 0 && plen == 0) return {};
    return {lo, static_cast<double>(plen + lo) / latency(lo)};
}

std::vector<double> bucketed_goodput(const RunResult& run, double bucket_ms, double horizon_ms,
                                     const MetricsOptions& options) {
    if (!(bucket_ms > 0.0) || !(horizon_ms > 0.0)) throw Error("bucket and horizon must be > 0");
    const auto n = static_cast<std::size_t>(std::ceil(horizon_ms / bucket_ms - 1e-9));
    std::vector<double> tokens(n, 0.0);
    for (const RequestRecord& r : run.requests) {
        const RequestOutcome o = outcome(r, options);
        if (options.strict_goodput && !o.met_slo) continue;
        auto b = static_cast<std::size_t>(std::max(0.0, r.arrival_ms) / bucket_ms);
        b = std::min(b, n - 1);
        tokens[b] += static_cast<double>(options.strict_goodput ? o.output_tokens
                                                                : o.tokens_within_slo);
    }
    for (double& t : tokens) t /= bucket_ms / 1000.0;
    return tokens;
}

}  // namespace apsim
