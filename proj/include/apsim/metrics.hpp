#pragma once

#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "apsim/cost_model.hpp"
#include "apsim/engine.hpp"

namespace apsim {

struct MetricsOptions {
    // TBT bound; <= 0 means use each request's own slo_tbt_ms.
    double slo_tbt_ms = 0.0;
    // Optional TTFT bound folded into met_slo.
    std::optional<double> slo_ttft_ms;
    // Strict goodput counts only requests that met the SLO. Otherwise every
    // token whose preceding gap is within the TBT bound counts.
    bool strict_goodput = true;
};

struct RequestOutcome {
    RequestId id = 0;
    double arrival_ms = 0.0;
    double ttft_ms = 0.0;
    std::vector<double> tbt_ms;  // output_tokens - 1 gaps
    double max_tbt_ms = 0.0;
    double p50_tbt_ms = 0.0;
    double p99_tbt_ms = 0.0;
    double completion_ms = 0.0;
    TokenCount output_tokens = 0;
    TokenCount tokens_within_slo = 0;  // first token plus gaps within bound
    bool met_slo = false;
};

// Nearest-rank percentile, q in (0, 1]. Throws Error on an empty sample.
double percentile(std::vector<double> values, double q);

RequestOutcome outcome(const RequestRecord& r, const MetricsOptions& options = {});
std::vector<RequestOutcome> outcomes(const RunResult& run, const MetricsOptions& options = {});

// Tokens per second over `window_s`.
double goodput(const std::vector<RequestOutcome>& o, double window_s,
               const MetricsOptions& options = {});
double raw_throughput(const std::vector<RequestOutcome>& o, double window_s);
// Fraction of requests with met_slo. Throws Error on an empty set.
double attainment(const std::vector<RequestOutcome>& o);

struct Summary {
    std::size_t requests = 0;
    double window_s = 0.0;  // first arrival to last emitted token
    double goodput_tps = 0.0;
    double throughput_tps = 0.0;
    double attainment = 0.0;
    double p50_tbt_ms = 0.0;  // pooled over every gap of every request
    double p99_tbt_ms = 0.0;
    double p50_ttft_ms = 0.0;
    double p99_ttft_ms = 0.0;
    double mean_handoff_wait_ms = 0.0;
    std::vector<double> utilization;
};

Summary summarize(const RunResult& run, const MetricsOptions& options = {});

struct SummaryRow {
    std::string policy;
    std::string workload;
    double qps = 0.0;
    Summary summary;
};
void write_summary_csv(std::ostream& out, const std::vector<SummaryRow>& rows);

struct CapacityCriteria {
    double target_attainment = 0.99;
    double slo_tbt_ms = 100.0;              // p99 TBT bound
    std::optional<double> p99_ttft_ms;      // queueing bound, see README
};
bool meets(const Summary& s, const CapacityCriteria& c);

struct CapacityOptions {
    double lo_qps = 0.1;
    double hi_qps = 20.0;
    double resolution_qps = 0.1;
};

struct CapacityReport {
    double capacity_qps = 0.0;
    bool below_bracket = false;  // lo_qps already fails
    bool above_bracket = false;  // hi_qps still passes
    std::vector<std::pair<double, bool>> probes;  // in probe order
};

// Bisection on a pass/fail predicate assumed monotone (passes at low QPS).
// Returns the highest passing QPS found once the bracket is within
// resolution.
CapacityReport find_capacity(const std::function<bool(double qps)>& passes,
                             const CapacityOptions& options = {});

struct LcuPoint {
    TokenCount dnum = 0;
    double tokens_per_ms = 0.0;
};

// Largest dnum <= n_max with batch_latency(plen, ctx, dnum) <= slo.
LcuPoint lcu_point(const HardwareProfile& hw, double slo_ms, double ctx, TokenCount plen,
                   TokenCount n_max = 256);

// Per-bucket goodput over [0, horizon): output tokens of SLO-meeting
// requests, attributed to the bucket of the request's arrival, per second of
// bucket. Bucket totals add up to the whole run's good tokens.
std::vector<double> bucketed_goodput(const RunResult& run, double bucket_ms, double horizon_ms,
                                     const MetricsOptions& options = {});

}  // namespace apsim
