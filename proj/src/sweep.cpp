#include "apsim/sweep.hpp"

#include <algorithm>
#include <cmath>
#include <exception>

namespace apsim {

namespace {

// Runs body(i) for i in [0, n); the first exception is rethrown after the loop.
template <class F>
void for_each_index(std::size_t n, Execution exec, F&& body) {
    if (exec == Execution::kSerial) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::exception_ptr error;
    const auto count = static_cast<std::int64_t>(n);
#pragma omp parallel for schedule(dynamic)
    for (std::int64_t i = 0; i < count; ++i) {
        try {
            body(static_cast<std::size_t>(i));
        } catch (...) {
#pragma omp critical(apsim_sweep_error)
            if (!error) error = std::current_exception();
        }
    }
    if (error) std::rethrow_exception(error);
}

}  // namespace

std::vector<RunResult> run_jobs(const std::vector<RunJob>& jobs, Execution exec) {
    std::vector<RunResult> out(jobs.size());
    for_each_index(jobs.size(), exec, [&](std::size_t i) {
        if (jobs[i].workload == nullptr) throw Error("run_jobs: job without workload");
        out[i] = run(*jobs[i].workload, jobs[i].config);
    });
    return out;
}

std::vector<TokenCount> split_grid(TokenCount len, int points, const std::vector<TokenCount>& extra) {
    if (points < 2) throw Error("split grid needs at least 2 points");
    std::vector<TokenCount> g;
    for (int i = 0; i < points; ++i)
        g.push_back(static_cast<TokenCount>(
            std::llround(static_cast<double>(len) * i / static_cast<double>(points - 1))));
    for (TokenCount e : extra) g.push_back(std::clamp<TokenCount>(e, 0, len));
    std::sort(g.begin(), g.end());
    g.erase(std::unique(g.begin(), g.end()), g.end());
    return g;
}

double run_throughput(const RunResult& r) {
    if (r.requests.empty()) return 0.0;
    double first = r.requests.front().arrival_ms;
    double last = first;
    double tokens = 0.0;
    for (const RequestRecord& q : r.requests) {
        first = std::min(first, q.arrival_ms);
        last = std::max(last, q.completion_ms());
        tokens += static_cast<double>(q.token_ms.size());
    }
    return last > first ? tokens / ((last - first) / 1000.0) : 0.0;
}

std::vector<SplitPoint> sweep_split(const std::vector<Request>& workload, ClusterConfig base,
                                    const std::vector<TokenCount>& splits, Execution exec) {
    base.system = SystemKind::kAps;
    std::vector<RunJob> jobs;
    for (TokenCount s : splits) {
        RunJob j{&workload, base};
        j.config.forced.mode = ForcedSplit::Mode::kToken;
        j.config.forced.token = s;
        jobs.push_back(j);
    }
    const std::vector<RunResult> runs = run_jobs(jobs, exec);
    std::vector<SplitPoint> out;
    for (std::size_t i = 0; i < splits.size(); ++i) {
        const RunResult& r = runs[i];
        double first = r.requests.empty() ? 0.0 : r.requests.front().arrival_ms;
        out.push_back({splits[i], run_throughput(r), r.end_ms - first});
    }
    return out;
}

OracleResult grid_oracle(const PredictorOptions& options, const PlanningView& r,
                         InstanceId alpha_instance, InstanceId beta_instance,
                         const ClusterSnapshot& load, Execution exec) {
    const TokenCount len = r.total_len();
    OracleResult out;
    out.makespan_ms.assign(static_cast<std::size_t>(len + 1), 0.0);
    PredictorOptions uncached = options;
    uncached.cache_capacity = 0;
    for_each_index(out.makespan_ms.size(), exec, [&](std::size_t s) {
        Predictor p(uncached);
        const auto [a, b] = split_at(r.id, r.prompt_len, len, static_cast<TokenCount>(s));
        const PairPrediction pp = p.predict_pair(a, b, r.prompt_len, alpha_instance, beta_instance, load);
        out.makespan_ms[s] = std::max(pp.t1, pp.t2);
    });
    const auto best = std::min_element(out.makespan_ms.begin(), out.makespan_ms.end());
    out.best_split = static_cast<TokenCount>(best - out.makespan_ms.begin());
    out.best_makespan_ms = *best;
    return out;
}

std::vector<Summary> probe_seeds(const ExperimentConfig& cfg, SystemKind system, double qps,
                                 Execution exec) {
    std::vector<std::vector<Request>> workloads;
    for (std::uint64_t seed : cfg.seeds)
        workloads.push_back(build_workload(cfg.workload, seed, qps, cfg.capacity_duration_s));
    std::vector<RunJob> jobs;
    for (std::size_t i = 0; i < workloads.size(); ++i) {
        RunJob j{&workloads[i], cfg.cluster};
        j.config.system = system;
        j.config.noise_seed = cfg.seeds[i];
        jobs.push_back(j);
    }
    const std::vector<RunResult> runs = run_jobs(jobs, exec);
    std::vector<Summary> out;
    for (const RunResult& r : runs) out.push_back(summarize(r, cfg.metrics));
    return out;
}

CapacityReport system_capacity(const ExperimentConfig& cfg, SystemKind system, Execution exec) {
    return find_capacity(
        [&](double qps) {
            for (const Summary& s : probe_seeds(cfg, system, qps, exec))
                if (!meets(s, cfg.criteria)) return false;
            return true;
        },
        cfg.capacity);
}

}  // namespace apsim
