#include "apsim/commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>

namespace apsim {

namespace {

std::ofstream open_output(const ExperimentConfig& cfg, const std::string& suffix) {
    std::filesystem::create_directories(cfg.output_dir);
    const std::filesystem::path p =
        std::filesystem::path(cfg.output_dir) / (cfg.name + "_" + suffix);
    std::ofstream f(p);
    if (!f) throw Error("cannot write " + p.string());
    return f;
}

std::string seed_list(const std::vector<std::uint64_t>& seeds) {
    std::string s;
    for (std::size_t i = 0; i < seeds.size(); ++i) {
        if (i > 0) s += ',';
        s += std::to_string(seeds[i]);
    }
    return s;
}

void header(std::ostream& out, const ExperimentConfig& cfg, const std::string& command) {
    out << "# " << command << " config=" << cfg.name << " seeds=" << seed_list(cfg.seeds)
        << '\n';
}

std::string fmt(double v, int precision = 2) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", precision, v);
    return buf;
}

std::string workload_label(const ExperimentConfig& cfg) {
    if (cfg.workload.trace_path) return std::filesystem::path(*cfg.workload.trace_path).stem();
    return cfg.workload.preset.empty() ? "custom" : cfg.workload.preset;
}

}  // namespace

RunOutput cmd_run(const ExperimentConfig& cfg, std::ostream& out, bool write_files) {
    RunOutput r;
    r.seed = cfg.seeds.front();
    const std::vector<Request> w = build_workload(cfg.workload, r.seed);
    ClusterConfig c = cfg.cluster;
    c.noise_seed = r.seed;
    r.result = run(w, c);
    r.summary = summarize(r.result, cfg.metrics);

    header(out, cfg, "run");
    const Summary& s = r.summary;
    out << "system " << to_string(c.system) << "  requests " << s.requests << "  window "
        << fmt(s.window_s) << " s\n"
        << "goodput " << fmt(s.goodput_tps) << " tok/s  throughput " << fmt(s.throughput_tps)
        << " tok/s  attainment " << fmt(s.attainment, 4) << '\n'
        << "tbt p50/p99 " << fmt(s.p50_tbt_ms) << '/' << fmt(s.p99_tbt_ms) << " ms  ttft p50/p99 "
        << fmt(s.p50_ttft_ms) << '/' << fmt(s.p99_ttft_ms) << " ms\n"
        << "digest " << r.result.digest << '\n';

    if (write_files) {
        std::ofstream j = open_output(cfg, "run.jsonl");
        write_jsonl(j, r.result);
        std::ofstream csv = open_output(cfg, "summary.csv");
        header(csv, cfg, "run");
        const double qps = cfg.workload.trace_path ? 0.0 : cfg.workload.spec.rate_qps;
        write_summary_csv(csv, {{to_string(c.system), workload_label(cfg), qps, s}});
    }
    return r;
}

const SplitPoint& SweepOutput::best() const {
    if (points.empty()) throw Error("empty sweep");
    return *std::max_element(points.begin(), points.end(), [](const auto& a, const auto& b) {
        return a.throughput_tps < b.throughput_tps;
    });
}

const SplitPoint& SweepOutput::at(TokenCount split) const {
    for (const SplitPoint& p : points)
        if (p.split == split) return p;
    throw Error("split " + std::to_string(split) + " not in sweep");
}

SweepOutput cmd_sweep_split(const ExperimentConfig& cfg, std::ostream& out, bool write_files,
                            Execution exec) {
    if (cfg.cluster.instances != 2) throw Error("sweep-split: cluster.instances must be 2");
    if (cfg.workload.trace_path) throw Error("sweep-split: needs a generated workload");
    const auto& mix = cfg.workload.spec.mix;
    if (mix.size() != 1 || mix.front().shape.kind != ShapeKind::kFixed)
        throw Error("sweep-split: workload must be a single fixed shape");

    WorkloadSpec spec = cfg.workload.spec;
    spec.seed = cfg.seeds.front();
    spec.rate_qps = cfg.sweep.rate_qps;
    spec.max_requests = cfg.sweep.requests;
    spec.duration_s = 10.0 * static_cast<double>(cfg.sweep.requests) / cfg.sweep.rate_qps;
    const std::vector<Request> w = generate(spec);
    if (w.empty()) throw Error("sweep-split: empty workload");

    SweepOutput o;
    o.prompt_len = w.front().prompt_len;
    o.planned_len = w.front().planned_len();
    ClusterConfig c = cfg.cluster;
    c.noise_seed = spec.seed;
    const std::vector<TokenCount> grid = split_grid(o.planned_len, cfg.sweep.points, {o.prompt_len});
    o.points = sweep_split(w, c, grid, exec);

    c.system = SystemKind::kAps;
    c.forced = {};
    const RunResult searched = run(w, c);
    o.searched_tps = run_throughput(searched);
    double sum = 0.0;
    for (const RequestRecord& r : searched.requests) sum += static_cast<double>(r.plan.split);
    o.mean_split = sum / static_cast<double>(searched.requests.size());

    header(out, cfg, "sweep-split");
    out << "shape P=" << o.prompt_len << " L=" << o.planned_len << " requests=" << w.size()
        << " rate=" << fmt(spec.rate_qps) << " qps\n";
    out << "split,throughput_tps,makespan_ms\n";
    for (const SplitPoint& p : o.points)
        out << p.split << ',' << fmt(p.throughput_tps) << ',' << fmt(p.makespan_ms) << '\n';
    const SplitPoint& b = o.best();
    out << "best s=" << b.split << " " << fmt(b.throughput_tps) << " tok/s; s=P "
        << fmt(o.at(o.prompt_len).throughput_tps) << " tok/s; searched " << fmt(o.searched_tps)
        << " tok/s (mean s " << fmt(o.mean_split, 0) << ")\n";

    if (write_files) {
        std::ofstream f = open_output(cfg, "sweep_split.csv");
        header(f, cfg, "sweep-split");
        f << "split,throughput_tps,makespan_ms\n";
        for (const SplitPoint& p : o.points)
            f << p.split << ',' << p.throughput_tps << ',' << p.makespan_ms << '\n';
    }
    return o;
}

std::vector<CapacityRow> cmd_capacity(const ExperimentConfig& cfg, std::ostream& out,
                                      bool write_files, Execution exec) {
    std::vector<CapacityRow> rows;
    for (SystemKind k : cfg.systems) rows.push_back({k, system_capacity(cfg, k, exec)});

    auto note = [](const CapacityReport& r) {
        return r.below_bracket ? "below_lo" : r.above_bracket ? "above_hi" : "";
    };
    header(out, cfg, "capacity");
    out << "system    capacity_qps  probes\n";
    for (const CapacityRow& r : rows) {
        char line[128];
        std::snprintf(line, sizeof line, "%-9s %12.2f  %6zu %s\n", to_string(r.system).c_str(),
                      r.report.capacity_qps, r.report.probes.size(), note(r.report));
        out << line;
    }
    if (write_files) {
        std::ofstream f = open_output(cfg, "capacity.csv");
        header(f, cfg, "capacity");
        f << "system,workload,capacity_qps,probes,note\n";
        for (const CapacityRow& r : rows)
            f << to_string(r.system) << ',' << workload_label(cfg) << ',' << r.report.capacity_qps
              << ',' << r.report.probes.size() << ',' << note(r.report) << '\n';
    }
    return rows;
}

std::vector<ReplayRow> cmd_replay(const ExperimentConfig& cfg, std::ostream& out,
                                  const std::optional<std::string>& trace_path,
                                  std::optional<double> bucket_min, bool write_files,
                                  Execution exec) {
    WorkloadConfig wc = cfg.workload;
    if (trace_path) wc.trace_path = *trace_path;
    if (!wc.trace_path) throw Error("replay: no trace path (workload.trace or --trace)");
    const double bucket_ms = 60000.0 * bucket_min.value_or(cfg.replay_bucket_min);
    if (!(bucket_ms > 0.0)) throw Error("replay: bucket must be > 0");

    const std::vector<Request> w = build_workload(wc, cfg.seeds.front());
    if (w.empty()) throw Error("replay: empty trace");
    const double horizon = std::max(bucket_ms, w.back().arrival_ms);

    std::vector<RunJob> jobs;
    for (SystemKind k : cfg.systems) {
        RunJob j{&w, cfg.cluster};
        j.config.system = k;
        j.config.noise_seed = cfg.seeds.front();
        jobs.push_back(j);
    }
    const std::vector<RunResult> runs = run_jobs(jobs, exec);

    std::vector<ReplayRow> rows;
    for (std::size_t i = 0; i < runs.size(); ++i) {
        const std::vector<double> g = bucketed_goodput(runs[i], bucket_ms, horizon, cfg.metrics);
        for (std::size_t b = 0; b < g.size(); ++b)
            rows.push_back({cfg.systems[i], b, static_cast<double>(b) * bucket_ms / 60000.0, g[b]});
    }

    header(out, cfg, "replay");
    out << "system,bucket,start_min,goodput_tps\n";
    for (const ReplayRow& r : rows)
        out << to_string(r.system) << ',' << r.bucket << ',' << fmt(r.start_min, 1) << ','
            << fmt(r.goodput_tps) << '\n';
    if (write_files) {
        std::ofstream f = open_output(cfg, "replay.csv");
        header(f, cfg, "replay");
        f << "system,bucket,start_min,goodput_tps\n";
        for (const ReplayRow& r : rows)
            f << to_string(r.system) << ',' << r.bucket << ',' << r.start_min << ','
              << r.goodput_tps << '\n';
    }
    return rows;
}

std::vector<AblationRow> cmd_ablate(const ExperimentConfig& cfg, std::ostream& out,
                                    bool write_files, Execution exec) {
    const std::uint64_t seed = cfg.seeds.front();
    const std::vector<Request> w = build_workload(cfg.workload, seed);

    ClusterConfig base = cfg.cluster;
    base.system = SystemKind::kAps;
    base.noise_seed = seed;
    const std::vector<std::string> names{"slo_batching", "fixed_chunk_batching",
                                         "chunked_transfer", "whole_transfer"};
    std::vector<RunJob> jobs(names.size(), RunJob{&w, base});
    LocalPolicy fixed = base.coloc_policy;
    fixed.kind = PolicyKind::kChunked;
    jobs[1].config.instance_policies.assign(static_cast<std::size_t>(base.instances), fixed);
    jobs[2].config.transfer = TransferMode::kChunked;
    jobs[3].config.transfer = TransferMode::kWhole;
    const std::vector<RunResult> runs = run_jobs(jobs, exec);

    std::vector<AblationRow> rows;
    for (std::size_t i = 0; i < runs.size(); ++i)
        rows.push_back({names[i], summarize(runs[i], cfg.metrics), runs[i].transfer.total_wait_ms});

    header(out, cfg, "ablate");
    out << "variant               attainment  goodput_tps  p99_tbt_ms  transfer_wait_ms\n";
    for (const AblationRow& r : rows) {
        char line[160];
        std::snprintf(line, sizeof line, "%-21s %10.4f %12.2f %11.2f %17.2f\n", r.variant.c_str(),
                      r.summary.attainment, r.summary.goodput_tps, r.summary.p99_tbt_ms,
                      r.transfer_wait_ms);
        out << line;
    }
    if (write_files) {
        std::ofstream f = open_output(cfg, "ablate.csv");
        header(f, cfg, "ablate");
        f << "variant,attainment,goodput_tps,p99_tbt_ms,transfer_wait_ms\n";
        for (const AblationRow& r : rows)
            f << r.variant << ',' << r.summary.attainment << ',' << r.summary.goodput_tps << ','
              << r.summary.p99_tbt_ms << ',' << r.transfer_wait_ms << '\n';
    }
    return rows;
}

}  // namespace apsim
