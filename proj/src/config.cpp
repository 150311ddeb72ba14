#include "apsim/config.hpp"

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace apsim {

namespace {

using nlohmann::json;

// Walks one JSON object, remembering which keys were consumed so that
// leftovers can be reported as unknown.
class Node {
public:
    Node(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw Error(where() + ": expected an object");
    }

    std::string at(const std::string& key) const {
        return path_.empty() ? key : path_ + "." + key;
    }

    bool has(const std::string& key) const { return j_.contains(key); }
    const std::string& path() const { return path_; }

    template <class T>
    T get(const std::string& key, T fallback) {
        if (!j_.contains(key)) return fallback;
        return read<T>(key);
    }

    template <class T>
    T require(const std::string& key) {
        if (!j_.contains(key)) throw Error(at(key) + ": required key missing");
        return read<T>(key);
    }

    std::optional<Node> child(const std::string& key) {
        if (!j_.contains(key)) return std::nullopt;
        seen_.insert(key);
        return Node(j_.at(key), at(key));
    }

    const json& raw(const std::string& key) {
        seen_.insert(key);
        return j_.at(key);
    }

    void finish() const {
        for (const auto& [k, v] : j_.items())
            if (!seen_.count(k)) throw Error(at(k) + ": unknown key");
    }

private:
    template <class T>
    T read(const std::string& key) {
        seen_.insert(key);
        const json& v = j_.at(key);
        if constexpr (std::is_same_v<T, bool>) {
            if (!v.is_boolean()) throw Error(at(key) + ": expected a boolean");
        } else if constexpr (std::is_arithmetic_v<T>) {
            if (!v.is_number()) throw Error(at(key) + ": expected a number");
            if constexpr (std::is_integral_v<T>) {
                if (!v.is_number_integer()) throw Error(at(key) + ": expected an integer");
                if (std::is_unsigned_v<T> && v.get<std::int64_t>() < 0)
                    throw Error(at(key) + ": expected a non-negative integer");
            }
        } else if constexpr (std::is_same_v<T, std::string>) {
            if (!v.is_string()) throw Error(at(key) + ": expected a string");
        }
        return v.get<T>();
    }

    std::string where() const { return path_.empty() ? "<root>" : path_; }

    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

// Rethrow any Error with the key path prefixed, unless it already has one.
template <class F>
void at_path(const std::string& path, F&& f) {
    try {
        f();
    } catch (const Error& e) {
        const std::string msg = e.what();
        if (msg.rfind(path, 0) == 0) throw;
        throw Error(path + ": " + msg);
    }
}

HardwareProfile parse_hardware(Node n) {
    HardwareProfile h;
    h.flops_per_ms = n.get("flops_per_ms", h.flops_per_ms);
    h.mem_bw_bytes_per_ms = n.get("mem_bw_bytes_per_ms", h.mem_bw_bytes_per_ms);
    h.weight_bytes = n.get("weight_bytes", h.weight_bytes);
    h.kv_bytes_per_token = n.get("kv_bytes_per_token", h.kv_bytes_per_token);
    h.link_bw_bytes_per_ms = n.get("link_bw_bytes_per_ms", h.link_bw_bytes_per_ms);
    h.link_latency_ms = n.get("link_latency_ms", h.link_latency_ms);
    h.fixed_overhead_ms = n.get("fixed_overhead_ms", h.fixed_overhead_ms);
    h.hbm_capacity_tokens = n.get("hbm_capacity_tokens", h.hbm_capacity_tokens);
    h.c_lin = n.get("c_lin", h.c_lin);
    h.c_attn = n.get("c_attn", h.c_attn);
    h.noise_sigma = n.get("noise_sigma", h.noise_sigma);
    n.get<std::string>("note", "");  // free-form description
    n.finish();
    return h;
}

std::string resolve(const std::string& p, const std::string& base) {
    const std::filesystem::path path(p);
    if (path.is_absolute()) return p;
    return (std::filesystem::path(base) / path).lexically_normal().string();
}

json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open '" + path + "'");
    try {
        return json::parse(in, nullptr, true, true);
    } catch (const json::parse_error& e) {
        throw Error(path + ": " + e.what());
    }
}

ShapeSpec parse_shape(Node n) {
    ShapeSpec s;
    if (n.has("preset")) s = shape_preset(n.require<std::string>("preset"));
    const std::string dist = n.get<std::string>("distribution", "fixed");
    if (dist == "fixed")
        s.kind = ShapeKind::kFixed;
    else if (dist == "lognormal")
        s.kind = ShapeKind::kLognormal;
    else
        throw Error(n.at("distribution") + ": expected fixed or lognormal");
    s.prompt = n.get("prompt_tokens", s.prompt);
    s.output = n.get("output_tokens", s.output);
    s.prompt_sigma = n.get("prompt_sigma", s.prompt_sigma);
    s.output_sigma = n.get("output_sigma", s.output_sigma);
    s.max_prompt = n.get("max_prompt_tokens", s.max_prompt);
    s.max_output = n.get("max_output_tokens", s.max_output);
    n.finish();
    at_path(n.path(), [&] { s.validate(); });
    return s;
}

LocalPolicy parse_local(Node n, LocalPolicy p) {
    if (n.has("policy")) p.kind = parse_policy_kind(n.require<std::string>("policy"));
    p.slo_ms = n.get("slo_ms", p.slo_ms);
    p.chunk_size = n.get("chunk_size", p.chunk_size);
    p.prefill_cap = n.get("prefill_cap", p.prefill_cap);
    p.n_max = n.get("n_max", p.n_max);
    n.finish();
    return p;
}

void set_path(json& root, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0)
        throw Error("override '" + assignment + "': expected key=value");
    const std::string key = assignment.substr(0, eq);
    const std::string text = assignment.substr(eq + 1);
    json value;
    try {
        value = json::parse(text);
    } catch (const json::parse_error&) {
        value = text;
    }
    json* cur = &root;
    std::stringstream ss(key);
    std::string part;
    std::vector<std::string> parts;
    while (std::getline(ss, part, '.')) parts.push_back(part);
    for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
        json& next = (*cur)[parts[i]];
        if (next.is_null()) next = json::object();
        if (!next.is_object()) throw Error("override '" + key + "': " + parts[i] + " is not an object");
        cur = &next;
    }
    (*cur)[parts.back()] = value;
}

ForcedSplit parse_forced(Node n) {
    ForcedSplit f;
    const std::string mode = n.get<std::string>("mode", "none");
    if (mode == "none")
        f.mode = ForcedSplit::Mode::kNone;
    else if (mode == "phi")
        f.mode = ForcedSplit::Mode::kPhi;
    else if (mode == "token")
        f.mode = ForcedSplit::Mode::kToken;
    else if (mode == "disaggregate")
        f.mode = ForcedSplit::Mode::kDisaggregate;
    else if (mode == "alternate")
        f.mode = ForcedSplit::Mode::kAlternateEnds;
    else
        throw Error(n.at("mode") + ": expected none, phi, token, disaggregate or alternate");
    f.phi = n.get("phi", 0.0);
    f.token = n.get<TokenCount>("token", 0);
    if (f.mode == ForcedSplit::Mode::kPhi && !(f.phi >= 0.0 && f.phi <= 1.0))
        throw Error(n.at("phi") + ": must be in [0, 1]");
    n.finish();
    return f;
}

}  // namespace

HardwareProfile load_hardware(const std::string& path) {
    const json j = read_json_file(path);
    HardwareProfile h;
    at_path(path, [&] {
        h = parse_hardware(Node(j, ""));
        h.validate();
    });
    return h;
}

ExperimentConfig parse_config(const std::string& text, const std::vector<std::string>& overrides,
                              const std::string& base_dir) {
    json root;
    try {
        root = json::parse(text, nullptr, true, true);
    } catch (const json::parse_error& e) {
        throw Error(std::string("config: ") + e.what());
    }
    for (const std::string& o : overrides) set_path(root, o);

    ExperimentConfig c;
    Node n(root, "");
    c.name = n.get<std::string>("name", c.name);
    c.output_dir = n.get<std::string>("output_dir", c.output_dir);

    if (!n.has("hardware")) throw Error("hardware: required key missing");
    {
        const json& hw = n.raw("hardware");
        if (hw.is_string()) {
            c.cluster.hardware = load_hardware(resolve(hw.get<std::string>(), base_dir));
        } else {
            c.cluster.hardware = parse_hardware(Node(hw, "hardware"));
            at_path("hardware", [&] { c.cluster.hardware.validate(); });
        }
    }

    if (auto cl = n.child("cluster")) {
        ClusterConfig& k = c.cluster;
        k.instances = cl->get("instances", k.instances);
        if (cl->has("system"))
            at_path(cl->at("system"),
                    [&] { k.system = parse_system_kind(cl->require<std::string>("system")); });
        if (cl->has("transfer"))
            at_path(cl->at("transfer"),
                    [&] { k.transfer = parse_transfer_mode(cl->require<std::string>("transfer")); });
        k.chunk_size = cl->get("chunk_size", k.chunk_size);
        k.seed_table = cl->get("seed_table", k.seed_table);
        k.noise_seed = cl->get("noise_seed", k.noise_seed);
        k.record_batches = cl->get("record_batches", k.record_batches);
        cl->finish();
    }
    if (auto l = n.child("local")) {
        at_path("local", [&] {
            LocalPolicy aps = parse_local(*l, c.cluster.aps_policy);
            // One section configures both the SLO-aware and the baseline
            // policies; only the policy kind differs between them.
            const PolicyKind kind = aps.kind;
            c.cluster.aps_policy = aps;
            c.cluster.aps_policy.kind = kind == PolicyKind::kChunked ? PolicyKind::kChunked
                                                                     : PolicyKind::kAps;
            c.cluster.coloc_policy = aps;
            c.cluster.coloc_policy.kind = PolicyKind::kChunked;
        });
    }
    if (auto s = n.child("scheduler")) {
        SchedulerConfig& k = c.cluster.scheduler;
        k.max_steps = s->get("K", k.max_steps);
        k.epsilon_ms = s->get("epsilon_ms", k.epsilon_ms);
        k.margin_tokens = s->get("margin_tokens", k.margin_tokens);
        k.commit_best_probe = s->get("commit_best_probe", k.commit_best_probe);
        c.cluster.predictor.model_handoff = s->get("model_handoff", c.cluster.predictor.model_handoff);
        c.cluster.predictor.cache_capacity =
            s->get("cache_capacity", c.cluster.predictor.cache_capacity);
        s->finish();
        at_path("scheduler", [&] { k.validate(); });
    }
    if (auto f = n.child("forced_split")) c.cluster.forced = parse_forced(*f);
    if (auto t = n.child("table")) {
        ProfileTableOptions& k = c.cluster.table;
        k.bucket_factor = t->get("bucket_factor", k.bucket_factor);
        k.ema_alpha = t->get("ema_alpha", k.ema_alpha);
        k.default_budget = t->get("default_budget", k.default_budget);
        t->finish();
    }

    if (!n.has("workload")) throw Error("workload: required key missing");
    {
        Node w = *n.child("workload");
        WorkloadConfig& k = c.workload;
        if (w.has("preset")) {
            k.preset = w.require<std::string>("preset");
            at_path(w.at("preset"), [&] { k.spec = workload_preset(k.preset, 1.0, 60.0, 1); });
        }
        if (w.has("mix")) {
            const json& mix = w.raw("mix");
            if (!mix.is_array()) throw Error(w.at("mix") + ": expected an array");
            k.spec.mix.clear();
            for (std::size_t i = 0; i < mix.size(); ++i) {
                Node m(mix[i], w.at("mix") + "[" + std::to_string(i) + "]");
                WorkloadSource src;
                src.weight = m.get("weight", 1.0);
                if (auto sh = m.child("shape")) src.shape = parse_shape(*sh);
                m.finish();
                k.spec.mix.push_back(src);
            }
        }
        if (w.has("trace")) k.trace_path = resolve(w.require<std::string>("trace"), base_dir);
        k.time_scale = w.get("time_scale", k.time_scale);
        k.spec.rate_qps = w.get("rate_qps", k.spec.rate_qps);
        k.spec.duration_s = w.get("duration_s", k.spec.duration_s);
        k.spec.max_requests = w.get("max_requests", k.spec.max_requests);
        k.spec.seed = w.get("seed", k.spec.seed);
        k.spec.slo_tbt_ms = w.get("slo_tbt_ms", k.spec.slo_tbt_ms);
        if (auto p = w.child("predictor")) {
            const std::string mode = p->get<std::string>("mode", "oracle");
            if (mode == "oracle")
                k.spec.predictor.mode = LengthPredictor::Mode::kOracle;
            else if (mode == "noisy")
                k.spec.predictor.mode = LengthPredictor::Mode::kNoisy;
            else
                throw Error(p->at("mode") + ": expected oracle or noisy");
            k.spec.predictor.sigma = p->get("sigma", k.spec.predictor.sigma);
            p->finish();
        }
        w.finish();
        if (!k.trace_path && k.preset.empty() && !w.has("mix"))
            throw Error("workload: one of preset, mix or trace is required");
        k.spec.predictor.margin = c.cluster.scheduler.margin_tokens;
        at_path("workload", [&] { k.spec.validate(); });
    }

    if (auto m = n.child("metrics")) {
        c.metrics.slo_tbt_ms = m->get("slo_tbt_ms", c.metrics.slo_tbt_ms);
        if (m->has("slo_ttft_ms")) c.metrics.slo_ttft_ms = m->require<double>("slo_ttft_ms");
        c.metrics.strict_goodput = m->get("strict_goodput", c.metrics.strict_goodput);
        m->finish();
    }
    if (auto cap = n.child("capacity")) {
        c.criteria.target_attainment = cap->get("target_attainment", c.criteria.target_attainment);
        c.criteria.slo_tbt_ms = cap->get("p99_tbt_ms", c.criteria.slo_tbt_ms);
        if (cap->has("p99_ttft_ms")) c.criteria.p99_ttft_ms = cap->require<double>("p99_ttft_ms");
        c.capacity.lo_qps = cap->get("lo_qps", c.capacity.lo_qps);
        c.capacity.hi_qps = cap->get("hi_qps", c.capacity.hi_qps);
        c.capacity.resolution_qps = cap->get("resolution_qps", c.capacity.resolution_qps);
        c.capacity_duration_s = cap->get("duration_s", c.capacity_duration_s);
        cap->finish();
    }
    if (n.has("seeds")) c.seeds = n.require<std::vector<std::uint64_t>>("seeds");
    if (c.seeds.empty()) throw Error("seeds: must not be empty");
    if (n.has("systems")) {
        c.systems.clear();
        for (const std::string& s : n.require<std::vector<std::string>>("systems"))
            at_path("systems", [&] { c.systems.push_back(parse_system_kind(s)); });
    }
    if (auto s = n.child("sweep")) {
        c.sweep.points = s->get("points", c.sweep.points);
        c.sweep.requests = s->get("requests", c.sweep.requests);
        c.sweep.rate_qps = s->get("rate_qps", c.sweep.rate_qps);
        s->finish();
        if (c.sweep.points < 2) throw Error("sweep.points: must be >= 2");
    }
    if (auto r = n.child("replay")) {
        c.replay_bucket_min = r->get("bucket_min", c.replay_bucket_min);
        r->finish();
    }
    n.finish();
    at_path("cluster", [&] { c.cluster.validate(); });
    return c;
}

ExperimentConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open config '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    const auto base = std::filesystem::path(path).parent_path().string();
    return parse_config(ss.str(), overrides, base.empty() ? "." : base);
}

std::vector<Request> build_workload(const WorkloadConfig& w, std::uint64_t seed,
                                    std::optional<double> rate_qps,
                                    std::optional<double> duration_s) {
    if (w.trace_path) {
        TraceOptions t;
        t.time_scale = w.time_scale;
        t.slo_tbt_ms = w.spec.slo_tbt_ms;
        t.predictor = w.spec.predictor;
        t.seed = seed;
        return load_trace(*w.trace_path, t);
    }
    WorkloadSpec s = w.spec;
    s.seed = seed;
    if (rate_qps) s.rate_qps = *rate_qps;
    if (duration_s) s.duration_s = *duration_s;
    return generate(s);
}

}  // namespace apsim
