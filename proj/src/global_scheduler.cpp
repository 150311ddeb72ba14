#include "apsim/global_scheduler.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

namespace apsim {

void SchedulerConfig::validate() const {
    if (max_steps < 1) throw Error("scheduler.K must be >= 1");
    if (!(epsilon_ms > 0.0)) throw Error("scheduler.epsilon_ms must be > 0");
    if (margin_tokens < 0) throw Error("scheduler.margin_tokens must be >= 0");
}

double disaggregation_phi(const PlanningView& r) {
    return static_cast<double>(r.prompt_len) / static_cast<double>(r.total_len());
}

GlobalScheduler::GlobalScheduler(SchedulerConfig config, std::vector<InstancePair> pairs,
                                 PredictorOptions predictor, ForcedSplit forced)
    : config_(config),
      pairs_(std::move(pairs)),
      clocks_(pairs_.size()),
      predictor_(predictor),
      forced_(forced) {
    config_.validate();
    if (pairs_.empty()) throw Error("global scheduler needs at least one instance pair");
}

std::optional<double> GlobalScheduler::forced_phi(const PlanningView& r) {
    const TokenCount len = r.total_len();
    switch (forced_.mode) {
        case ForcedSplit::Mode::kNone: return std::nullopt;
        case ForcedSplit::Mode::kPhi: return forced_.phi;
        case ForcedSplit::Mode::kToken:
            return static_cast<double>(std::clamp<TokenCount>(forced_.token, 0, len)) /
                   static_cast<double>(len);
        case ForcedSplit::Mode::kDisaggregate: return disaggregation_phi(r);
        case ForcedSplit::Mode::kAlternateEnds: return scheduled_ % 2 == 0 ? 1.0 : 0.0;
    }
    return std::nullopt;
}

Decision GlobalScheduler::schedule(const PlanningView& r, const ClusterSnapshot& load) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::size_t pair_index = cursor_;
    cursor_ = (cursor_ + 1) % pairs_.size();
    const InstancePair pair = pairs_[pair_index];

    Decision d;
    if (auto phi = forced_phi(r)) {
        d.forced = true;
        d.plan.phi = *phi;
        d.plan.split = split_point(*phi, r.total_len());
        d.plan.alpha_instance = pair.first;
        d.plan.beta_instance = pair.second;
        std::tie(d.alpha, d.beta) = split_at(r.id, r.prompt_len, r.total_len(), d.plan.split);
    } else {
        // Orientation: alpha goes where current work drains first.
        InstanceId a = pair.first;
        InstanceId b = pair.second;
        try {
            const MicroRequest none_a{r.id, Role::kAlpha, {1, 1}, 0, 0, {}};
            const MicroRequest none_b{r.id, Role::kBeta, {1, 1}, 0, 0, {}};
            const PairPrediction base = predictor_.predict_pair(none_a, none_b, r.prompt_len,
                                                                pair.first, pair.second, load);
            if (base.t2 < base.t1) std::swap(a, b);
        } catch (const Error&) {
            // keep the default orientation; search() reports the failure
        }
        const PairClocks& c = clocks_[pair_index];
        if (c.prefill_clk == 0.0 && c.decode_clk == 0.0)
            d = cold_start(r, pair_index, a, b, load);
        else
            d = search(r, a, b, load);
        if (d.committed_probe >= 0) {
            const Probe& p = d.probes[static_cast<std::size_t>(d.committed_probe)];
            clocks_[pair_index] = {p.prefill_clk, p.decode_clk};
        }
    }
    ++scheduled_;
    d.alpha.instance = d.plan.alpha_instance;
    d.beta.instance = d.plan.beta_instance;
    d.decision_us = std::chrono::duration<double, std::micro>(
                        std::chrono::steady_clock::now() - t0)
                        .count();
    return d;
}

Decision GlobalScheduler::cold_start(const PlanningView& r, std::size_t pair_index,
                                     InstanceId alpha_instance, InstanceId beta_instance,
                                     const ClusterSnapshot& load) {
    Decision d;
    d.cold_start = true;
    d.plan.phi = disaggregation_phi(r);
    d.plan.split = split_point(d.plan.phi, r.total_len());
    d.plan.alpha_instance = alpha_instance;
    d.plan.beta_instance = beta_instance;
    std::tie(d.alpha, d.beta) = split_at(r.id, r.prompt_len, r.total_len(), d.plan.split);
    try {
        const PairPrediction p = predictor_.predict_pair(d.alpha, d.beta, r.prompt_len,
                                                         alpha_instance, beta_instance, load);
        d.probes.push_back({d.plan.phi, d.plan.split, p.t1, p.t2, p.prefill_clk, p.decode_clk});
        d.committed_probe = 0;
        clocks_.at(pair_index) = {p.prefill_clk, p.decode_clk};
    } catch (const Error&) {
        d.fallback = true;
        ++fallbacks_;
    }
    return d;
}

Decision GlobalScheduler::search(const PlanningView& r, InstanceId alpha_instance,
                                 InstanceId beta_instance, const ClusterSnapshot& load) {
    Decision d;
    d.plan.alpha_instance = alpha_instance;
    d.plan.beta_instance = beta_instance;
    const TokenCount len = r.total_len();

    double phi = disaggregation_phi(r);
    double lo = 0.0;
    double hi = 1.0;
    std::optional<std::size_t> chosen;
    try {
        for (int k = 0; k < config_.max_steps; ++k) {
            const TokenCount s = split_point(phi, len);
            const auto [r1, r2] = split_at(r.id, r.prompt_len, len, s);
            const PairPrediction p =
                predictor_.predict_pair(r1, r2, r.prompt_len, alpha_instance, beta_instance, load);
            d.probes.push_back({phi, s, p.t1, p.t2, p.prefill_clk, p.decode_clk});
            if (std::abs(p.t1 - p.t2) <= config_.epsilon_ms) {
                chosen = d.probes.size() - 1;
                break;
            }
            // More alpha work raises T1 and lowers T2.
            if (p.t1 > p.t2)
                hi = phi;
            else
                lo = phi;
            phi = (lo + hi) / 2.0;
        }
    } catch (const Error&) {
        d.fallback = true;
        ++fallbacks_;
        d.probes.clear();
        d.plan.phi = disaggregation_phi(r);
        d.plan.split = split_point(d.plan.phi, len);
        std::tie(d.alpha, d.beta) = split_at(r.id, r.prompt_len, len, d.plan.split);
        return d;
    }

    if (!chosen) {
        chosen = d.probes.size() - 1;
        if (config_.commit_best_probe) {
            auto cost = [](const Probe& p) { return std::max(p.t1, p.t2); };
            for (std::size_t i = 0; i < d.probes.size(); ++i)
                if (cost(d.probes[i]) < cost(d.probes[*chosen])) chosen = i;
        }
    }
    d.committed_probe = static_cast<int>(*chosen);
    const Probe& c = d.probes[*chosen];
    d.plan.phi = c.phi;
    d.plan.split = c.split;
    std::tie(d.alpha, d.beta) = split_at(r.id, r.prompt_len, len, c.split);
    return d;
}

}  // namespace apsim
