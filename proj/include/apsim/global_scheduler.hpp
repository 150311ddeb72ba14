#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "apsim/domain.hpp"
#include "apsim/predictor.hpp"

namespace apsim {

struct SchedulerConfig {
    int max_steps = 6;            // K: predictor probes per request
    double epsilon_ms = 5.0;      // balance tolerance on |T1 - T2|
    TokenCount margin_tokens = 20;  // added to predicted decode lengths upstream
    // Commit the most balanced probe instead of the last one when the loop
    // runs out of steps without reaching epsilon.
    bool commit_best_probe = true;

    void validate() const;
};

struct InstancePair {
    InstanceId first = 0;
    InstanceId second = 1;
};

// Overrides the split search; used by sweeps and the boundary tests.
struct ForcedSplit {
    enum class Mode : std::uint8_t {
        kNone,
        kPhi,            // constant phi
        kToken,          // constant split token s (clamped to L)
        kDisaggregate,   // phi = P / (P + D^)
        kAlternateEnds,  // phi = 1 for even-numbered requests, 0 for odd
    };
    Mode mode = Mode::kNone;
    double phi = 0.0;
    TokenCount token = 0;
};

struct Probe {
    double phi = 0.0;
    TokenCount split = 0;
    double t1 = 0.0;
    double t2 = 0.0;
    double prefill_clk = 0.0;
    double decode_clk = 0.0;
};

struct Decision {
    SplitPlan plan;
    MicroRequest alpha;
    MicroRequest beta;
    std::vector<Probe> probes;
    bool cold_start = false;
    bool forced = false;
    bool fallback = false;
    int committed_probe = -1;  // index into probes, -1 when none
    double decision_us = 0.0;  // wall-clock cost of the decision
};

class GlobalScheduler {
public:
    GlobalScheduler(SchedulerConfig config, std::vector<InstancePair> pairs,
                    PredictorOptions predictor = {}, ForcedSplit forced = {});

    // Split search for one request: pick the next pair round-robin, orient it
    // (alpha to the instance predicted to finish its current work first),
    // then cold-start or binary-search phi and return the committed split.
    Decision schedule(const PlanningView& r, const ClusterSnapshot& load);

    // Bounded binary search on a fixed orientation (no pair cursor, no cold
    // path). Falls back to the disaggregation split if the predictor throws.
    Decision search(const PlanningView& r, InstanceId alpha_instance, InstanceId beta_instance,
                    const ClusterSnapshot& load);

    // phi = P / (P + D^). Seeds the pair's prefill/decode clocks from the
    // predicted timeline of this split.
    Decision cold_start(const PlanningView& r, std::size_t pair_index,
                        InstanceId alpha_instance, InstanceId beta_instance,
                        const ClusterSnapshot& load);

    struct PairClocks {
        double prefill_clk = 0.0;
        double decode_clk = 0.0;
    };
    const PairClocks& clocks(std::size_t pair_index) const { return clocks_.at(pair_index); }
    const std::vector<InstancePair>& pairs() const { return pairs_; }
    const SchedulerConfig& config() const { return config_; }
    Predictor& predictor() { return predictor_; }
    std::size_t fallbacks() const { return fallbacks_; }

private:
    std::optional<double> forced_phi(const PlanningView& r);

    SchedulerConfig config_;
    std::vector<InstancePair> pairs_;
    std::vector<PairClocks> clocks_;
    Predictor predictor_;
    ForcedSplit forced_;
    std::size_t cursor_ = 0;
    std::size_t scheduled_ = 0;
    std::size_t fallbacks_ = 0;
};

// Disaggregation split ratio P / (P + D^).
double disaggregation_phi(const PlanningView& r);

}  // namespace apsim
