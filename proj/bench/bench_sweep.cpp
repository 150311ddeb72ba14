// Serial vs OpenMP fan-out for the split sweep and the grid-search oracle.

#include <benchmark/benchmark.h>

#include "apsim/instance.hpp"
#include "apsim/sweep.hpp"

using namespace apsim;

namespace {

Execution mode(const benchmark::State& state) {
    return state.range(0) == 0 ? Execution::kSerial : Execution::kParallel;
}

void BM_SweepSplit(benchmark::State& state) {
    WorkloadSpec spec = workload_preset("sweep", 4.0, 1e6, 1);
    spec.max_requests = 120;
    const auto w = generate(spec);
    const auto grid = split_grid(w.front().planned_len(), 8);
    for (auto _ : state)
        benchmark::DoNotOptimize(sweep_split(w, ClusterConfig{}, grid, mode(state)));
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(grid.size()));
}
BENCHMARK(BM_SweepSplit)->Arg(0)->Arg(1)->ArgName("parallel")->Unit(benchmark::kMillisecond);

void BM_GridOracle(benchmark::State& state) {
    ProfileTable t;
    t.seed_from(HardwareProfile{});
    std::vector<InstanceCore> cores;
    for (InstanceId i = 0; i < 2; ++i) cores.emplace_back(i, HardwareProfile{}, LocalPolicy{}, t);
    ClusterSnapshot load;
    for (const InstanceCore& c : cores) load.instances.push_back({&c, std::nullopt, 0.0});
    const PlanningView r{1, 0.0, 1024, 1044, 100.0};
    for (auto _ : state)
        benchmark::DoNotOptimize(grid_oracle({}, r, 0, 1, load, mode(state)));
    state.SetItemsProcessed(state.iterations() * (r.total_len() + 1));
}
BENCHMARK(BM_GridOracle)->Arg(0)->Arg(1)->ArgName("parallel")->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
