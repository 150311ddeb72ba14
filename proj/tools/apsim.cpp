// apsim command-line driver. Every subcommand takes a JSON experiment config;
// --set dotted.key=value overrides single keys before validation.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "apsim/commands.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Discrete-event simulator for split prefill/decode LLM serving"};
    app.require_subcommand(1);

    std::string config_path;
    std::vector<std::string> overrides;
    bool no_files = false;
    bool serial = false;
    auto common = [&](CLI::App* sub) {
        sub->add_option("config", config_path, "experiment config (JSON)")->required();
        sub->add_option("--set", overrides, "override a config key, e.g. workload.rate_qps=4");
        sub->add_flag("--no-files", no_files, "print reports only");
        sub->add_flag("--serial", serial, "run independent simulations on one thread");
    };

    CLI::App* run = app.add_subcommand("run", "one simulation, summary to stdout");
    CLI::App* sweep = app.add_subcommand("sweep-split", "throughput vs forced split position");
    CLI::App* capacity = app.add_subcommand("capacity", "max QPS meeting the SLO, per system");
    CLI::App* replay = app.add_subcommand("replay", "time-bucketed goodput over a trace");
    CLI::App* ablate = app.add_subcommand("ablate", "batching and transfer ablations");
    for (CLI::App* sub : {run, sweep, capacity, replay, ablate}) common(sub);

    std::optional<std::string> trace;
    std::optional<double> bucket_min;
    replay->add_option("--trace", trace, "trace CSV (overrides workload.trace)");
    replay->add_option("--bucket-min", bucket_min, "bucket width in minutes")
        ->check(CLI::PositiveNumber);

    CLI11_PARSE(app, argc, argv);

    try {
        const apsim::ExperimentConfig cfg = apsim::load_config(config_path, overrides);
        const bool files = !no_files;
        const auto exec = serial ? apsim::Execution::kSerial : apsim::Execution::kParallel;
        if (run->parsed()) apsim::cmd_run(cfg, std::cout, files);
        if (sweep->parsed()) apsim::cmd_sweep_split(cfg, std::cout, files, exec);
        if (capacity->parsed()) apsim::cmd_capacity(cfg, std::cout, files, exec);
        if (replay->parsed()) apsim::cmd_replay(cfg, std::cout, trace, bucket_min, files, exec);
        if (ablate->parsed()) apsim::cmd_ablate(cfg, std::cout, files, exec);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "apsim: %s\n", e.what());
        return 1;
    }
    return 0;
}
