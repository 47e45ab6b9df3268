// icoa: command-line front end for the experiment harness.
//
//   icoa run   --config cfg.json [--out DIR]
//   icoa sweep --config cfg.json [--alphas 1,10,50,200,800] [--deltas 0,0.05,0.5,0.75,1,2] [--out DIR]
//   icoa bound --config cfg.json [--alphas 1,10,50,200,800] [--out DIR]
//   icoa data  --config cfg.json --csv FILE
//
// Exit codes: 0 success, 2 configuration error, 3 runtime failure.

#include <exception>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "icoa/icoa.hpp"

namespace {

constexpr int kConfigError = 2;
constexpr int kRuntimeError = 3;

icoa::ExperimentConfig load(const std::string& path, const std::string& out) {
    icoa::ExperimentConfig cfg = icoa::load_config(path);
    if (!out.empty()) cfg.output_dir = out;
    return cfg;
}

void print_summary(const icoa::RunReport& r) {
    const auto& s = r.summary;
    std::cout << "method=" << s["method"].get<std::string>() << " replications=" << s["replications"]
              << " final_test_mse=" << s["final_test_mse"] << " mean_final_test_mse=" << s["mean_final_test_mse"]
              << " converged=" << s["converged"] << " diverged_runs=" << s["diverged_runs"]
              << " scalars_transmitted=" << s["scalars_transmitted"] << '\n';
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Iterative covariance optimization experiments"};
    app.require_subcommand(1);

    std::string config;
    std::string out;
    std::vector<double> alphas{1, 10, 50, 200, 800};
    std::vector<double> deltas{0, 0.05, 0.5, 0.75, 1, 2};
    std::string csv;

    auto* run = app.add_subcommand("run", "train one configuration (all replications)");
    auto* sweep = app.add_subcommand("sweep", "alpha x delta grid of protected runs");
    auto* bound = app.add_subcommand("bound", "upper bound vs realized test error at delta_opt(alpha)");
    auto* data = app.add_subcommand("data", "write the first replication's dataset as CSV");
    for (auto* sub : {run, sweep, bound, data}) sub->add_option("-c,--config", config, "JSON config file")->required();
    for (auto* sub : {run, sweep, bound}) sub->add_option("-o,--out", out, "output directory (overrides output_dir)");
    sweep->add_option("--alphas", alphas, "compression rates")->delimiter(',');
    sweep->add_option("--deltas", deltas, "uncertainty radii")->delimiter(',');
    bound->add_option("--alphas", alphas, "compression rates")->delimiter(',');
    data->add_option("--csv", csv, "output CSV path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kConfigError;
    }

    try {
        const icoa::ExperimentConfig cfg = load(config, out);
        if (run->parsed()) {
            print_summary(icoa::cmd_run(cfg));
        } else if (sweep->parsed()) {
            const auto r = icoa::cmd_sweep(cfg, alphas, deltas);
            icoa::write_sweep_table(std::cout, r);
        } else if (bound->parsed()) {
            const auto r = icoa::cmd_bound(cfg, alphas);
            icoa::write_bound_csv(std::cout, r);
        } else if (data->parsed()) {
            const auto seeds = icoa::derive_run_seeds(cfg.problem.seed, 0, 0);
            icoa::ProblemSpec p = cfg.problem;
            p.seed = seeds.data;
            std::ofstream f(csv, std::ios::binary | std::ios::trunc);
            if (!f) throw std::runtime_error("cannot write '" + csv + "'");
            icoa::write_csv(f, icoa::generate(p));
            if (!f) throw std::runtime_error("write failed for '" + csv + "'");
        }
    } catch (const icoa::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kConfigError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kRuntimeError;
    }
    return 0;
}
