// Command-line driver: run experiments, check the regret bound chain, run
// the gradient/prox oracle sweep, print the default configuration.

#include <cstdio>
#include <iostream>

#include "CLI11.hpp"

#include "jstirso/jstirso.hpp"

using namespace jstirso;

namespace {

int cmd_run(const std::string& path, const std::string& out_dir, int workers) {
    ExperimentConfig cfg = load_experiment_config(path);
    if (!out_dir.empty()) cfg.output_dir = out_dir;
    if (workers >= 0) cfg.workers = workers;
    cfg.validate();
    const ExperimentSummary s = run_experiment(cfg);
    for (std::size_t i = 0; i < cfg.trackers.size(); ++i) {
        std::printf("%-16s final NMSD_s %.6g  NMSD_g %.6g\n", cfg.trackers[i].label.c_str(), s.signal[i].mean.back(),
                    s.graph[i].mean.back());
    }
    for (std::size_t k : s.skipped) {
        std::fprintf(stderr, "run %zu skipped: %s\n", k, s.runs[k].error.c_str());
    }
    std::printf("wrote %s\n", cfg.output_dir.c_str());
    return s.skipped.empty() ? 0 : 3;
}

int cmd_check_bounds(const std::string& path, int workers, bool mutate) {
    ExperimentConfig cfg = load_experiment_config(path);
    if (workers >= 0) cfg.workers = workers;
    RunOptions opt;
    if (mutate) opt.mutate = GradientPerturbation{};
    const BoundsCheckReport rep = check_bounds(cfg, opt);
    for (const auto& r : rep.runs) {
        if (!r.ok) {
            std::printf("run %zu: FAILED (%s)\n", r.index, r.error.c_str());
            continue;
        }
        if (!r.hypothesis_met) {
            std::printf("run %zu: hypothesis not met (beta_l = %.3g)\n", r.index, r.constants.beta_l);
            continue;
        }
        std::printf("run %zu: beta_l %.3g  L %.3g  B_v %.3g  B_e %.3g%s\n", r.index, r.constants.beta_l,
                    r.constants.L, r.constants.B_v, r.constants.B_e,
                    r.alpha_in_range ? "" : "  (alpha > 1/L)");
        for (std::size_t n = 0; n < r.nodes.size(); ++n) {
            const NodeChain& c = r.nodes[n];
            std::printf("  node %zu: %s  grad<=B_v %d  err<=B_e %d  regret<=thm %d  thm<=cor %d\n", n,
                        c.pass() ? "pass" : "VIOLATION", c.grad_within_Bv, c.error_within_Be,
                        c.regret_within_theorem, c.theorem_within_corollary);
        }
    }
    std::printf("%zu violation(s), %zu run(s) with hypothesis not met, %zu failed run(s)\n", rep.violations,
                rep.not_met, rep.failed_runs);
    return rep.pass() ? 0 : 1;
}

int cmd_gradcheck(std::size_t count, std::uint64_t seed) {
    std::vector<testkit::OracleReport> reports = testkit::gradient_sweep(count, seed);
    reports.push_back(testkit::prox_sweep(count, seed + 1));
    reports.push_back(testkit::recursion_check(4, 3, 100, 0.99, seed + 2));
    bool ok = true;
    for (const auto& r : reports) {
        std::printf("%-24s %s  samples %zu  max abs err %.3g  max rel err %.3g\n", r.name.c_str(),
                    r.pass ? "PASS" : "FAIL", r.samples, r.max_abs_err, r.max_rel_err);
        ok = ok && r.pass;
    }
    return ok ? 0 : 1;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Joint signal and topology tracking from partial, noisy observations"};
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);

    std::string config_path, out_dir;
    int workers = -1;
    auto* run = app.add_subcommand("run", "Run a Monte Carlo experiment and write CSV/JSON artifacts");
    run->add_option("config", config_path, "Experiment configuration (JSON)")->required()->check(CLI::ExistingFile);
    run->add_option("-o,--output-dir", out_dir, "Override output_dir");
    run->add_option("-j,--workers", workers, "Override the worker count (0 = all cores)");

    bool mutate = false;
    auto* bounds = app.add_subcommand("check-bounds", "Check the regret bound chain per run and node");
    bounds->add_option("config", config_path, "Experiment configuration (JSON)")->required()->check(CLI::ExistingFile);
    bounds->add_option("-j,--workers", workers, "Override the worker count (0 = all cores)");
    bounds->add_flag("--corrupt-gradient", mutate, "Add +1 to one gradient coordinate (self-test)");

    std::size_t count = 200;
    std::uint64_t seed = 1;
    auto* grad = app.add_subcommand("gradcheck", "Finite-difference and prox optimality oracle sweep");
    grad->add_option("-n,--count", count, "Random instances per oracle")->check(CLI::PositiveNumber);
    grad->add_option("-s,--seed", seed, "Seed");

    bool use_default = false;
    auto* print = app.add_subcommand("print-config", "Print a configuration with defaults filled in");
    std::string print_path;
    auto* print_file = print->add_option("config", print_path, "Experiment config (JSON)")->check(CLI::ExistingFile);
    print->add_flag("--default", use_default, "Print the built-in default configuration")->excludes(print_file);
    print->require_option(1);

    CLI11_PARSE(app, argc, argv);
    try {
        if (*run) return cmd_run(config_path, out_dir, workers);
        if (*bounds) return cmd_check_bounds(config_path, workers, mutate);
        if (*grad) return cmd_gradcheck(count, seed);
        if (*print) {
            std::cout << dump_config(use_default ? default_experiment_config() : load_experiment_config(print_path));
            return 0;
        }
    } catch (const ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
