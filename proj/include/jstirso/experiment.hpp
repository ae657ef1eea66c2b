#pragma once

// Monte Carlo driver: simulates every run, feeds the configured trackers,
// aggregates NMSD curves and (optionally) the regret diagnostics, and
// writes the CSV/JSON artifacts.

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <thread>

#include "jstirso/analysis.hpp"
#include "jstirso/config.hpp"

namespace jstirso {

inline constexpr const char* kVersion = "0.1.0";

/// What one tracker produced on one run.
struct TrackerRun {
    ErrorSeries signal;
    ErrorSeries graph;
    double L = 0.0;
    double alpha = 0.0;
    std::vector<SignalFrame> recon;  // kept only when traces are written
    std::vector<Matrix> coeffs;
};

struct RunBounds {
    bool present = false;
    RegretReport report;
    std::string tracker;
};

struct RunResult {
    std::size_t index = 0;
    std::uint64_t seed = 0;
    bool ok = false;
    std::string error;
    std::vector<TrackerRun> trackers;
    RunBounds bounds;
    std::vector<SignalFrame> truth;  // kept only when traces are written
    std::vector<ObservationFrame> obs;
    std::vector<Matrix> true_coeffs;
};

struct RunOptions {
    bool keep_series = false;
    std::optional<GradientPerturbation> mutate;
    RegretOptions regret;
};

/// Streams one tracker over the observations. With `trace` non-null the
/// per-step quantities needed by the regret analysis are recorded, and the
/// true accumulators are advanced alongside the tracker's.
inline TrackerRun run_tracker(const TrackerSpec& spec, const TrackerConfig& cfg, const ScenarioData& data,
                              const ScenarioConfig& sc, bool keep_series, RunTrace* trace) {
    const Index N = sc.N, P = sc.P;
    OnlineTracker tr(spec.algorithm, cfg, N, P);
    TrackerRun out;
    JstirsoState truth_state = JstirsoState::initial(N, P, cfg.gamma, cfg.sigma2_init);
    if (trace) {
        trace->N = N;
        trace->P = P;
        trace->cfg = cfg;
        trace->initial_hat = tr.state();
        trace->initial_true = truth_state;
        trace->records.reserve(static_cast<std::size_t>(sc.T - P));
    }
    for (Index t = 0; t < sc.T; ++t) {
        const std::size_t ti = static_cast<std::size_t>(t);
        const ObservationFrame& obs = data.observations[ti];
        if (t < P) {
            tr.warm_up(obs);
            if (trace) {
                trace->warmup_truth.push_back(data.signals[ti]);
                trace->warmup_obs.push_back(obs);
            }
            continue;
        }
        const TrackerEstimate& est = tr.step(obs);
        const SignalFrame& y = data.signals[ti];
        const Matrix& a_true = data.schedule.at(t).rows();
        out.signal.num.push_back((y.y - est.reconstruction.y).squaredNorm());
        out.signal.den.push_back(y.y.squaredNorm());
        out.graph.num.push_back((est.coefficients.rows() - a_true).squaredNorm());
        out.graph.den.push_back(a_true.squaredNorm());
        if (keep_series) {
            out.recon.push_back(est.reconstruction);
            out.coeffs.push_back(est.coefficients.rows());
        }
        if (trace) {
            TraceRecord rec;
            rec.t = t;
            rec.y = y.y;
            rec.obs = obs;
            rec.recon = est.reconstruction.y;
            rec.coeffs = est.coefficients.rows();
            rec.true_coeffs = a_true;
            rec.g_hat = tr.diagnostics().regressor.g;
            std::vector<SignalFrame> hist;
            for (Index p = 1; p <= P; ++p) hist.push_back(data.signals[ti - static_cast<std::size_t>(p)]);
            rec.g_true = build_regressor(hist, P).g;
            truth_state = update_state(std::move(truth_state), {t, rec.g_true}, y.y, obs, cfg.r_update_source);
            rec.state_hat = tr.state();
            rec.state_true = truth_state;
            trace->records.push_back(std::move(rec));
        }
    }
    return out;
}

inline RunResult run_single(const ExperimentConfig& cfg, std::size_t k, const AdjacencySupport* fixed_support,
                            const RunOptions& opt) {
    RunResult res;
    res.index = k;
    res.seed = cfg.base_seed + k;
    try {
        Rng rng(res.seed);
        const ScenarioData data = generate_scenario(cfg.scenario, rng, fixed_support);
        const bool regret = cfg.diagnostics == Diagnostics::full_regret;
        std::optional<std::size_t> regret_tracker;
        if (regret) {
            for (std::size_t i = 0; i < cfg.trackers.size(); ++i) {
                if (cfg.trackers[i].algorithm == Algorithm::jstirso) {
                    regret_tracker = i;
                    break;
                }
            }
        }
        // L depends only on (gamma, sigma2_init) and the run's signal.
        std::map<std::pair<double, double>, double> L_cache;
        for (std::size_t i = 0; i < cfg.trackers.size(); ++i) {
            const TrackerSpec& spec = cfg.trackers[i];
            TrackerConfig tc = spec.config;
            double L = 0.0;
            const auto key = std::make_pair(tc.gamma, tc.sigma2_init);
            if (auto it = L_cache.find(key); it != L_cache.end()) {
                L = it->second;
            } else {
                L = estimate_step_size(std::span<const SignalFrame>(data.signals), cfg.scenario.P, tc).L;
                L_cache.emplace(key, L);
            }
            if (tc.step_rule == StepRule::scaled_by_L) tc.alpha = tc.alpha_scale / L;
            RunTrace trace;
            const bool want_trace = regret_tracker && *regret_tracker == i;
            TrackerRun tr = run_tracker(spec, tc, data, cfg.scenario, opt.keep_series, want_trace ? &trace : nullptr);
            tr.L = L;
            tr.alpha = tc.alpha;
            if (want_trace) {
                RegretOptions ro = opt.regret;
                ro.mutate = opt.mutate;
                res.bounds.present = true;
                res.bounds.tracker = spec.label;
                res.bounds.report = analyze_regret(trace, ro);
            }
            res.trackers.push_back(std::move(tr));
        }
        if (opt.keep_series) {
            res.truth = data.signals;
            res.obs = data.observations;
            for (Index t = 0; t < cfg.scenario.T; ++t) res.true_coeffs.push_back(data.schedule.at(t).rows());
        }
        res.ok = true;
    } catch (const std::exception& e) {
        res.ok = false;
        res.error = e.what();
        res.trackers.clear();
    }
    return res;
}

/// Runs every Monte Carlo index on `workers` threads; results are stored
/// by index, so the outcome does not depend on scheduling.
inline std::vector<RunResult> run_all(const ExperimentConfig& cfg, const RunOptions& opt = {}) {
    cfg.validate();
    std::optional<AdjacencySupport> fixed;
    if (!cfg.redraw_graph_per_run) {
        Rng g(cfg.scenario.seed);
        fixed = generate_support(cfg.scenario.N, cfg.scenario.p_e, g);
    }
    const std::size_t runs = static_cast<std::size_t>(cfg.mc_runs);
    std::vector<RunResult> results(runs);
    std::size_t workers = cfg.workers > 0 ? static_cast<std::size_t>(cfg.workers)
                                          : std::max<std::size_t>(1, std::thread::hardware_concurrency());
    workers = std::min(workers, runs);
    std::atomic<std::size_t> next{0};
    const auto work = [&]() {
        for (std::size_t k = next++; k < runs; k = next++) {
            results[k] = run_single(cfg, k, fixed ? &*fixed : nullptr, opt);
        }
    };
    if (workers <= 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
        for (auto& th : pool) th.join();
    }
    return results;
}

struct ExperimentSummary {
    std::vector<NmsdSeries> signal;  // per tracker
    std::vector<NmsdSeries> graph;
    std::vector<std::size_t> skipped;
    std::vector<RunResult> runs;
};

inline ExperimentSummary summarize(const ExperimentConfig& cfg, std::vector<RunResult> runs) {
    ExperimentSummary s;
    for (std::size_t i = 0; i < cfg.trackers.size(); ++i) {
        std::vector<ErrorSeries> sig, gr;
        for (const auto& r : runs) {
            if (!r.ok) continue;
            sig.push_back(r.trackers[i].signal);
            gr.push_back(r.trackers[i].graph);
        }
        if (sig.empty()) throw UsageError("run_experiment: every Monte Carlo run failed");
        s.signal.push_back(nmsd(sig));
        s.graph.push_back(nmsd(gr));
    }
    for (const auto& r : runs) {
        if (!r.ok) s.skipped.push_back(r.index);
    }
    s.runs = std::move(runs);
    return s;
}

// ---------------------------------------------------------------------------
// Output

namespace detail {

inline std::string fmt(double v) {
    if (std::isnan(v)) return "nan";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline void write_nmsd_csv(const std::filesystem::path& path, const ExperimentConfig& cfg,
                           const std::vector<NmsdSeries>& series) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("output_dir", "cannot write " + path.string());
    out << "t,algorithm,mean,stderr\n";
    const std::size_t len = series.front().mean.size();
    for (std::size_t k = 0; k < len; ++k) {
        for (std::size_t i = 0; i < cfg.trackers.size(); ++i) {
            out << (cfg.scenario.P + static_cast<Index>(k)) << ',' << cfg.trackers[i].label << ','
                << fmt(series[i].mean[k]) << ',' << fmt(series[i].stderr_[k]) << '\n';
        }
    }
}

inline void write_trace_csv(const std::filesystem::path& path, const ExperimentConfig& cfg, const RunResult& r) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("output_dir", "cannot write " + path.string());
    out << "t,algorithm,node,y,y_obs,mask,y_hat,coef_sq_err\n";
    const Index P = cfg.scenario.P;
    for (std::size_t k = 0; k < r.trackers.front().recon.size(); ++k) {
        const std::size_t t = k + static_cast<std::size_t>(P);
        for (std::size_t i = 0; i < cfg.trackers.size(); ++i) {
            const TrackerRun& tr = r.trackers[i];
            for (Index n = 0; n < cfg.scenario.N; ++n) {
                out << t << ',' << cfg.trackers[i].label << ',' << n << ',' << fmt(r.truth[t].y(n)) << ','
                    << fmt(r.obs[t].values(n)) << ',' << r.obs[t].mask(n) << ',' << fmt(tr.recon[k].y(n)) << ','
                    << fmt((tr.coeffs[k].row(n) - r.true_coeffs[t].row(n)).squaredNorm()) << '\n';
            }
        }
    }
}

inline void write_bounds_csv(const std::filesystem::path& path, const std::vector<RunResult>& runs) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("output_dir", "cannot write " + path.string());
    out << "run,t,node,regret_cum,theorem_bound,corollary_bound,W_cum,E_cum,B_v,B_e\n";
    for (const auto& r : runs) {
        if (!r.ok || !r.bounds.present) continue;
        for (const auto& row : r.bounds.report.rows) {
            out << r.index << ',' << row.t << ',' << row.node << ',' << fmt(row.regret_cum) << ','
                << fmt(row.theorem_bound) << ',' << fmt(row.corollary_bound) << ',' << fmt(row.W_cum) << ','
                << fmt(row.E_cum) << ',' << fmt(row.B_v) << ',' << fmt(row.B_e) << '\n';
        }
    }
}

inline json bounds_json(const RunResult& r) {
    const RegretReport& rep = r.bounds.report;
    const BoundConstants& c = rep.constants;
    json nodes = json::array();
    for (const auto& ch : rep.chain) {
        nodes.push_back({{"grad_within_Bv", ch.grad_within_Bv},
                         {"error_within_Be", ch.error_within_Be},
                         {"regret_within_theorem", ch.regret_within_theorem},
                         {"theorem_within_corollary", ch.theorem_within_corollary}});
    }
    return json{{"run", r.index},
                {"tracker", r.bounds.tracker},
                {"hypothesis_met", rep.hypothesis_met},
                {"alpha_in_range", rep.alpha_in_range},
                {"pass", rep.pass()},
                {"constants",
                 {{"B_y", c.B_y},
                  {"beta_l", c.beta_l},
                  {"L", c.L},
                  {"B_g", c.B_g},
                  {"B_Phi", c.B_Phi},
                  {"B_r", c.B_r},
                  {"B_v", c.B_v},
                  {"B_e", c.B_e},
                  {"sigma", c.sigma_step}}},
                {"min_regret_summand", rep.min_summand},
                {"solver_failures", rep.solver_failures},
                {"nodes", nodes}};
}

} // namespace detail

inline json manifest_json(const ExperimentConfig& cfg, const ExperimentSummary& s) {
    json trackers = json::array();
    for (std::size_t i = 0; i < cfg.trackers.size(); ++i) {
        json alphas = json::array(), Ls = json::array();
        for (const auto& r : s.runs) {
            if (!r.ok) continue;
            alphas.push_back(r.trackers[i].alpha);
            Ls.push_back(r.trackers[i].L);
        }
        trackers.push_back({{"label", cfg.trackers[i].label},
                            {"lambda", cfg.trackers[i].config.lambda},
                            {"alpha_per_run", alphas},
                            {"L_per_run", Ls},
                            {"nmsd_signal_degenerate", s.signal[i].any_degenerate()},
                            {"nmsd_graph_degenerate", s.graph[i].any_degenerate()}});
    }
    json skipped = json::array();
    for (const auto& r : s.runs) {
        if (!r.ok) skipped.push_back({{"run", r.index}, {"seed", r.seed}, {"error", r.error}});
    }
    json m{{"version", kVersion},
           {"config", to_json(cfg)},
           {"run_seeds", {{"first", cfg.base_seed}, {"count", cfg.mc_runs}}},
           {"trackers", trackers},
           {"skipped_runs", skipped},
           {"aggregate_complete", skipped.empty()}};
    if (cfg.diagnostics == Diagnostics::full_regret) {
        json b = json::array();
        for (const auto& r : s.runs) {
            if (r.ok && r.bounds.present) b.push_back(detail::bounds_json(r));
        }
        m["bounds"] = b;
    }
    return m;
}

/// Runs the experiment and writes nmsd_signal.csv, nmsd_graph.csv,
/// manifest.json and, when requested, trace_<k>.csv and bounds.csv.
inline ExperimentSummary run_experiment(const ExperimentConfig& cfg, const RunOptions& base = {}) {
    RunOptions opt = base;
    opt.keep_series = opt.keep_series || cfg.write_traces;
    ExperimentSummary s = summarize(cfg, run_all(cfg, opt));
    namespace fs = std::filesystem;
    const fs::path dir(cfg.output_dir);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw ConfigError("output_dir", "cannot create " + dir.string() + ": " + ec.message());
    detail::write_nmsd_csv(dir / "nmsd_signal.csv", cfg, s.signal);
    detail::write_nmsd_csv(dir / "nmsd_graph.csv", cfg, s.graph);
    if (cfg.write_traces) {
        for (const auto& r : s.runs) {
            if (r.ok) detail::write_trace_csv(dir / ("trace_" + std::to_string(r.index) + ".csv"), cfg, r);
        }
    }
    if (cfg.diagnostics == Diagnostics::full_regret) detail::write_bounds_csv(dir / "bounds.csv", s.runs);
    std::ofstream m(dir / "manifest.json", std::ios::binary);
    m << manifest_json(cfg, s).dump(2) << '\n';
    return s;
}

// ---------------------------------------------------------------------------
// Bound-chain check

struct BoundsCheckReport {
    struct Run {
        std::size_t index = 0;
        bool ok = false;
        std::string error;
        bool hypothesis_met = true;
        bool alpha_in_range = true;
        std::vector<NodeChain> nodes;
        BoundConstants constants;
    };
    std::vector<Run> runs;
    std::size_t violations = 0;       // node chains that failed
    std::size_t not_met = 0;          // runs flagged beta_l < floor
    std::size_t failed_runs = 0;
    bool pass() const { return violations == 0 && failed_runs == 0; }
};

inline BoundsCheckReport check_bounds(ExperimentConfig cfg, const RunOptions& opt = {}) {
    cfg.diagnostics = Diagnostics::full_regret;
    bool has_recursive = false;
    for (const auto& t : cfg.trackers) has_recursive = has_recursive || t.algorithm == Algorithm::jstirso;
    if (!has_recursive) throw ConfigError("trackers", "check-bounds needs a jstirso tracker");
    const auto runs = run_all(cfg, opt);
    BoundsCheckReport rep;
    for (const auto& r : runs) {
        BoundsCheckReport::Run row;
        row.index = r.index;
        row.ok = r.ok;
        row.error = r.error;
        if (!r.ok) {
            ++rep.failed_runs;
            rep.runs.push_back(row);
            continue;
        }
        const RegretReport& rr = r.bounds.report;
        row.hypothesis_met = rr.hypothesis_met;
        row.alpha_in_range = rr.alpha_in_range;
        row.nodes = rr.chain;
        row.constants = rr.constants;
        if (!rr.hypothesis_met) {
            ++rep.not_met;
        } else {
            for (const auto& ch : rr.chain) rep.violations += ch.pass() ? 0 : 1;
        }
        rep.runs.push_back(row);
    }
    return rep;
}

} // namespace jstirso
