#pragma once

// Metrics and regret diagnostics: NMSD aggregation, per-instant hindsight
// optima of the recursive composite loss, dynamic regret, path length,
// cumulative gradient error, empirical assumption constants and the
// closed-form bound evaluators.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>

#include "jstirso/optimizer.hpp"

namespace jstirso {

// ---------------------------------------------------------------------------
// NMSD

/// Per-run squared error and squared reference norm, one entry per t.
struct ErrorSeries {
    std::vector<double> num;
    std::vector<double> den;
};

struct NmsdSeries {
    std::vector<double> mean;
    std::vector<double> stderr_;
    std::vector<bool> degenerate;  // zero denominator at t
    bool any_degenerate() const { return std::find(degenerate.begin(), degenerate.end(), true) != degenerate.end(); }
};

/// ratio of Monte Carlo means; stderr is the standard error of the
/// numerator mean divided by the mean denominator.
inline NmsdSeries nmsd(std::span<const ErrorSeries> runs) {
    if (runs.empty()) throw UsageError("nmsd: at least one run is required");
    const std::size_t len = runs.front().num.size();
    for (const auto& r : runs) {
        if (r.num.size() != len || r.den.size() != len) throw UsageError("nmsd: runs differ in length");
    }
    const double k = static_cast<double>(runs.size());
    NmsdSeries out;
    out.mean.resize(len);
    out.stderr_.resize(len);
    out.degenerate.resize(len);
    for (std::size_t t = 0; t < len; ++t) {
        double num = 0.0, den = 0.0;
        for (const auto& r : runs) {
            num += r.num[t];
            den += r.den[t];
        }
        num /= k;
        den /= k;
        double var = 0.0;
        for (const auto& r : runs) var += (r.num[t] - num) * (r.num[t] - num);
        var = runs.size() > 1 ? var / (k - 1.0) : 0.0;
        out.degenerate[t] = !(den > 0.0);
        out.mean[t] = out.degenerate[t] ? std::numeric_limits<double>::quiet_NaN() : num / den;
        out.stderr_[t] = out.degenerate[t] ? std::numeric_limits<double>::quiet_NaN() : std::sqrt(var / k) / den;
    }
    return out;
}

inline ErrorSeries signal_errors(std::span<const SignalFrame> truth, std::span<const SignalFrame> recon) {
    if (truth.size() != recon.size()) throw UsageError("signal_errors: length mismatch");
    ErrorSeries e;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (truth[i].t != recon[i].t) throw UsageError("signal_errors: time indices differ");
        e.num.push_back((truth[i].y - recon[i].y).squaredNorm());
        e.den.push_back(truth[i].y.squaredNorm());
    }
    return e;
}

inline ErrorSeries graph_errors(std::span<const Matrix> truth, std::span<const Matrix> estimate) {
    if (truth.size() != estimate.size()) throw UsageError("graph_errors: length mismatch");
    ErrorSeries e;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        e.num.push_back((truth[i] - estimate[i]).squaredNorm());
        e.den.push_back(truth[i].squaredNorm());
    }
    return e;
}

// ---------------------------------------------------------------------------
// Per-run trace of the recursive tracker

struct TraceRecord {
    std::int64_t t = 0;
    Vector y;                // true y[t]
    ObservationFrame obs;    // ytilde[t], m[t]
    Vector recon;            // yhat[t]
    Matrix coeffs;           // estimate at t, N x NP
    Matrix true_coeffs;      // generating coefficients at t
    Vector g_hat;            // regressor from reconstructions
    Vector g_true;           // regressor from the true signal
    JstirsoState state_hat;  // accumulators at t
    JstirsoState state_true;
};

struct RunTrace {
    Index N = 0;
    Index P = 0;
    TrackerConfig cfg;
    JstirsoState initial_hat;   // accumulators at P-1
    JstirsoState initial_true;
    std::vector<SignalFrame> warmup_truth;         // y[0..P-1]
    std::vector<ObservationFrame> warmup_obs;      // ytilde[0..P-1]
    std::vector<TraceRecord> records;              // t = P..T-1

    const JstirsoState& prev_hat(std::size_t k) const { return k == 0 ? initial_hat : records[k - 1].state_hat; }
    const JstirsoState& prev_true(std::size_t k) const { return k == 0 ? initial_true : records[k - 1].state_true; }
};

inline NmsdSeries nmsd_signal(std::span<const RunTrace> runs) {
    std::vector<ErrorSeries> e;
    for (const auto& r : runs) {
        std::vector<SignalFrame> truth, recon;
        for (const auto& rec : r.records) {
            truth.push_back({rec.t, rec.y});
            recon.push_back({rec.t, rec.recon});
        }
        e.push_back(signal_errors(truth, recon));
    }
    return nmsd(e);
}

inline NmsdSeries nmsd_graph(std::span<const RunTrace> runs) {
    std::vector<ErrorSeries> e;
    for (const auto& r : runs) {
        std::vector<Matrix> truth, est;
        for (const auto& rec : r.records) {
            truth.push_back(rec.true_coeffs);
            est.push_back(rec.coeffs);
        }
        e.push_back(graph_errors(truth, est));
    }
    return nmsd(e);
}

// ---------------------------------------------------------------------------
// Composite per-node problem and its hindsight minimizer

/// h(a) = L(a) + lambda * sum_{n' != node} ||a_{n'}||, with L the recursive
/// loss at one instant (state at t-1, regressor and observation at t).
struct CompositeProblem {
    const JstirsoState* prev = nullptr;
    Index node = 0;
    Index P = 1;
    Vector g;
    double obs_value = 0.0;
    MixingWeight w;
    double lambda = 0.0;

    double smooth(const Vector& a) const { return jstirso_loss(*prev, node, g, a, obs_value, w); }
    Vector gradient(const Vector& a) const { return jstirso_gradient(*prev, node, g, a, obs_value, w); }
    double regularizer(const Vector& a) const {
        double s = 0.0;
        for (Index b = 0; b < a.size() / P; ++b) {
            if (b != node) s += a.segment(b * P, P).norm();
        }
        return lambda * s;
    }
    double value(const Vector& a) const { return smooth(a) + regularizer(a); }
    /// Hessian of the smooth part: U g g' + gamma phi.
    Matrix hessian() const { return w.u * g * g.transpose() + prev->gamma * prev->phi; }
};

struct HindsightResult {
    Vector a;
    int iterations = 0;
    bool converged = false;
};

/// Accelerated proximal gradient with adaptive restart, step 1/lambda_max
/// of the Hessian, stopped when successive iterates differ by <= tol.
inline HindsightResult hindsight_optimum(const CompositeProblem& pb, double tol = 1e-9, int max_iter = 100000,
                                         const Vector* warm_start = nullptr) {
    if (pb.prev == nullptr) throw UsageError("hindsight_optimum: missing state");
    const Index d = pb.g.size();
    const double lip = max_eigenvalue(pb.hessian());
    if (!(lip > 0.0)) {
        // Zero curvature: the minimizer is not unique; report the start.
        return {warm_start ? *warm_start : Vector::Zero(d), 0, false};
    }
    const double step = 1.0 / lip;
    Vector x = warm_start ? *warm_start : Vector::Zero(d);
    Vector z = x;
    double theta = 1.0;
    HindsightResult res;
    for (int it = 1; it <= max_iter; ++it) {
        const Vector x_next = group_soft_threshold(z - step * pb.gradient(z), pb.P, step * pb.lambda, pb.node);
        const double change = (x_next - x).norm();
        const double theta_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * theta * theta));
        if ((z - x_next).dot(x_next - x) > 0.0) {
            // Restart momentum when it points uphill.
            z = x_next;
            theta = 1.0;
        } else {
            z = x_next + ((theta - 1.0) / theta_next) * (x_next - x);
            theta = theta_next;
        }
        x = x_next;
        res.iterations = it;
        if (change <= tol) {
            res.converged = true;
            break;
        }
    }
    res.a = std::move(x);
    return res;
}

/// Per-block residual of -grad L(a) in d Omega(a); zero at the minimizer.
inline double composite_kkt_residual(const CompositeProblem& pb, const Vector& a) {
    const Vector grad = pb.gradient(a);
    double worst = 0.0;
    for (Index b = 0; b < a.size() / pb.P; ++b) {
        const auto gb = grad.segment(b * pb.P, pb.P);
        const auto ab = a.segment(b * pb.P, pb.P);
        double r;
        if (b == pb.node) {
            r = gb.norm();
        } else if (ab.norm() > 0.0) {
            r = (gb + pb.lambda * ab / ab.norm()).norm();
        } else {
            r = std::max(0.0, gb.norm() - pb.lambda);
        }
        worst = std::max(worst, r);
    }
    return worst;
}

inline CompositeProblem composite_at(const RunTrace& tr, std::size_t k, Index node) {
    const TraceRecord& rec = tr.records.at(k);
    CompositeProblem pb;
    pb.prev = &tr.prev_hat(k);
    pb.node = node;
    pb.P = tr.P;
    pb.g = rec.g_hat;
    pb.obs_value = rec.obs.values(node);
    pb.w = mixing_weight(rec.obs.mask(node), rec.obs.observed_count(), tr.cfg.nu);
    pb.lambda = tr.cfg.lambda;
    return pb;
}

/// optima[k].row(n) is the hindsight minimizer for node n at records[k].
struct Optima {
    std::vector<Matrix> a;
    int max_iterations = 0;
    std::size_t not_converged = 0;
};

inline Optima hindsight_optima(const RunTrace& tr, double tol = 1e-9, int max_iter = 100000) {
    Optima out;
    Matrix prev = Matrix::Zero(tr.N, tr.N * tr.P);
    for (std::size_t k = 0; k < tr.records.size(); ++k) {
        Matrix cur(tr.N, tr.N * tr.P);
        for (Index n = 0; n < tr.N; ++n) {
            const Vector warm = prev.row(n).transpose();
            const auto r = hindsight_optimum(composite_at(tr, k, n), tol, max_iter, &warm);
            cur.row(n) = r.a.transpose();
            out.max_iterations = std::max(out.max_iterations, r.iterations);
            out.not_converged += r.converged ? 0 : 1;
        }
        out.a.push_back(cur);
        prev = std::move(cur);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Regret, path length, gradient error

/// Row k: cumulative regret sum_{j <= k} [h_j(a[j]) - h_j(a_opt[j])] per node.
inline Matrix dynamic_regret(const RunTrace& tr, const Optima& opt, Matrix* summands = nullptr) {
    if (opt.a.size() != tr.records.size()) throw UsageError("dynamic_regret: optima and trace differ in length");
    const std::size_t K = tr.records.size();
    Matrix cum(static_cast<Index>(K), tr.N);
    if (summands) summands->resize(static_cast<Index>(K), tr.N);
    Vector run = Vector::Zero(tr.N);
    for (std::size_t k = 0; k < K; ++k) {
        for (Index n = 0; n < tr.N; ++n) {
            const CompositeProblem pb = composite_at(tr, k, n);
            const double d = pb.value(tr.records[k].coeffs.row(n).transpose()) - pb.value(opt.a[k].row(n).transpose());
            run(n) += d;
            if (summands) (*summands)(static_cast<Index>(k), n) = d;
        }
        cum.row(static_cast<Index>(k)) = run.transpose();
    }
    return cum;
}

/// Row k: sum_{1 <= j <= k} ||a[j] - a[j-1]|| per node (row 0 is zero).
inline Matrix path_length(const std::vector<Matrix>& optima) {
    if (optima.empty()) throw UsageError("path_length: no optima");
    const Index N = optima.front().rows();
    Matrix cum = Matrix::Zero(static_cast<Index>(optima.size()), N);
    for (std::size_t k = 1; k < optima.size(); ++k) {
        for (Index n = 0; n < N; ++n) {
            cum(static_cast<Index>(k), n) =
                cum(static_cast<Index>(k - 1), n) + (optima[k].row(n) - optima[k - 1].row(n)).norm();
        }
    }
    return cum;
}

/// Gradient mutation used to test the bound checker itself.
struct GradientPerturbation {
    std::size_t record = 0;
    Index node = 0;
    Index coordinate = 0;
    double delta = 1.0;
};

/// Inexact gradient of the recursive loss at the estimate a_n[t].
inline Vector inexact_gradient_at(const RunTrace& tr, std::size_t k, Index node,
                                  const std::optional<GradientPerturbation>& mutate = std::nullopt) {
    const TraceRecord& rec = tr.records[k];
    const MixingWeight w = mixing_weight(rec.obs.mask(node), rec.obs.observed_count(), tr.cfg.nu);
    Vector grad = jstirso_gradient(tr.prev_hat(k), node, rec.g_hat, rec.coeffs.row(node).transpose(),
                                   rec.obs.values(node), w);
    if (mutate && mutate->record == k && mutate->node == node) grad(mutate->coordinate) += mutate->delta;
    return grad;
}

/// Same loss with g, phi, r built from the true signal.
inline Vector true_gradient_at(const RunTrace& tr, std::size_t k, Index node) {
    const TraceRecord& rec = tr.records[k];
    const MixingWeight w = mixing_weight(rec.obs.mask(node), rec.obs.observed_count(), tr.cfg.nu);
    return jstirso_gradient(tr.prev_true(k), node, rec.g_true, rec.coeffs.row(node).transpose(),
                            rec.obs.values(node), w);
}

struct GradientTrace {
    Matrix grad_norm;   // K x N, ||inexact gradient||
    Matrix error_norm;  // K x N, ||inexact - true||
    Matrix error_cum;   // K x N, cumulative error norm
};

inline GradientTrace cumulative_gradient_error(const RunTrace& tr,
                                               const std::optional<GradientPerturbation>& mutate = std::nullopt) {
    if (tr.records.empty()) throw UsageError("cumulative_gradient_error: empty trace");
    const Index K = static_cast<Index>(tr.records.size());
    GradientTrace out{Matrix(K, tr.N), Matrix(K, tr.N), Matrix(K, tr.N)};
    for (Index k = 0; k < K; ++k) {
        for (Index n = 0; n < tr.N; ++n) {
            const Vector gi = inexact_gradient_at(tr, static_cast<std::size_t>(k), n, mutate);
            const Vector gt = true_gradient_at(tr, static_cast<std::size_t>(k), n);
            out.grad_norm(k, n) = gi.norm();
            out.error_norm(k, n) = (gi - gt).norm();
            out.error_cum(k, n) = (k > 0 ? out.error_cum(k - 1, n) : 0.0) + out.error_norm(k, n);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Assumption constants and bounds

struct BoundConstants {
    double B_y = 0.0;
    double beta_l = 0.0;
    double L = 0.0;
    double B_g = 0.0;
    double B_Phi = 0.0;
    double B_r = 0.0;
    double B_v = 0.0;
    double B_e = 0.0;
    double sigma_step = 0.0;
};

struct BoundParams {
    double nu = 1.0;
    double gamma = 0.99;
    Index P = 1;
    Index N = 1;
};

namespace detail {

inline std::pair<double, double> eig_range(const Matrix& sym) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(sym, Eigen::EigenvaluesOnly);
    return {es.eigenvalues().minCoeff(), es.eigenvalues().maxCoeff()};
}

inline double spectral_norm_sym(const Matrix& sym) {
    const auto [lo, hi] = eig_range(sym);
    return std::max(std::abs(lo), std::abs(hi));
}

} // namespace detail

/// Realized A1-A4 constants over the trace: samples over all t (warm-up
/// included); eigenvalue extremes over the accumulators at P-1..T-1;
/// sigma from consecutive optima when given.
inline BoundConstants empirical_constants(const RunTrace& tr, const std::vector<Matrix>* optima = nullptr) {
    BoundConstants c;
    c.beta_l = std::numeric_limits<double>::infinity();
    const auto sample = [&c](const Vector& v) {
        if (v.size() > 0) c.B_y = std::max(c.B_y, v.cwiseAbs2().maxCoeff());
    };
    for (const auto& f : tr.warmup_truth) sample(f.y);
    for (const auto& o : tr.warmup_obs) sample(o.values);
    const auto states = [&](const JstirsoState& hat, const JstirsoState& truth) {
        const auto [hl, hh] = detail::eig_range(hat.phi);
        const auto [tl, th] = detail::eig_range(truth.phi);
        c.beta_l = std::min({c.beta_l, hl, tl});
        c.L = std::max({c.L, hh, th});
        c.B_Phi = std::max(c.B_Phi, detail::spectral_norm_sym(hat.phi - truth.phi));
        for (Index n = 0; n < hat.nodes(); ++n) c.B_r = std::max(c.B_r, (hat.r.col(n) - truth.r.col(n)).norm());
    };
    states(tr.initial_hat, tr.initial_true);
    for (const auto& rec : tr.records) {
        sample(rec.y);
        sample(rec.recon);
        sample(rec.obs.values);
        c.B_g = std::max(c.B_g, (rec.g_hat - rec.g_true).norm());
        states(rec.state_hat, rec.state_true);
    }
    if (optima) {
        for (std::size_t k = 1; k < optima->size(); ++k) {
            for (Index n = 0; n < tr.N; ++n) {
                c.sigma_step = std::max(c.sigma_step, ((*optima)[k].row(n) - (*optima)[k - 1].row(n)).norm());
            }
        }
    }
    return c;
}

namespace detail {

inline void check_bound_inputs(const BoundConstants& c, const BoundParams& p, const char* who) {
    if (!(p.gamma > 0.0 && p.gamma < 1.0)) throw ParameterError(std::string(who) + ": gamma must lie in (0, 1)");
    if (!(c.beta_l > 0.0)) throw ParameterError(std::string(who) + ": beta_l must be > 0");
    if (!(p.nu > 0.0)) throw ParameterError(std::string(who) + ": nu must be > 0");
}

} // namespace detail

/// Bound on the norm of the inexact gradient at the estimate.
inline double bound_Bv(const BoundConstants& c, const BoundParams& p) {
    detail::check_bound_inputs(c, p, "bound_Bv");
    const double q = p.nu / (1.0 + p.nu);
    const double pn = static_cast<double>(p.P * p.N);
    const double spn = std::sqrt(pn);
    const double first = q * (pn * c.B_y + 2.0 * std::sqrt(pn * c.B_y) * c.B_g + c.B_g * c.B_g +
                              p.gamma * c.L * (1.0 + p.nu) / p.nu);
    const double second = (q * spn * c.B_y + spn * c.B_y / (1.0 - p.gamma)) / (c.beta_l * p.gamma);
    const double third = (q + p.gamma / (1.0 - p.gamma)) * spn * c.B_y;
    return first * second + third;
}

/// Bound on the norm of the gradient error.
inline double bound_Be(const BoundConstants& c, const BoundParams& p) {
    detail::check_bound_inputs(c, p, "bound_Be");
    const double q = p.nu / (1.0 + p.nu);
    const double pn = static_cast<double>(p.P * p.N);
    const double first = p.gamma * c.B_Phi + q * (2.0 * std::sqrt(pn * c.B_y) * c.B_g + c.B_g * c.B_g);
    const double second = std::sqrt(pn) * c.B_y / c.beta_l * (q + 1.0 / (1.0 - p.gamma));
    return first * second + p.gamma * c.B_r + q * c.B_g * std::sqrt(c.B_y);
}

struct RegretBound {
    double theorem = 0.0;
    double corollary = 0.0;
    bool alpha_in_range = true;  // alpha in (0, 1/L]
};

/// (1/(alpha beta_l)) [B_v + lambda sqrt(N)] (gap + W + alpha E), and the
/// same with E replaced by horizon * B_e.
inline RegretBound regret_bound(const BoundConstants& c, double W, double E, double horizon, double alpha,
                                double lambda, Index N, double init_gap) {
    if (!(alpha > 0.0)) throw ParameterError("regret_bound: alpha must be > 0");
    if (!(c.beta_l > 0.0)) throw ParameterError("regret_bound: beta_l must be > 0");
    const double pre = (c.B_v + lambda * std::sqrt(static_cast<double>(N))) / (alpha * c.beta_l);
    RegretBound b;
    b.theorem = pre * (init_gap + W + alpha * E);
    b.corollary = pre * (init_gap + W + alpha * horizon * c.B_e);
    b.alpha_in_range = c.L <= 0.0 || alpha <= 1.0 / c.L;
    return b;
}

// ---------------------------------------------------------------------------
// Full per-run regret analysis

struct RegretRecord {
    std::int64_t t = 0;
    Index node = 0;
    double regret_cum = 0.0;
    double theorem_bound = 0.0;
    double corollary_bound = 0.0;
    double W_cum = 0.0;
    double E_cum = 0.0;
    double B_v = 0.0;
    double B_e = 0.0;
};

struct NodeChain {
    bool grad_within_Bv = true;
    bool error_within_Be = true;
    bool regret_within_theorem = true;
    bool theorem_within_corollary = true;
    bool pass() const {
        return grad_within_Bv && error_within_Be && regret_within_theorem && theorem_within_corollary;
    }
};

struct RegretReport {
    BoundConstants constants;
    bool hypothesis_met = true;  // beta_l >= 1e-8
    bool alpha_in_range = true;
    std::vector<RegretRecord> rows;  // ordered by t, then node
    std::vector<NodeChain> chain;    // per node
    double min_summand = 0.0;        // most negative regret term
    std::size_t solver_failures = 0;
    bool pass() const {
        if (!hypothesis_met) return true;
        return std::all_of(chain.begin(), chain.end(), [](const NodeChain& c) { return c.pass(); });
    }
};

struct RegretOptions {
    double tol = 1e-9;
    int max_iter = 100000;
    double beta_floor = 1e-8;
    /// Slack for comparisons that involve solver-accurate quantities.
    double slack = 1e-8;
    std::optional<GradientPerturbation> mutate;
};

inline RegretReport analyze_regret(const RunTrace& tr, const RegretOptions& opt = {}) {
    RegretReport rep;
    const Optima optima = hindsight_optima(tr, opt.tol, opt.max_iter);
    rep.solver_failures = optima.not_converged;
    Matrix summands;
    const Matrix regret = dynamic_regret(tr, optima, &summands);
    rep.min_summand = summands.size() > 0 ? summands.minCoeff() : 0.0;
    const Matrix W = path_length(optima.a);
    const GradientTrace G = cumulative_gradient_error(tr, opt.mutate);

    rep.constants = empirical_constants(tr, &optima.a);
    rep.hypothesis_met = rep.constants.beta_l >= opt.beta_floor;
    rep.chain.assign(static_cast<std::size_t>(tr.N), NodeChain{});
    if (!rep.hypothesis_met) return rep;

    const BoundParams params{tr.cfg.nu, tr.cfg.gamma, tr.P, tr.N};
    rep.constants.B_v = bound_Bv(rep.constants, params);
    rep.constants.B_e = bound_Be(rep.constants, params);
    for (std::size_t k = 0; k < tr.records.size(); ++k) {
        const Index kk = static_cast<Index>(k);
        for (Index n = 0; n < tr.N; ++n) {
            // The estimate before the first step is zero.
            const double gap = optima.a[0].row(n).norm();
            const RegretBound b = regret_bound(rep.constants, W(kk, n), G.error_cum(kk, n),
                                               static_cast<double>(tr.records[k].t), tr.cfg.alpha, tr.cfg.lambda,
                                               tr.N, gap);
            rep.alpha_in_range = rep.alpha_in_range && b.alpha_in_range;
            RegretRecord row{tr.records[k].t, n, regret(kk, n), b.theorem, b.corollary, W(kk, n),
                             G.error_cum(kk, n), rep.constants.B_v, rep.constants.B_e};
            NodeChain& ch = rep.chain[static_cast<std::size_t>(n)];
            ch.grad_within_Bv = ch.grad_within_Bv && G.grad_norm(kk, n) <= rep.constants.B_v;
            ch.error_within_Be = ch.error_within_Be && G.error_norm(kk, n) <= rep.constants.B_e;
            ch.regret_within_theorem = ch.regret_within_theorem && row.regret_cum <= row.theorem_bound + opt.slack;
            ch.theorem_within_corollary = ch.theorem_within_corollary && row.theorem_bound <= row.corollary_bound;
            rep.rows.push_back(row);
        }
    }
    return rep;
}

} // namespace jstirso
