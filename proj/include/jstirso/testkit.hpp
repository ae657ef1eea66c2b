#pragma once

// Independent oracles for the library: finite differences, the group-lasso
// prox optimality residual, non-recursive accumulator sums, and plain
// TISO/TIRSO reference trackers. Nothing here calls the production code
// path it is meant to check.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "jstirso/optimizer.hpp"

namespace jstirso::testkit {

struct OracleReport {
    std::string name;
    double max_abs_err = 0.0;
    double max_rel_err = 0.0;
    bool pass = true;
    std::size_t samples = 0;
};

inline Vector finite_difference_gradient(const std::function<double(const Vector&)>& f, const Vector& x,
                                         double h = 1e-5) {
    if (!(h > 0.0)) throw ParameterError("finite_difference_gradient: h must be > 0");
    Vector grad(x.size());
    Vector xp = x;
    for (Index i = 0; i < x.size(); ++i) {
        const double xi = x(i);
        xp(i) = xi + h;
        const double fp = f(xp);
        xp(i) = xi - h;
        const double fm = f(xp);
        xp(i) = xi;
        grad(i) = (fp - fm) / (2.0 * h);
    }
    return grad;
}

/// Largest blockwise violation of
///   0 in (x - v) + eta_lambda * d||x_b||   for b != self,   x_self = v_self,
/// for the prox of eta_lambda * sum_{b != self} ||x_b||.
inline double prox_kkt_residual(const Vector& v, const Vector& x, double eta_lambda, Index P, Index self_index) {
    if (v.size() != x.size() || P < 1 || v.size() % P != 0) throw UsageError("prox_kkt_residual: bad dimensions");
    double worst = 0.0;
    for (Index b = 0; b < v.size() / P; ++b) {
        double res = 0.0;
        double xn = 0.0;
        for (Index i = 0; i < P; ++i) xn += x(b * P + i) * x(b * P + i);
        xn = std::sqrt(xn);
        if (b == self_index) {
            for (Index i = 0; i < P; ++i) res = std::max(res, std::abs(x(b * P + i) - v(b * P + i)));
        } else if (xn > 0.0) {
            double s = 0.0;
            for (Index i = 0; i < P; ++i) {
                const double d = x(b * P + i) - v(b * P + i) + eta_lambda * x(b * P + i) / xn;
                s += d * d;
            }
            res = std::sqrt(s);
        } else {
            // (v - 0) must lie in the ball of radius eta_lambda.
            double vn = 0.0;
            for (Index i = 0; i < P; ++i) vn += v(b * P + i) * v(b * P + i);
            res = std::max(0.0, std::sqrt(vn) - eta_lambda);
        }
        worst = std::max(worst, res);
    }
    return worst;
}

struct DirectAccumulators {
    Matrix phi;
    Matrix r;  // column n
    Vector y2sum;
};

/// Phi = gamma^K sigma2 I + sum_k gamma^(K-1-k) g_k g_k', likewise for r and
/// the sum of squares, with k = 0..K-1 the successive update instants.
inline DirectAccumulators direct_accumulators(const std::vector<Vector>& g, const std::vector<Vector>& s, double gamma,
                                              double sigma2 = 0.0) {
    if (g.empty() || g.size() != s.size()) throw UsageError("direct_accumulators: need matching non-empty histories");
    const std::size_t K = g.size();
    const Index d = g[0].size();
    const Index n = s[0].size();
    DirectAccumulators out{Matrix::Zero(d, d), Matrix::Zero(d, n), Vector::Zero(n)};
    for (std::size_t k = 0; k < K; ++k) {
        const double w = std::pow(gamma, static_cast<double>(K - 1 - k));
        for (Index i = 0; i < d; ++i) {
            for (Index j = 0; j < d; ++j) out.phi(i, j) += w * g[k](i) * g[k](j);
            for (Index m = 0; m < n; ++m) out.r(i, m) += w * s[k](m) * g[k](i);
        }
        for (Index m = 0; m < n; ++m) out.y2sum(m) += w * s[k](m) * s[k](m);
    }
    const double w0 = std::pow(gamma, static_cast<double>(K)) * sigma2;
    for (Index i = 0; i < d; ++i) out.phi(i, i) += w0;
    return out;
}

namespace detail {

inline Vector stack_lags(const std::vector<SignalFrame>& y, std::size_t t, Index P) {
    const Index N = y[t].y.size();
    Vector g(N * P);
    for (Index m = 0; m < N; ++m)
        for (Index p = 1; p <= P; ++p) g(m * P + p - 1) = y[t - static_cast<std::size_t>(p)].y(m);
    return g;
}

inline void shrink_off_diagonal(Vector& a, Index P, Index self, double thr) {
    for (Index b = 0; b < a.size() / P; ++b) {
        if (b == self) continue;
        double norm = 0.0;
        for (Index i = 0; i < P; ++i) norm += a(b * P + i) * a(b * P + i);
        norm = std::sqrt(norm);
        const double scale = norm > thr ? 1.0 - thr / norm : 0.0;
        for (Index i = 0; i < P; ++i) a(b * P + i) *= scale;
    }
}

} // namespace detail

/// Plain sparse online VAR tracking on a fully observed sequence:
///   a_n <- prox(a_n - mu (g g'a_n - y_n g)).
/// Returns the estimates for t = P..T-1.
inline std::vector<Matrix> tiso_reference(const std::vector<SignalFrame>& y, Index P, double mu, double lambda) {
    const Index N = y.at(0).y.size();
    Matrix a = Matrix::Zero(N, N * P);
    std::vector<Matrix> out;
    for (std::size_t t = static_cast<std::size_t>(P); t < y.size(); ++t) {
        const Vector g = detail::stack_lags(y, t, P);
        for (Index n = 0; n < N; ++n) {
            Vector an = a.row(n).transpose();
            const double pred = g.dot(an);
            an -= mu * (pred - y[t].y(n)) * g;
            detail::shrink_off_diagonal(an, P, n, mu * lambda);
            a.row(n) = an.transpose();
        }
        out.push_back(a);
    }
    return out;
}

/// Recursive counterpart with forgetting factor gamma; the instantaneous
/// term is weighted by w[t] (w = 1 is the unweighted tracker).
///   grad = gamma (Phi a_n - r_n) + w (g g'a_n - y_n g)
inline std::vector<Matrix> tirso_reference(const std::vector<SignalFrame>& y, Index P, double alpha, double lambda,
                                           double gamma, double sigma2, const std::vector<double>& w) {
    const Index N = y.at(0).y.size();
    Matrix a = Matrix::Zero(N, N * P);
    Matrix phi = sigma2 * Matrix::Identity(N * P, N * P);
    Matrix r = Matrix::Zero(N * P, N);
    std::vector<Matrix> out;
    for (std::size_t t = static_cast<std::size_t>(P); t < y.size(); ++t) {
        const Vector g = detail::stack_lags(y, t, P);
        const double wt = w.at(t - static_cast<std::size_t>(P));
        for (Index n = 0; n < N; ++n) {
            Vector an = a.row(n).transpose();
            const Vector grad = gamma * (phi * an - r.col(n)) + wt * (g.dot(an) - y[t].y(n)) * g;
            an -= alpha * grad;
            detail::shrink_off_diagonal(an, P, n, alpha * lambda);
            a.row(n) = an.transpose();
        }
        phi = gamma * phi + g * g.transpose();
        for (Index n = 0; n < N; ++n) r.col(n) = gamma * r.col(n) + y[t].y(n) * g;
        out.push_back(a);
    }
    return out;
}

enum class RemarkMode { tiso_like, tirso_like };

struct RemarkRun {
    std::vector<Matrix> trajectory;  // t = P..T-1
    bool lossy = false;              // equivalence claim does not apply
};

/// Runs the production tracker with the regressor built from the raw
/// observations (and, for the recursive variant, r fed by them too).
inline RemarkRun remark_variant_runner(RemarkMode mode, const std::vector<ObservationFrame>& obs, Index P,
                                       TrackerConfig cfg, double sigma_eps = 0.0) {
    RemarkRun run;
    const Index N = obs.at(0).values.size();
    run.lossy = sigma_eps != 0.0;
    for (const auto& o : obs) run.lossy = run.lossy || o.observed_count() != N;
    cfg.regressor_source = AccumulatorSource::observation;
    cfg.r_update_source = AccumulatorSource::observation;
    OnlineTracker tracker(mode == RemarkMode::tiso_like ? Algorithm::jstiso : Algorithm::jstirso, cfg, N, P);
    for (std::size_t t = 0; t < obs.size(); ++t) {
        if (static_cast<Index>(t) < P) {
            tracker.warm_up(obs[t]);
        } else {
            run.trajectory.push_back(tracker.step(obs[t]).coefficients.rows());
        }
    }
    return run;
}

inline double max_abs_diff(const std::vector<Matrix>& a, const std::vector<Matrix>& b) {
    if (a.size() != b.size()) return INFINITY;
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, (a[i] - b[i]).cwiseAbs().maxCoeff());
    return m;
}

/// A random per-node problem: state at t-1, regressor, coefficients and one
/// observation frame.
struct GradientInstance {
    Index N = 0;
    Index P = 0;
    Index node = 0;
    JstirsoState state;
    Vector g;
    Vector a;
    ObservationFrame obs;
    double nu = 1.0;
};

inline GradientInstance random_gradient_instance(Rng& rng) {
    std::uniform_int_distribution<int> nd(1, 5), pd(1, 3);
    std::normal_distribution<double> normal;
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    GradientInstance in;
    in.N = nd(rng);
    in.P = pd(rng);
    const Index d = in.N * in.P;
    in.node = std::uniform_int_distribution<Index>(0, in.N - 1)(rng);
    in.nu = 0.1 + 10.0 * unif(rng);
    in.state.gamma = 0.5 + 0.5 * unif(rng);
    Matrix b(d, d + 2);
    for (Index i = 0; i < b.size(); ++i) b.data()[i] = normal(rng);
    in.state.phi = b * b.transpose() / static_cast<double>(d);
    in.state.r = Matrix(d, in.N);
    for (Index i = 0; i < in.state.r.size(); ++i) in.state.r.data()[i] = normal(rng);
    in.state.y2sum = Vector(in.N);
    for (Index i = 0; i < in.N; ++i) in.state.y2sum(i) = std::abs(normal(rng));
    in.g = Vector(d);
    in.a = Vector(d);
    for (Index i = 0; i < d; ++i) {
        in.g(i) = normal(rng);
        in.a(i) = normal(rng);
    }
    in.obs.values = Vector(in.N);
    in.obs.mask = Eigen::VectorXi(in.N);
    for (Index i = 0; i < in.N; ++i) {
        in.obs.mask(i) = unif(rng) < 0.75 ? 1 : 0;
        in.obs.values(i) = in.obs.mask(i) ? normal(rng) : 0.0;
    }
    return in;
}

namespace detail {

inline void record(OracleReport& rep, const Vector& analytic, const Vector& oracle, double tol) {
    const double abs_err = (analytic - oracle).cwiseAbs().maxCoeff();
    const double scale = std::max(analytic.cwiseAbs().maxCoeff(), 1e-300);
    const double rel_err = abs_err / scale;
    rep.max_abs_err = std::max(rep.max_abs_err, abs_err);
    rep.max_rel_err = std::max(rep.max_rel_err, analytic.isZero(0.0) ? abs_err : rel_err);
    rep.pass = rep.pass && (analytic.isZero(0.0) ? abs_err <= tol : rel_err <= tol);
    ++rep.samples;
}

} // namespace detail

/// Both gradients against central differences of their losses. The
/// relative error is taken against the largest gradient coordinate.
inline std::vector<OracleReport> gradient_sweep(std::size_t count, std::uint64_t seed, double tol = 1e-6) {
    Rng rng(seed);
    OracleReport inst{"jstiso_gradient", 0, 0, true, 0};
    OracleReport rec{"jstirso_gradient", 0, 0, true, 0};
    for (std::size_t k = 0; k < count; ++k) {
        const GradientInstance in = random_gradient_instance(rng);
        const MixingWeight w = mixing_weight(in.obs.mask(in.node), in.obs.observed_count(), in.nu);
        const double y = in.obs.values(in.node);
        const auto f_inst = [&](const Vector& a) { return jstiso_loss(in.g, a, y, w); };
        const auto f_rec = [&](const Vector& a) { return jstirso_loss(in.state, in.node, in.g, a, y, w); };
        detail::record(inst, jstiso_gradient(in.g, in.a, y, w), finite_difference_gradient(f_inst, in.a), tol);
        detail::record(rec, jstirso_gradient(in.state, in.node, in.g, in.a, y, w),
                       finite_difference_gradient(f_rec, in.a), tol);
    }
    return {inst, rec};
}

/// group_soft_threshold against the prox optimality residual. Every
/// fourth instance plants a zero block and a block inside the threshold.
inline OracleReport prox_sweep(std::size_t count, std::uint64_t seed, double tol = 1e-8) {
    Rng rng(seed);
    std::uniform_int_distribution<int> nd(1, 6), pd(1, 4);
    std::normal_distribution<double> normal;
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    OracleReport rep{"group_soft_threshold", 0, 0, true, 0};
    for (std::size_t k = 0; k < count; ++k) {
        const Index N = nd(rng), P = pd(rng);
        const Index self = std::uniform_int_distribution<Index>(0, N - 1)(rng);
        Vector v(N * P);
        for (Index i = 0; i < v.size(); ++i) v(i) = normal(rng);
        const double al = 2.0 * unif(rng);
        if (k % 4 == 0 && N > 1) {
            const Index zb = (self + 1) % N;
            v.segment(zb * P, P).setZero();
            if (N > 2) {
                const Index sb = (self + 2) % N;
                v.segment(sb * P, P) *= 0.5 * al / std::max(v.segment(sb * P, P).norm(), 1e-300);
            }
        }
        const Vector x = group_soft_threshold(v, P, al, self);
        const double res = prox_kkt_residual(v, x, al, P, self);
        rep.max_abs_err = std::max(rep.max_abs_err, res);
        rep.max_rel_err = rep.max_abs_err;
        rep.pass = rep.pass && res <= tol;
        ++rep.samples;
    }
    return rep;
}

/// update_state chain against the direct sums after T updates.
inline OracleReport recursion_check(Index N, Index P, std::size_t T, double gamma, std::uint64_t seed,
                                    double tol = 1e-10) {
    Rng rng(seed);
    std::normal_distribution<double> normal;
    const double sigma2 = 0.01;
    JstirsoState state = JstirsoState::initial(N, P, gamma, sigma2);
    std::vector<Vector> gs, ss;
    for (std::size_t t = 0; t < T; ++t) {
        RegressorVector g{static_cast<std::int64_t>(t), Vector(N * P)};
        Vector s(N);
        for (Index i = 0; i < N * P; ++i) g.g(i) = normal(rng);
        for (Index i = 0; i < N; ++i) s(i) = normal(rng);
        ObservationFrame obs{g.t, Vector::Zero(N), Eigen::VectorXi::Zero(N)};
        state = update_state(state, g, s, obs, AccumulatorSource::reconstruction);
        gs.push_back(g.g);
        ss.push_back(s);
    }
    const DirectAccumulators d = direct_accumulators(gs, ss, gamma, sigma2);
    OracleReport rep{"accumulator_recursion", 0, 0, true, T};
    rep.max_abs_err = std::max({(state.phi - d.phi).cwiseAbs().maxCoeff(), (state.r - d.r).cwiseAbs().maxCoeff(),
                                (state.y2sum - d.y2sum).cwiseAbs().maxCoeff()});
    rep.max_rel_err = rep.max_abs_err / std::max(d.phi.cwiseAbs().maxCoeff(), 1e-300);
    rep.pass = rep.max_abs_err <= tol;
    return rep;
}

} // namespace jstirso::testkit
