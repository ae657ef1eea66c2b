#pragma once

// Domain types for time-varying VAR processes, synthetic scenario
// generation and the masked/noisy observation channel.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <iostream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "jstirso/errors.hpp"

namespace jstirso {

using Index = Eigen::Index;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Rng = std::mt19937_64;

/// VAR(P) coefficients for N nodes.
///
/// Storage is one N x NP matrix whose n-th row is the per-node parameter
/// vector a_n. Column (n' * P + p - 1) holds the lag-p coefficient from
/// node n' to node n, i.e. the entry A_p(n, n'). The same node-major layout
/// is used by RegressorVector so that g.dot(a_n) is the VAR prediction.
class VarCoefficients {
public:
    VarCoefficients() = default;

    VarCoefficients(Index nodes, Index order) : order_(order), rows_(Matrix::Zero(nodes, nodes * order)) {
        if (nodes < 1 || order < 1) {
            throw ParameterError("VarCoefficients: N and P must be positive");
        }
    }

    static VarCoefficients from_rows(Matrix rows, Index order) {
        if (order < 1 || rows.cols() != rows.rows() * order) {
            throw UsageError("VarCoefficients::from_rows: expected an N x N*P matrix");
        }
        VarCoefficients out;
        out.order_ = order;
        out.rows_ = std::move(rows);
        return out;
    }

    /// Builds from the lag matrices A_1..A_P (lags[0] is A_1).
    static VarCoefficients from_lags(const std::vector<Matrix>& lags) {
        if (lags.empty()) {
            throw UsageError("VarCoefficients::from_lags: no lag matrices");
        }
        const Index n = lags.front().rows();
        VarCoefficients out(n, static_cast<Index>(lags.size()));
        for (Index p = 1; p <= out.order(); ++p) {
            const Matrix& a = lags[static_cast<std::size_t>(p - 1)];
            if (a.rows() != n || a.cols() != n) {
                throw UsageError("VarCoefficients::from_lags: lag matrices must all be N x N");
            }
            for (Index i = 0; i < n; ++i) {
                for (Index j = 0; j < n; ++j) {
                    out(p, i, j) = a(i, j);
                }
            }
        }
        return out;
    }

    Index nodes() const noexcept { return rows_.rows(); }
    Index order() const noexcept { return order_; }
    Index dim() const noexcept { return rows_.cols(); }

    /// Coefficient A_p(n, n') with 1-based lag p and 0-based nodes.
    double& operator()(Index lag, Index n, Index from) { return rows_(n, from * order_ + lag - 1); }
    double operator()(Index lag, Index n, Index from) const { return rows_(n, from * order_ + lag - 1); }

    Matrix lag(Index p) const {
        Matrix a(nodes(), nodes());
        for (Index i = 0; i < nodes(); ++i) {
            for (Index j = 0; j < nodes(); ++j) {
                a(i, j) = (*this)(p, i, j);
            }
        }
        return a;
    }

    std::vector<Matrix> lags() const {
        std::vector<Matrix> out;
        for (Index p = 1; p <= order_; ++p) {
            out.push_back(lag(p));
        }
        return out;
    }

    Vector node(Index n) const { return rows_.row(n).transpose(); }
    void set_node(Index n, const Vector& a_n) {
        if (a_n.size() != dim()) {
            throw UsageError("VarCoefficients::set_node: expected a vector of length N*P");
        }
        rows_.row(n) = a_n.transpose();
    }

    /// The length-P block a_{n,n'}.
    Vector block(Index n, Index from) const { return rows_.row(n).segment(from * order_, order_).transpose(); }

    bool has_edge(Index n, Index from) const { return (block(n, from).array() != 0.0).any(); }

    const Matrix& rows() const noexcept { return rows_; }
    Matrix& rows() noexcept { return rows_; }

    bool all_finite() const { return rows_.allFinite(); }

    VarCoefficients scaled(double c) const { return from_rows(rows_ * c, order_); }

    friend bool operator==(const VarCoefficients& a, const VarCoefficients& b) {
        return a.order_ == b.order_ && a.rows_.rows() == b.rows_.rows() && a.rows_ == b.rows_;
    }

private:
    Index order_ = 0;
    Matrix rows_;
};

/// Binary N x N support of the VAR graph; entry (n, n') = 1 means n' may
/// influence n. Self-loops are always present.
struct AdjacencySupport {
    Eigen::MatrixXi mask;

    Index nodes() const noexcept { return mask.rows(); }
    bool edge(Index n, Index from) const { return mask(n, from) != 0; }

    double off_diagonal_density() const {
        const Index n = nodes();
        if (n < 2) {
            return 0.0;
        }
        const double off = static_cast<double>(mask.sum() - mask.diagonal().sum());
        return off / static_cast<double>(n * (n - 1));
    }
};

/// A signal vector y[t] (or a reconstruction yhat[t]).
struct SignalFrame {
    std::int64_t t = 0;
    Vector y;
};

/// Masked noisy observation m[t] * (y[t] + eps[t]). Unobserved entries are
/// stored as 0; the mask is authoritative.
struct ObservationFrame {
    std::int64_t t = 0;
    Vector values;
    Eigen::VectorXi mask;

    Index observed_count() const { return mask.sum(); }
};

/// Node-major regressor: g((n') * P + p - 1) = yhat_{n'}[t - p].
struct RegressorVector {
    std::int64_t t = 0;
    Vector g;
};

struct ScenarioConfig {
    Index N = 10;
    Index P = 3;
    Index T = 3000;
    double sigma_u = 0.01;
    double sigma_eps = 0.01;
    double rho = 0.75;
    double p_e = 0.25;
    std::vector<Index> change_points{1000, 2000};
    double target_radius = 0.9;
    std::uint64_t seed = 1;

    void validate() const {
        if (N < 1) throw ParameterError("scenario.N must be >= 1");
        if (P < 1) throw ParameterError("scenario.P must be >= 1");
        if (T <= P) throw ParameterError("scenario.T must exceed P");
        if (!(sigma_u >= 0.0)) throw ParameterError("scenario.sigma_u must be >= 0");
        if (!(sigma_eps >= 0.0)) throw ParameterError("scenario.sigma_eps must be >= 0");
        if (!(rho > 0.0 && rho <= 1.0)) throw ParameterError("scenario.rho must lie in (0, 1]");
        if (!(p_e >= 0.0 && p_e <= 1.0)) throw ParameterError("scenario.p_e must lie in [0, 1]");
        if (!(target_radius > 0.0 && target_radius < 1.0)) {
            throw ParameterError("scenario.target_radius must lie in (0, 1)");
        }
        for (std::size_t i = 0; i < change_points.size(); ++i) {
            if (change_points[i] >= T || change_points[i] < 0) {
                throw ParameterError("scenario.change_points must lie in [0, T)");
            }
            if (i > 0 && change_points[i] <= change_points[i - 1]) {
                throw ParameterError("scenario.change_points must be strictly increasing");
            }
        }
    }
};

/// Piecewise-constant coefficient schedule over t = 0..T-1 sharing one
/// support.
struct CoefficientSchedule {
    AdjacencySupport support;
    std::vector<Index> starts;  // starts[0] == 0
    std::vector<VarCoefficients> segments;

    std::size_t segment_index(Index t) const {
        auto it = std::upper_bound(starts.begin(), starts.end(), t);
        return static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, (it - starts.begin()) - 1));
    }
    const VarCoefficients& at(Index t) const { return segments[segment_index(t)]; }

    static CoefficientSchedule constant(VarCoefficients coeffs) {
        CoefficientSchedule s;
        s.support.mask = Eigen::MatrixXi::Ones(coeffs.nodes(), coeffs.nodes());
        s.starts = {0};
        s.segments = {std::move(coeffs)};
        return s;
    }
};

// ---------------------------------------------------------------------------

/// Erdős–Rényi support with edge probability p_e and all self-loops.
inline AdjacencySupport generate_support(Index N, double p_e, Rng& rng) {
    if (N < 1) throw ParameterError("generate_support: N must be >= 1");
    if (!(p_e >= 0.0 && p_e <= 1.0)) throw ParameterError("generate_support: p_e must lie in [0, 1]");
    std::bernoulli_distribution coin(p_e);
    AdjacencySupport s;
    s.mask = Eigen::MatrixXi::Zero(N, N);
    for (Index i = 0; i < N; ++i) {
        for (Index j = 0; j < N; ++j) {
            s.mask(i, j) = (i == j) ? 1 : static_cast<int>(coin(rng));
        }
    }
    return s;
}

/// NP x NP companion matrix [A_1 ... A_P; I 0].
inline Matrix companion_matrix(const VarCoefficients& coeffs) {
    const Index n = coeffs.nodes();
    const Index p = coeffs.order();
    Matrix c = Matrix::Zero(n * p, n * p);
    for (Index lag = 1; lag <= p; ++lag) {
        c.block(0, (lag - 1) * n, n, n) = coeffs.lag(lag);
    }
    if (p > 1) {
        c.block(n, 0, n * (p - 1), n * (p - 1)).setIdentity();
    }
    return c;
}

inline double companion_spectral_radius(const VarCoefficients& coeffs) {
    if (!coeffs.all_finite()) {
        throw UsageError("companion_spectral_radius: non-finite coefficients");
    }
    if (coeffs.rows().isZero(0.0)) {
        return 0.0;
    }
    Eigen::EigenSolver<Matrix> solver(companion_matrix(coeffs), /*computeEigenvectors=*/false);
    return solver.eigenvalues().cwiseAbs().maxCoeff();
}

/// Finds one constant c with radius(c * coeffs) == target (bisection on c;
/// the radius is continuous in c and vanishes at c = 0).
inline VarCoefficients scale_to_spectral_radius(const VarCoefficients& coeffs, double target) {
    if (!(target > 0.0 && target < 1.0)) {
        throw ParameterError("scale_to_spectral_radius: target must lie in (0, 1)");
    }
    const double r1 = companion_spectral_radius(coeffs);
    if (r1 == 0.0) {
        throw ParameterError("scale_to_spectral_radius: coefficients have zero spectral radius");
    }
    double lo = 0.0;
    double hi = 1.0;
    while (companion_spectral_radius(coeffs.scaled(hi)) < target) {
        lo = hi;
        hi *= 2.0;
        if (hi > 1e12) {
            throw ParameterError("scale_to_spectral_radius: radius does not reach the target");
        }
    }
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        const double r = companion_spectral_radius(coeffs.scaled(mid));
        if (std::abs(r - target) <= 1e-12) {
            return coeffs.scaled(mid);
        }
        (r < target ? lo : hi) = mid;
        if (hi - lo <= 1e-16 * hi) {
            break;
        }
    }
    return coeffs.scaled(0.5 * (lo + hi));
}

/// Standard-normal coefficients on the support, scaled so the companion
/// spectral radius equals `target_radius`.
inline VarCoefficients generate_var_coefficients(const AdjacencySupport& support, Index P, double target_radius,
                                                 Rng& rng) {
    if (!(target_radius > 0.0 && target_radius < 1.0)) {
        throw ParameterError("generate_var_coefficients: target_radius must lie in (0, 1)");
    }
    const Index n = support.nodes();
    if (support.mask.isZero()) {
        throw ParameterError("generate_var_coefficients: support forces all-zero coefficients");
    }
    std::normal_distribution<double> normal(0.0, 1.0);
    for (int attempt = 0; attempt < 100; ++attempt) {
        VarCoefficients c(n, P);
        for (Index i = 0; i < n; ++i) {
            for (Index j = 0; j < n; ++j) {
                if (!support.edge(i, j)) continue;
                for (Index lag = 1; lag <= P; ++lag) {
                    c(lag, i, j) = normal(rng);
                }
            }
        }
        if (companion_spectral_radius(c) > 0.0) {
            return scale_to_spectral_radius(c, target_radius);
        }
    }
    throw ParameterError("generate_var_coefficients: repeated degenerate draws");
}

/// Piecewise-constant schedule with a fresh (re-scaled) draw on each segment
/// delimited by `config.change_points`. When `fixed_support` is given it is
/// used instead of drawing a new support.
inline CoefficientSchedule make_schedule_with_changes(const ScenarioConfig& config, Rng& rng,
                                                      const AdjacencySupport* fixed_support = nullptr) {
    config.validate();
    CoefficientSchedule s;
    s.support = fixed_support ? *fixed_support : generate_support(config.N, config.p_e, rng);
    s.starts.push_back(0);
    for (Index cp : config.change_points) {
        if (cp > 0) s.starts.push_back(cp);
    }
    for (std::size_t k = 0; k < s.starts.size(); ++k) {
        s.segments.push_back(generate_var_coefficients(s.support, config.P, config.target_radius, rng));
    }
    return s;
}

/// Simulates y[t] = sum_p A_p^(t) y[t-p] + u[t] for t = 0..T-1. The first P
/// frames are pure innovations unless `initial` supplies them.
inline std::vector<SignalFrame> simulate_var(const CoefficientSchedule& schedule, double sigma_u, Index T, Rng& rng,
                                             std::span<const Vector> initial = {}) {
    if (schedule.segments.empty()) throw UsageError("simulate_var: empty schedule");
    if (!(sigma_u >= 0.0)) throw ParameterError("simulate_var: sigma_u must be >= 0");
    const Index n = schedule.segments.front().nodes();
    const Index p = schedule.segments.front().order();
    if (!initial.empty() && static_cast<Index>(initial.size()) != p) {
        throw UsageError("simulate_var: initial frames must number exactly P");
    }
    for (const auto& seg : schedule.segments) {
        if (companion_spectral_radius(seg) >= 1.0) {
            std::clog << "warning: simulate_var: unstable coefficient segment (spectral radius >= 1)\n";
            break;
        }
    }
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<SignalFrame> out;
    out.reserve(static_cast<std::size_t>(T));
    for (Index t = 0; t < T; ++t) {
        Vector u(n);
        for (Index i = 0; i < n; ++i) u(i) = sigma_u * normal(rng);
        if (t < p) {
            out.push_back({t, initial.empty() ? u : initial[static_cast<std::size_t>(t)]});
            continue;
        }
        const VarCoefficients& a = schedule.at(t);
        Vector y = u;
        for (Index lag = 1; lag <= p; ++lag) {
            y.noalias() += a.lag(lag) * out[static_cast<std::size_t>(t - lag)].y;
        }
        out.push_back({t, std::move(y)});
    }
    return out;
}

/// m[t] ~ Bernoulli(rho) i.i.d., values = m * (y + eps), eps ~ N(0, sigma_eps^2 I).
inline ObservationFrame apply_observation_model(const SignalFrame& y, double rho, double sigma_eps, Rng& rng) {
    if (!(rho >= 0.0 && rho <= 1.0)) throw ParameterError("apply_observation_model: rho must lie in [0, 1]");
    if (!(sigma_eps >= 0.0)) throw ParameterError("apply_observation_model: sigma_eps must be >= 0");
    const Index n = y.y.size();
    std::normal_distribution<double> normal(0.0, 1.0);
    std::bernoulli_distribution coin(rho);
    ObservationFrame obs;
    obs.t = y.t;
    obs.values.resize(n);
    obs.mask.resize(n);
    for (Index i = 0; i < n; ++i) obs.values(i) = y.y(i) + sigma_eps * normal(rng);
    for (Index i = 0; i < n; ++i) obs.mask(i) = coin(rng) ? 1 : 0;
    for (Index i = 0; i < n; ++i) {
        if (obs.mask(i) == 0) obs.values(i) = 0.0;
    }
    return obs;
}

struct ScenarioData {
    CoefficientSchedule schedule;
    std::vector<SignalFrame> signals;
    std::vector<ObservationFrame> observations;
};

/// Schedule, signal and observations for one run, drawn in that order from
/// `rng`.
inline ScenarioData generate_scenario(const ScenarioConfig& config, Rng& rng,
                                      const AdjacencySupport* fixed_support = nullptr) {
    ScenarioData d;
    d.schedule = make_schedule_with_changes(config, rng, fixed_support);
    d.signals = simulate_var(d.schedule, config.sigma_u, config.T, rng);
    d.observations.reserve(d.signals.size());
    for (const auto& f : d.signals) d.observations.push_back(apply_observation_model(f, config.rho, config.sigma_eps, rng));
    return d;
}

/// Stacks the P most recent frames, history[0] = yhat[t-1], ...,
/// history[P-1] = yhat[t-P], into the node-major regressor for time t.
inline RegressorVector build_regressor(std::span<const SignalFrame> history, Index P) {
    if (static_cast<Index>(history.size()) != P || P < 1) {
        throw UsageError("build_regressor: expected exactly P history frames");
    }
    const Index n = history.front().y.size();
    for (std::size_t k = 1; k < history.size(); ++k) {
        if (history[k].t != history[k - 1].t - 1) {
            throw UsageError("build_regressor: history frames must be consecutive, most recent first");
        }
        if (history[k].y.size() != n) {
            throw UsageError("build_regressor: history frames differ in size");
        }
    }
    RegressorVector r;
    r.t = history.front().t + 1;
    r.g.resize(n * P);
    for (Index from = 0; from < n; ++from) {
        for (Index lag = 1; lag <= P; ++lag) {
            r.g(from * P + lag - 1) = history[static_cast<std::size_t>(lag - 1)].y(from);
        }
    }
    return r;
}

} // namespace jstirso
