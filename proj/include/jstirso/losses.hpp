#pragma once

// Closed-form reconstruction, per-node inexact losses and gradients, and
// the forgetting-factor accumulators used by the recursive tracker.

#include <cmath>
#include <span>

#include "jstirso/model.hpp"

namespace jstirso {

/// Which per-node sample feeds the r-accumulator (and the running sum of
/// squares): the reconstruction yhat_n[t] or the raw observation ytilde_n[t].
enum class AccumulatorSource { reconstruction, observation };

/// U_n[t] = nu * m_n[t] / (|M_t| + nu), together with nu.
struct MixingWeight {
    double u = 0.0;
    double nu = 1.0;
};

inline MixingWeight mixing_weight(int mask_bit, Index observed_count, double nu) {
    if (!(nu > 0.0)) throw ParameterError("mixing_weight: nu must be > 0");
    if (mask_bit == 0 || observed_count == 0) return {0.0, nu};
    return {nu / (static_cast<double>(observed_count) + nu), nu};
}

inline Vector mixing_weights(const ObservationFrame& obs, double nu) {
    Vector u(obs.mask.size());
    const Index count = obs.observed_count();
    for (Index n = 0; n < u.size(); ++n) u(n) = mixing_weight(obs.mask(n), count, nu).u;
    return u;
}

/// yhat_n = (1 - U) g'a_n + U ytilde_n.
inline double reconstruct_node(const Vector& g, const Vector& a_n, double obs_value, MixingWeight w) {
    return (1.0 - w.u) * g.dot(a_n) + w.u * obs_value;
}

inline double jstiso_loss(const Vector& g, const Vector& a_n, double obs_value, MixingWeight w) {
    const double r = obs_value - g.dot(a_n);
    return 0.5 * w.u * r * r;
}

inline Vector jstiso_gradient(const Vector& g, const Vector& a_n, double obs_value, MixingWeight w) {
    if (g.size() != a_n.size()) throw UsageError("jstiso_gradient: dimension mismatch");
    return w.u * (g.dot(a_n) - obs_value) * g;
}

/// Accumulators of the recursive loss at one time instant:
///   phi      = sum_tau gamma^(t-tau) g[tau] g[tau]'          (NP x NP)
///   r.col(n) = sum_tau gamma^(t-tau) s_n[tau] g[tau]          (NP x N)
///   y2sum(n) = sum_tau gamma^(t-tau) s_n[tau]^2
/// where s is the configured accumulator source.
struct JstirsoState {
    Matrix phi;
    Matrix r;
    Vector y2sum;
    double gamma = 0.99;

    Index nodes() const noexcept { return r.cols(); }
    Index dim() const noexcept { return phi.rows(); }

    /// phi = sigma2 * I, r = 0.
    static JstirsoState initial(Index N, Index P, double gamma, double sigma2) {
        if (!(gamma >= 0.0 && gamma <= 1.0)) throw ParameterError("JstirsoState: gamma must lie in [0, 1]");
        if (!(sigma2 >= 0.0)) throw ParameterError("JstirsoState: sigma2 must be >= 0");
        JstirsoState s;
        s.phi = sigma2 * Matrix::Identity(N * P, N * P);
        s.r = Matrix::Zero(N * P, N);
        s.y2sum = Vector::Zero(N);
        s.gamma = gamma;
        return s;
    }
};

/// One step of the accumulator recursions. `recon` is yhat[t]; which of
/// recon/obs feeds r and y2sum is selected by `source`.
inline JstirsoState update_state(JstirsoState state, const RegressorVector& g, const Vector& recon,
                                 const ObservationFrame& obs,
                                 AccumulatorSource source = AccumulatorSource::reconstruction) {
    const Index dim = state.dim();
    if (g.g.size() != dim || recon.size() != state.nodes() || obs.values.size() != state.nodes()) {
        throw UsageError("update_state: dimension mismatch");
    }
    const Vector& s = source == AccumulatorSource::reconstruction ? recon : obs.values;
    state.phi *= state.gamma;
    state.phi.noalias() += g.g * g.g.transpose();
    state.r *= state.gamma;
    state.r.noalias() += g.g * s.transpose();
    state.y2sum = state.gamma * state.y2sum + s.cwiseAbs2();
    return state;
}

/// Gradient of the recursive per-node loss; `prev` is the time t-1 state.
///   U (g g'a - ytilde g) + gamma phi a - gamma r_n
inline Vector jstirso_gradient(const JstirsoState& prev, Index node, const Vector& g, const Vector& a_n,
                               double obs_value, MixingWeight w) {
    if (g.size() != prev.dim() || a_n.size() != prev.dim() || node < 0 || node >= prev.nodes()) {
        throw UsageError("jstirso_gradient: dimension mismatch");
    }
    Vector grad = prev.gamma * (prev.phi * a_n - prev.r.col(node));
    grad += w.u * (g.dot(a_n) - obs_value) * g;
    return grad;
}

/// Recursive per-node loss
///   1/2 U (ytilde - g'a)^2 + 1/2 (gamma y2sum_n + gamma a'phi a - 2 gamma r_n'a).
inline double jstirso_loss(const JstirsoState& prev, Index node, const Vector& g, const Vector& a_n,
                           double obs_value, MixingWeight w) {
    if (g.size() != prev.dim() || a_n.size() != prev.dim() || node < 0 || node >= prev.nodes()) {
        throw UsageError("jstirso_loss: dimension mismatch");
    }
    const double quad = a_n.dot(prev.phi * a_n);
    const double lin = prev.r.col(node).dot(a_n);
    return jstiso_loss(g, a_n, obs_value, w) + 0.5 * prev.gamma * (prev.y2sum(node) + quad - 2.0 * lin);
}

/// Exact gradient built from ground truth. `true_history` holds the P true
/// frames y[t-1]..y[t-P]; with `true_state == nullptr` the instantaneous
/// form is returned, otherwise the recursive form with the true
/// accumulators at t-1.
inline Vector true_gradient(std::span<const SignalFrame> true_history, const JstirsoState* true_state, Index node,
                            const Vector& a_n, double obs_value, MixingWeight w) {
    if (true_history.empty()) throw UsageError("true_gradient: ground truth is not available");
    const Index P = static_cast<Index>(true_history.size());
    const RegressorVector g = build_regressor(true_history, P);
    if (true_state == nullptr) return jstiso_gradient(g.g, a_n, obs_value, w);
    return jstirso_gradient(*true_state, node, g.g, a_n, obs_value, w);
}

} // namespace jstirso
