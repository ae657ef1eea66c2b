#pragma once

// Group soft-thresholding and the per-time-step trackers (instantaneous,
// recursive, and the naive imputation baseline), plus an online runner
// that owns the fixed-size state of one tracker.

#include <algorithm>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Eigenvalues>

#include "jstirso/losses.hpp"

namespace jstirso {

enum class Algorithm { jstiso, jstirso, naive_tirso };
enum class StepRule { fixed, scaled_by_L };

inline std::string to_string(Algorithm a) {
    switch (a) {
        case Algorithm::jstiso: return "jstiso";
        case Algorithm::jstirso: return "jstirso";
        case Algorithm::naive_tirso: return "naive_tirso";
    }
    return "?";
}

struct TrackerConfig {
    double alpha = 0.01;
    double lambda = 0.0;
    double nu = 1.0;
    double gamma = 0.99;
    double sigma2_init = 0.01;
    StepRule step_rule = StepRule::fixed;
    double alpha_scale = 0.1;
    /// Feeds r and the running sum of squares.
    AccumulatorSource r_update_source = AccumulatorSource::reconstruction;
    /// What the regressor history is built from. `observation` is the
    /// variant whose coefficient path coincides with TISO/TIRSO on
    /// lossless data.
    AccumulatorSource regressor_source = AccumulatorSource::reconstruction;

    void validate() const {
        if (!(alpha > 0.0)) throw ParameterError("tracker.alpha must be > 0");
        if (!(lambda >= 0.0)) throw ParameterError("tracker.lambda must be >= 0");
        if (!(nu > 0.0)) throw ParameterError("tracker.nu must be > 0");
        if (!(gamma >= 0.0 && gamma < 1.0)) throw ParameterError("tracker.gamma must lie in [0, 1)");
        if (!(sigma2_init >= 0.0)) throw ParameterError("tracker.sigma2_init must be >= 0");
        if (!(alpha_scale > 0.0)) throw ParameterError("tracker.alpha_scale must be > 0");
    }
};

struct TrackerEstimate {
    std::int64_t t = 0;
    VarCoefficients coefficients;
    SignalFrame reconstruction;
};

/// Quantities a step used, kept for diagnostics.
struct StepDiagnostics {
    RegressorVector regressor;
    Vector mixing;  // U_n[t]
};

/// Blockwise prox of alpha*lambda * sum_{n' != self} ||a_{n'}||_2.
inline Vector group_soft_threshold(const Vector& a_f, Index P, double alpha_lambda, Index self_index) {
    if (P < 1 || a_f.size() % P != 0) throw UsageError("group_soft_threshold: length must be a multiple of P");
    if (!(alpha_lambda >= 0.0)) throw ParameterError("group_soft_threshold: alpha*lambda must be >= 0");
    const Index blocks = a_f.size() / P;
    Vector out = a_f;
    for (Index b = 0; b < blocks; ++b) {
        if (b == self_index) continue;
        auto blk = out.segment(b * P, P);
        const double norm = blk.norm();
        if (norm <= alpha_lambda) {
            blk.setZero();  // includes the 0/0 case
        } else {
            blk *= 1.0 - alpha_lambda / norm;
        }
    }
    return out;
}

namespace detail {

inline void check_step_inputs(const TrackerEstimate& prev, const ObservationFrame& obs,
                              std::span<const SignalFrame> history) {
    const Index n = prev.coefficients.nodes();
    if (obs.values.size() != n || obs.mask.size() != n) throw UsageError("tracker step: observation size mismatch");
    if (static_cast<Index>(history.size()) != prev.coefficients.order()) {
        throw UsageError("tracker step: history must hold exactly P frames");
    }
    if (history.front().t + 1 != obs.t) throw UsageError("tracker step: history does not end at t-1");
}

enum class Reconstruction { blend, impute_only };

inline double reconstruct(Reconstruction rule, const Vector& g, const Vector& a_n, const ObservationFrame& obs,
                          Index n, MixingWeight w) {
    if (rule == Reconstruction::impute_only) return obs.mask(n) != 0 ? obs.values(n) : g.dot(a_n);
    return reconstruct_node(g, a_n, obs.values(n), w);
}

inline std::pair<TrackerEstimate, JstirsoState> recursive_step(Reconstruction rule, const TrackerEstimate& prev,
                                                               const JstirsoState& state,
                                                               const ObservationFrame& obs,
                                                               std::span<const SignalFrame> history,
                                                               const TrackerConfig& cfg, StepDiagnostics* diag) {
    check_step_inputs(prev, obs, history);
    const Index N = prev.coefficients.nodes();
    const Index P = prev.coefficients.order();
    if (state.dim() != N * P || state.nodes() != N) throw UsageError("tracker step: state dimension mismatch");

    const RegressorVector g = build_regressor(history, P);
    const Index count = obs.observed_count();
    TrackerEstimate next{obs.t, VarCoefficients(N, P), SignalFrame{obs.t, Vector(N)}};
    Vector mixing(N);
    for (Index n = 0; n < N; ++n) {
        const MixingWeight w = mixing_weight(obs.mask(n), count, cfg.nu);
        mixing(n) = w.u;
        const Vector a_prev = prev.coefficients.node(n);
        // The gradient uses the t-1 accumulators.
        const Vector a_f = a_prev - cfg.alpha * jstirso_gradient(state, n, g.g, a_prev, obs.values(n), w);
        const Vector a_n = group_soft_threshold(a_f, P, cfg.alpha * cfg.lambda, n);
        next.coefficients.set_node(n, a_n);
        next.reconstruction.y(n) = reconstruct(rule, g.g, a_n, obs, n, w);
    }
    JstirsoState updated = update_state(state, g, next.reconstruction.y, obs, cfg.r_update_source);
    if (diag) *diag = {g, std::move(mixing)};
    return {std::move(next), std::move(updated)};
}

} // namespace detail

/// One instantaneous-loss step. `history[0]` is the frame at t-1.
inline TrackerEstimate jstiso_step(const TrackerEstimate& prev, const ObservationFrame& obs,
                                   std::span<const SignalFrame> history, const TrackerConfig& cfg,
                                   StepDiagnostics* diag = nullptr) {
    detail::check_step_inputs(prev, obs, history);
    const Index N = prev.coefficients.nodes();
    const Index P = prev.coefficients.order();
    const RegressorVector g = build_regressor(history, P);
    const Index count = obs.observed_count();
    TrackerEstimate next{obs.t, VarCoefficients(N, P), SignalFrame{obs.t, Vector(N)}};
    Vector mixing(N);
    for (Index n = 0; n < N; ++n) {
        const MixingWeight w = mixing_weight(obs.mask(n), count, cfg.nu);
        mixing(n) = w.u;
        const Vector a_prev = prev.coefficients.node(n);
        const Vector a_f = a_prev - cfg.alpha * jstiso_gradient(g.g, a_prev, obs.values(n), w);
        const Vector a_n = group_soft_threshold(a_f, P, cfg.alpha * cfg.lambda, n);
        next.coefficients.set_node(n, a_n);
        next.reconstruction.y(n) = reconstruct_node(g.g, a_n, obs.values(n), w);
    }
    if (diag) *diag = {g, std::move(mixing)};
    return next;
}

/// One recursive-loss step; returns the estimate and the time-t state.
inline std::pair<TrackerEstimate, JstirsoState> jstirso_step(const TrackerEstimate& prev, const JstirsoState& state,
                                                             const ObservationFrame& obs,
                                                             std::span<const SignalFrame> history,
                                                             const TrackerConfig& cfg,
                                                             StepDiagnostics* diag = nullptr) {
    return detail::recursive_step(detail::Reconstruction::blend, prev, state, obs, history, cfg, diag);
}

/// Recursive step whose reconstruction keeps observed samples as-is and
/// imputes missing ones with the VAR prediction.
inline std::pair<TrackerEstimate, JstirsoState> naive_tirso_step(const TrackerEstimate& prev,
                                                                 const JstirsoState& state,
                                                                 const ObservationFrame& obs,
                                                                 std::span<const SignalFrame> history,
                                                                 const TrackerConfig& cfg,
                                                                 StepDiagnostics* diag = nullptr) {
    return detail::recursive_step(detail::Reconstruction::impute_only, prev, state, obs, history, cfg, diag);
}

inline double max_eigenvalue(const Matrix& sym) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(sym, Eigen::EigenvaluesOnly);
    return es.eigenvalues().maxCoeff();
}

struct StepSizeEstimate {
    double L = 0.0;
    double alpha = 0.0;
};

/// L = max_t lambda_max(phi[t]) over the calibration matrices; alpha is
/// alpha_scale / L for the scaled rule and cfg.alpha otherwise.
inline StepSizeEstimate estimate_step_size(std::span<const Matrix> phi_trace, const TrackerConfig& cfg) {
    if (phi_trace.empty()) throw ParameterError("estimate_step_size: empty calibration data");
    double L = 0.0;
    for (const Matrix& phi : phi_trace) L = std::max(L, max_eigenvalue(phi));
    if (!(L > 0.0)) throw ParameterError("estimate_step_size: calibration data has zero energy");
    return {L, cfg.step_rule == StepRule::scaled_by_L ? cfg.alpha_scale / L : cfg.alpha};
}

/// Same as above, with phi[t] = gamma phi[t-1] + g[t]g[t]' (phi[P-1] =
/// sigma2_init I) accumulated over `signals` for t = P..end.
inline StepSizeEstimate estimate_step_size(std::span<const SignalFrame> signals, Index P, const TrackerConfig& cfg) {
    if (static_cast<Index>(signals.size()) <= P) throw ParameterError("estimate_step_size: empty calibration data");
    const Index N = signals.front().y.size();
    Matrix phi = cfg.sigma2_init * Matrix::Identity(N * P, N * P);
    double L = 0.0;
    std::vector<SignalFrame> hist(static_cast<std::size_t>(P));
    for (std::size_t t = static_cast<std::size_t>(P); t < signals.size(); ++t) {
        for (Index p = 1; p <= P; ++p) hist[static_cast<std::size_t>(p - 1)] = signals[t - static_cast<std::size_t>(p)];
        const RegressorVector g = build_regressor(hist, P);
        phi *= cfg.gamma;
        phi.noalias() += g.g * g.g.transpose();
        L = std::max(L, max_eigenvalue(phi));
    }
    if (!(L > 0.0)) throw ParameterError("estimate_step_size: calibration data has zero energy");
    return {L, cfg.step_rule == StepRule::scaled_by_L ? cfg.alpha_scale / L : cfg.alpha};
}

/// Owns the state of one tracker across time: the previous estimate, the P
/// most recent history frames and (for the recursive trackers) the
/// accumulators. Memory is constant in t.
class OnlineTracker {
public:
    OnlineTracker(Algorithm algorithm, TrackerConfig cfg, Index N, Index P)
        : algorithm_(algorithm), cfg_(cfg), N_(N), P_(P),
          state_(JstirsoState::initial(N, P, cfg.gamma, cfg.sigma2_init)) {
        cfg_.validate();
        estimate_.coefficients = VarCoefficients(N, P);
        estimate_.t = -1;
    }

    /// Feeds one of the first P frames: yhat[tau] = ytilde[tau].
    void warm_up(const ObservationFrame& obs) {
        if (warm_ >= P_) throw UsageError("OnlineTracker::warm_up: already received P frames");
        if (obs.t != warm_) throw UsageError("OnlineTracker::warm_up: frames must start at t = 0 and be consecutive");
        push_history({obs.t, obs.values});
        estimate_.t = obs.t;
        estimate_.reconstruction = {obs.t, obs.values};
        ++warm_;
    }

    const TrackerEstimate& step(const ObservationFrame& obs) {
        if (warm_ < P_) throw UsageError("OnlineTracker::step: call warm_up for the first P frames");
        previous_state_ = state_;
        switch (algorithm_) {
            case Algorithm::jstiso:
                estimate_ = jstiso_step(estimate_, obs, history_, cfg_, &diag_);
                break;
            case Algorithm::jstirso:
                std::tie(estimate_, state_) = jstirso_step(estimate_, state_, obs, history_, cfg_, &diag_);
                break;
            case Algorithm::naive_tirso:
                std::tie(estimate_, state_) = naive_tirso_step(estimate_, state_, obs, history_, cfg_, &diag_);
                break;
        }
        push_history(cfg_.regressor_source == AccumulatorSource::observation ? SignalFrame{obs.t, obs.values}
                                                                            : estimate_.reconstruction);
        return estimate_;
    }

    Algorithm algorithm() const noexcept { return algorithm_; }
    const TrackerConfig& config() const noexcept { return cfg_; }
    const TrackerEstimate& estimate() const noexcept { return estimate_; }
    /// Accumulators after the last step (time t).
    const JstirsoState& state() const noexcept { return state_; }
    /// Accumulators the last step's gradient used (time t-1).
    const JstirsoState& previous_state() const noexcept { return previous_state_; }
    const StepDiagnostics& diagnostics() const noexcept { return diag_; }
    std::span<const SignalFrame> history() const noexcept { return history_; }

private:
    void push_history(SignalFrame f) {
        history_.insert(history_.begin(), std::move(f));
        if (static_cast<Index>(history_.size()) > P_) history_.pop_back();
    }

    Algorithm algorithm_;
    TrackerConfig cfg_;
    Index N_;
    Index P_;
    Index warm_ = 0;
    TrackerEstimate estimate_;
    JstirsoState state_;
    JstirsoState previous_state_;
    StepDiagnostics diag_;
    std::vector<SignalFrame> history_;
};

} // namespace jstirso
