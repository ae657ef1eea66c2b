#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "jstirso/model.hpp"

using namespace jstirso;

namespace {

// Growth rate of ||C^k x|| between k and 2k; avoids any eigen-decomposition.
double power_iteration_radius(const Matrix& c, int k) {
    Vector x = Vector::Ones(c.rows());
    double log_norm = 0.0;
    double at_k = 0.0;
    for (int i = 1; i <= 2 * k; ++i) {
        x = c * x;
        const double nx = x.norm();
        log_norm += std::log(nx);
        x /= nx;
        if (i == k) at_k = log_norm;
    }
    return std::exp((log_norm - at_k) / k);
}

Matrix explicit_companion(const std::vector<Matrix>& lags) {
    const Index n = lags[0].rows();
    const Index p = static_cast<Index>(lags.size());
    Matrix c = Matrix::Zero(n * p, n * p);
    for (Index i = 0; i < n; ++i)
        for (Index k = 0; k < p; ++k)
            for (Index j = 0; j < n; ++j) c(i, k * n + j) = lags[static_cast<std::size_t>(k)](i, j);
    for (Index i = n; i < n * p; ++i) c(i, i - n) = 1.0;
    return c;
}

} // namespace

TEST(VarCoefficients, LayoutRoundTrip) {
    Rng rng(11);
    std::normal_distribution<double> normal;
    std::vector<Matrix> lags(3, Matrix(4, 4));
    for (auto& a : lags)
        for (Index i = 0; i < 4; ++i)
            for (Index j = 0; j < 4; ++j) a(i, j) = normal(rng);
    const auto c = VarCoefficients::from_lags(lags);
    const auto back = c.lags();
    for (std::size_t p = 0; p < 3; ++p) EXPECT_EQ(back[p], lags[p]);
    EXPECT_EQ(VarCoefficients::from_rows(c.rows(), 3), c);
    // a_{n,n'} = [A_1(n,n'), ..., A_P(n,n')]
    EXPECT_DOUBLE_EQ(c.block(2, 1)(0), lags[0](2, 1));
    EXPECT_DOUBLE_EQ(c.block(2, 1)(2), lags[2](2, 1));
    EXPECT_DOUBLE_EQ(c.node(2)(1 * 3 + 1), lags[1](2, 1));
}

TEST(VarCoefficients, EdgeSetConsistency) {
    VarCoefficients c(3, 2);
    EXPECT_FALSE(c.has_edge(0, 1));
    c(2, 0, 1) = 1e-300;
    EXPECT_TRUE(c.has_edge(0, 1));
    EXPECT_FALSE(c.has_edge(1, 0));
}

TEST(VarCoefficients, RejectsBadShapes) {
    EXPECT_THROW(VarCoefficients(0, 1), ParameterError);
    EXPECT_THROW(VarCoefficients::from_rows(Matrix::Zero(2, 3), 2), UsageError);
}

TEST(GenerateSupport, TrivialProbabilities) {
    Rng rng(1);
    EXPECT_EQ(generate_support(3, 0.0, rng).mask, Eigen::MatrixXi::Identity(3, 3));
    EXPECT_EQ(generate_support(3, 1.0, rng).mask, Eigen::MatrixXi::Ones(3, 3));
    EXPECT_THROW(generate_support(3, 1.5, rng), ParameterError);
    EXPECT_THROW(generate_support(3, -0.1, rng), ParameterError);
}

TEST(GenerateSupport, DensityMatchesEdgeProbability) {
    Rng rng(7);
    double total = 0.0;
    for (int k = 0; k < 1000; ++k) {
        const auto s = generate_support(10, 0.25, rng);
        EXPECT_EQ(s.mask.diagonal(), Eigen::VectorXi::Ones(10));
        EXPECT_TRUE((s.mask.array() == 0 || s.mask.array() == 1).all());
        total += s.off_diagonal_density();
    }
    EXPECT_NEAR(total / 1000.0, 0.25, 0.02);
}

TEST(GenerateSupport, Deterministic) {
    Rng a(5), b(5);
    EXPECT_EQ(generate_support(8, 0.3, a).mask, generate_support(8, 0.3, b).mask);
}

TEST(CompanionRadius, TrivialCases) {
    EXPECT_EQ(companion_spectral_radius(VarCoefficients(3, 2)), 0.0);
    Matrix a = Matrix::Zero(2, 2);
    a(0, 0) = 0.5;
    a(1, 1) = -0.25;
    EXPECT_NEAR(companion_spectral_radius(VarCoefficients::from_lags({a})), 0.5, 1e-15);
}

TEST(CompanionRadius, MatchesExplicitCompanionEigenvalues) {
    Rng rng(21);
    std::normal_distribution<double> normal;
    for (int rep = 0; rep < 20; ++rep) {
        std::vector<Matrix> lags(2, Matrix(3, 3));
        for (auto& a : lags)
            for (Index i = 0; i < 3; ++i)
                for (Index j = 0; j < 3; ++j) a(i, j) = normal(rng);
        Eigen::ComplexEigenSolver<Matrix> es(explicit_companion(lags), false);
        const double expected = es.eigenvalues().cwiseAbs().maxCoeff();
        const double got = companion_spectral_radius(VarCoefficients::from_lags(lags));
        EXPECT_LE(std::abs(got - expected), 1e-8 * expected);
    }
}

TEST(GenerateCoefficients, DiagonalSupportP1) {
    Rng rng(2);
    AdjacencySupport s{Eigen::MatrixXi::Identity(4, 4)};
    const auto c = generate_var_coefficients(s, 1, 0.9, rng);
    EXPECT_NEAR(c.lag(1).diagonal().cwiseAbs().maxCoeff(), 0.9, 1e-6);
    EXPECT_TRUE(c.lag(1).isDiagonal(0.0));
}

TEST(GenerateCoefficients, RadiusAndSupport) {
    Rng rng(3);
    for (int rep = 0; rep < 20; ++rep) {
        const auto s = generate_support(6, 0.3, rng);
        const auto c = generate_var_coefficients(s, 3, 0.9, rng);
        EXPECT_NEAR(companion_spectral_radius(c), 0.9, 1e-6);
        for (Index i = 0; i < 6; ++i)
            for (Index j = 0; j < 6; ++j) EXPECT_EQ(c.has_edge(i, j), s.edge(i, j));
    }
}

TEST(GenerateCoefficients, PowerIterationOracle) {
    Rng rng(3);
    AdjacencySupport s = generate_support(4, 0.25, rng);
    const auto c = generate_var_coefficients(s, 2, 0.9, rng);
    EXPECT_NEAR(power_iteration_radius(companion_matrix(c), 20000), 0.9, 1e-4);
    EXPECT_THROW(generate_var_coefficients(AdjacencySupport{Eigen::MatrixXi::Zero(2, 2)}, 2, 0.9, rng),
                 ParameterError);
    EXPECT_THROW(generate_var_coefficients(s, 2, 1.0, rng), ParameterError);
}

TEST(Schedule, NoChangesIsConstant) {
    ScenarioConfig cfg;
    cfg.change_points = {};
    cfg.T = 100;
    Rng rng(4);
    const auto s = make_schedule_with_changes(cfg, rng);
    EXPECT_EQ(s.segments.size(), 1u);
    EXPECT_EQ(s.at(cfg.P), s.at(cfg.T - 1));
}

TEST(Schedule, ThreeSegmentsSharedSupport) {
    ScenarioConfig cfg;
    cfg.T = 300;
    cfg.change_points = {100, 200};
    Rng rng(4);
    const auto s = make_schedule_with_changes(cfg, rng);
    ASSERT_EQ(s.segments.size(), 3u);
    EXPECT_EQ(s.segment_index(99), 0u);
    EXPECT_EQ(s.segment_index(100), 1u);
    EXPECT_EQ(s.segment_index(299), 2u);
    for (const auto& seg : s.segments) {
        for (Index i = 0; i < cfg.N; ++i)
            for (Index j = 0; j < cfg.N; ++j) EXPECT_EQ(seg.has_edge(i, j), s.support.edge(i, j));
        EXPECT_NEAR(companion_spectral_radius(seg), 0.9, 1e-6);
    }
    EXPECT_GT((s.segments[0].rows() - s.segments[1].rows()).norm(), 0.0);
    EXPECT_GT((s.segments[1].rows() - s.segments[2].rows()).norm(), 0.0);
}

TEST(ScenarioConfig, Validation) {
    ScenarioConfig cfg;
    EXPECT_NO_THROW(cfg.validate());
    cfg.rho = 0.0;
    EXPECT_THROW(cfg.validate(), ParameterError);
    cfg = {};
    cfg.change_points = {2000, 1000};
    EXPECT_THROW(cfg.validate(), ParameterError);
    cfg = {};
    cfg.change_points = {3000};
    EXPECT_THROW(cfg.validate(), ParameterError);
    cfg = {};
    cfg.target_radius = 1.0;
    EXPECT_THROW(cfg.validate(), ParameterError);
}

TEST(Simulate, ZeroEverything) {
    Rng rng(1);
    const auto s = CoefficientSchedule::constant(VarCoefficients(3, 2));
    for (const auto& f : simulate_var(s, 0.0, 50, rng)) EXPECT_TRUE(f.y.isZero(0.0));
}

TEST(Simulate, ZeroCoefficientsGiveInnovations) {
    Rng rng(9);
    const double sigma = 0.3;
    const auto s = CoefficientSchedule::constant(VarCoefficients(2, 1));
    const auto y = simulate_var(s, sigma, 100000, rng);
    Rng replay(9);
    std::normal_distribution<double> normal;
    double ss = 0.0;
    for (const auto& f : y) {
        for (Index i = 0; i < 2; ++i) {
            const double u = sigma * normal(replay);
            EXPECT_EQ(f.y(i), u);
            ss += f.y(i) * f.y(i);
        }
    }
    EXPECT_NEAR(ss / 200000.0, sigma * sigma, 0.01 * sigma * sigma);
}

TEST(Simulate, ScalarGeometricDecay) {
    Rng rng(1);
    VarCoefficients a(1, 1);
    a(1, 0, 0) = 0.5;
    const std::vector<Vector> init{Vector::Ones(1)};
    const auto y = simulate_var(CoefficientSchedule::constant(a), 0.0, 30, rng, init);
    for (Index t = 0; t < 30; ++t) EXPECT_DOUBLE_EQ(y[static_cast<std::size_t>(t)].y(0), std::pow(0.5, t));
}

TEST(Simulate, FollowsRecursionAndIsDeterministic) {
    ScenarioConfig cfg;
    cfg.N = 4;
    cfg.P = 2;
    cfg.T = 200;
    cfg.change_points = {100};
    Rng r1(cfg.seed), r2(cfg.seed);
    const auto s1 = make_schedule_with_changes(cfg, r1);
    const auto s2 = make_schedule_with_changes(cfg, r2);
    const auto y1 = simulate_var(s1, cfg.sigma_u, cfg.T, r1);
    const auto y2 = simulate_var(s2, cfg.sigma_u, cfg.T, r2);
    for (std::size_t t = 0; t < y1.size(); ++t) EXPECT_EQ(y1[t].y, y2[t].y);
    // Residual of the recursion is an innovation of the right scale.
    double ss = 0.0;
    for (Index t = cfg.P; t < cfg.T; ++t) {
        Vector pred = Vector::Zero(cfg.N);
        const auto& a = s1.at(t);
        for (Index n = 0; n < cfg.N; ++n)
            for (Index m = 0; m < cfg.N; ++m)
                for (Index p = 1; p <= cfg.P; ++p) pred(n) += a(p, n, m) * y1[static_cast<std::size_t>(t - p)].y(m);
        ss += (y1[static_cast<std::size_t>(t)].y - pred).squaredNorm();
    }
    EXPECT_NEAR(std::sqrt(ss / static_cast<double>((cfg.T - cfg.P) * cfg.N)), cfg.sigma_u, 0.15 * cfg.sigma_u);
}

TEST(Observation, TrivialRhos) {
    Rng rng(1);
    SignalFrame y{3, Vector::LinSpaced(5, 1.0, 5.0)};
    auto o = apply_observation_model(y, 1.0, 0.0, rng);
    EXPECT_EQ(o.values, y.y);
    EXPECT_EQ(o.mask, Eigen::VectorXi::Ones(5));
    EXPECT_EQ(o.t, 3);
    o = apply_observation_model(y, 0.0, 0.1, rng);
    EXPECT_TRUE(o.values.isZero(0.0));
    EXPECT_EQ(o.observed_count(), 0);
}

TEST(Observation, MeanObservedCount) {
    Rng rng(17);
    SignalFrame y{0, Vector::Ones(10)};
    double total = 0.0;
    for (int k = 0; k < 10000; ++k) {
        const auto o = apply_observation_model(y, 0.75, 0.01, rng);
        for (Index i = 0; i < 10; ++i) {
            if (o.mask(i) == 0) {
                EXPECT_EQ(o.values(i), 0.0);
            }
        }
        total += static_cast<double>(o.observed_count());
    }
    EXPECT_NEAR(total / 10000.0, 7.5, 0.1);
}

TEST(Regressor, P1IsPreviousFrame) {
    const std::vector<SignalFrame> h{{4, Vector::LinSpaced(3, 1, 3)}};
    const auto g = build_regressor(h, 1);
    EXPECT_EQ(g.g, h[0].y);
    EXPECT_EQ(g.t, 5);
}

TEST(Regressor, NodeMajorOrdering) {
    const std::vector<SignalFrame> h{{1, (Vector(2) << 1, 2).finished()}, {0, (Vector(2) << 3, 4).finished()}};
    EXPECT_EQ(build_regressor(h, 2).g, (Vector(4) << 1, 3, 2, 4).finished());
}

TEST(Regressor, Errors) {
    const std::vector<SignalFrame> h{{1, Vector::Zero(2)}, {-3, Vector::Zero(2)}};
    EXPECT_THROW(build_regressor(h, 2), UsageError);
    EXPECT_THROW(build_regressor(h, 3), UsageError);
    EXPECT_THROW(build_regressor(std::span(h).first(1), 2), UsageError);
}

TEST(Regressor, InnerProductMatchesDoubleSum) {
    Rng rng(31);
    std::normal_distribution<double> normal;
    const Index N = 5, P = 3;
    std::vector<SignalFrame> h;
    for (Index p = 1; p <= P; ++p) {
        Vector y(N);
        for (Index i = 0; i < N; ++i) y(i) = normal(rng);
        h.push_back({10 - p, y});
    }
    VarCoefficients a(N, P);
    for (Index i = 0; i < a.rows().size(); ++i) a.rows().data()[i] = normal(rng);
    const auto g = build_regressor(h, P);
    for (Index n = 0; n < N; ++n) {
        double sum = 0.0;
        for (Index m = 0; m < N; ++m)
            for (Index p = 1; p <= P; ++p) sum += a(p, n, m) * h[static_cast<std::size_t>(p - 1)].y(m);
        EXPECT_NEAR(g.g.dot(a.node(n)), sum, 1e-13);
    }
}
