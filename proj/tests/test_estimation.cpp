#include <cmath>

#include <gtest/gtest.h>

#include "dhn/estimation.hpp"
#include "dhn/experiments.hpp"
#include "dhn/fixtures.hpp"
#include "helpers.hpp"

using namespace dhn;

namespace {

RegressionProblem make_problem(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, bool normalized = true) {
  RegressionProblem p;
  p.design = x;
  p.target = y;
  p.normalized = normalized;
  p.normalization = Eigen::VectorXd::Ones(x.cols());
  return p;
}

Eigen::MatrixXd random_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  PortableRng rng(seed);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = 40.0 + 40.0 * rng.uniform();
  return m;
}

/// Equality-constrained least squares by eliminating the constraint.
Eigen::VectorXd null_space_wls(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const Eigen::VectorXd& w) {
  const Eigen::Index n = x.cols();
  // theta = e_n + N z with N = [I; -1'] spanning {1'theta = 0}.
  Eigen::MatrixXd N = Eigen::MatrixXd::Zero(n, n - 1);
  N.topRows(n - 1) = Eigen::MatrixXd::Identity(n - 1, n - 1);
  N.row(n - 1).setConstant(-1.0);
  Eigen::VectorXd t0 = Eigen::VectorXd::Zero(n);
  t0(n - 1) = 1.0;
  const Eigen::VectorXd sw = w.cwiseSqrt();
  const Eigen::MatrixXd a = sw.asDiagonal() * x * N;
  const Eigen::VectorXd b = sw.cwiseProduct(y - x * t0);
  const Eigen::VectorXd z = a.colPivHouseholderQr().solve(b);
  return t0 + N * z;
}

struct SevenNodeFixture {
  NetworkModel net = seven_node_network();
  AgmModel truth = derive_agm(net);
  MeasurementSet train = generate_dataset(net, 400, 50, 21);
};

const SevenNodeFixture& seven() {
  static const SevenNodeFixture f;
  return f;
}

}  // namespace

TEST(BuildRegression, ShapeAndIndexing) {
  const auto& f = seven();
  EstimatorConfig cfg;
  cfg.m_trc = 1;
  const std::vector<int> delays = {2, 0};
  const auto p = build_regression(f.train, "N6", MappingRole::Supply, delays, cfg, 5);
  EXPECT_EQ(p.design.rows(), 395);
  EXPECT_EQ(p.design.cols(), 5);
  EXPECT_EQ(p.first_step, 5u);
  const auto& n1 = f.train.channel("N1", Side::Supply);
  const auto& n2 = f.train.channel("N2", Side::Supply);
  for (Eigen::Index r : {0, 17, 394}) {
    const auto t = static_cast<std::size_t>(r) + 5;
    EXPECT_EQ(p.design(r, 0), n1[t - 2]);
    EXPECT_EQ(p.design(r, 1), n1[t - 3]);
    EXPECT_EQ(p.design(r, 2), n2[t]);
    EXPECT_EQ(p.design(r, 3), n2[t - 1]);
    EXPECT_EQ(p.design(r, 4), f.train.tau_amb);
    EXPECT_EQ(p.target(r), f.train.channel("N6", Side::Supply)[t]);
  }
  EXPECT_EQ(p.columns[1].lag, 3);
  EXPECT_TRUE(p.columns.back().ambient);
}

TEST(BuildRegression, InsufficientDataNamesChannel) {
  const auto short_set = seven().train.slice(0, 12);
  try {
    build_regression(short_set, "N6", MappingRole::Supply, {2, 2}, EstimatorConfig{}, 6);
    FAIL() << "no error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::InsufficientData);
    EXPECT_NE(std::string(e.what()).find("N6/supply"), std::string::npos) << e.what();
  }
}

TEST(ConstrainedWls, RecoversNoiseFreeTruth) {
  const auto x = random_matrix(60, 6, 1);
  Eigen::VectorXd theta(6);
  theta << 0.3, 0.1, 0.25, -0.05, 0.2, 0.2;
  const auto p = make_problem(x, x * theta);
  const auto est = solve_constrained_wls(p, Eigen::VectorXd::Ones(60));
  EXPECT_LE((est - theta).lpNorm<Eigen::Infinity>(), 1e-8);
}

TEST(ConstrainedWls, MatchesNullSpaceElimination) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto x = random_matrix(50, 7, seed);
    PortableRng rng(seed + 99);
    Eigen::VectorXd y(50), w(50);
    for (Eigen::Index i = 0; i < 50; ++i) {
      y(i) = 50.0 + 20.0 * rng.normal();
      w(i) = 0.1 + rng.uniform();
    }
    const auto p = make_problem(x, y);
    const auto a = solve_constrained_wls(p, w);
    const auto b = null_space_wls(x, y, w);
    EXPECT_LE((a - b).lpNorm<Eigen::Infinity>(), 1e-9);
    EXPECT_LE(std::abs(a.sum() - 1.0), 1e-10);
  }
}

TEST(ConstrainedWls, UnconstrainedIsOrdinaryLeastSquares) {
  const auto x = random_matrix(40, 4, 3);
  PortableRng rng(8);
  Eigen::VectorXd y(40);
  for (Eigen::Index i = 0; i < 40; ++i) y(i) = 60.0 + rng.normal();
  const auto p = make_problem(x, y, false);
  const Eigen::VectorXd ols = x.colPivHouseholderQr().solve(y);
  EXPECT_LE((solve_constrained_wls(p, Eigen::VectorXd::Ones(40)) - ols).lpNorm<Eigen::Infinity>(), 1e-9);
}

TEST(ConstrainedWls, DuplicateColumns) {
  Eigen::MatrixXd x = random_matrix(30, 4, 5);
  x.col(2) = x.col(1);
  const Eigen::VectorXd y = x.col(0);
  const auto p = make_problem(x, y);
  WlsOptions strict;
  strict.allow_ridge = false;
  EXPECT_DHN_ERROR(solve_constrained_wls(p, Eigen::VectorXd::Ones(30), strict), ErrorKind::DegenerateProblem);
  const auto ridge = solve_constrained_wls(p, Eigen::VectorXd::Ones(30));
  EXPECT_TRUE(ridge.allFinite());
  EXPECT_LE((x * ridge - y).norm(), 1e-6 * y.norm());
}

TEST(Mad, WorkedExampleAndFloor) {
  Eigen::VectorXd r(5);
  r << 1, 2, 3, 4, 100;
  EXPECT_DOUBLE_EQ(mad_scale(r, 1.4826, 0.0), 1.4826);
  EXPECT_EQ(mad_scale(Eigen::VectorXd::Zero(9), 1.4826, 1e-6), 1e-6);
  EXPECT_DHN_ERROR(mad_scale(Eigen::VectorXd(), 1.4826, 0.0), ErrorKind::InvalidConfig);
}

TEST(Mad, Equivariance) {
  PortableRng rng(31);
  for (int trial = 0; trial < 100; ++trial) {
    Eigen::VectorXd r(11 + trial % 7);
    for (Eigen::Index i = 0; i < r.size(); ++i) r(i) = 5.0 * rng.normal();
    const double a = 0.1 + 10.0 * rng.uniform(), b = 20.0 * rng.normal();
    const double s = mad_scale(r, 1.4826, 0.0);
    const Eigen::VectorXd moved = (a * r).array() + b;
    EXPECT_NEAR(mad_scale(moved, 1.4826, 0.0), a * s, 1e-12 * std::max(1.0, a * s));
    EXPECT_NEAR(mad_scale(-r, 1.4826, 0.0), s, 1e-12 * std::max(1.0, s));
  }
}

TEST(Huber, WeightAndObjective) {
  EXPECT_EQ(huber_weight(0.5, 1.345), 1.0);
  EXPECT_EQ(huber_weight(1.345, 1.345), 1.0);
  EXPECT_DOUBLE_EQ(huber_weight(2.69, 1.345), 0.5);
  Eigen::VectorXd r(2);
  r << 1.0, 4.0;
  // 0.5 + (1.345 * 4 - 0.5 * 1.345^2)
  EXPECT_NEAR(huber_objective(r, 1.0, 1.345), 0.5 + 1.345 * 4.0 - 0.5 * 1.345 * 1.345, 1e-14);
  EXPECT_DHN_ERROR(huber_objective(r, 0.0, 1.345), ErrorKind::InvalidConfig);
}

TEST(Huber, ContinuousAtKappa) {
  for (double k : {0.5, 1.0, 1.345, 3.0}) {
    const double below = std::nextafter(k, 0.0), above = std::nextafter(k, 10.0);
    EXPECT_NEAR(huber_rho(below, k), huber_rho(above, k), 1e-12);
    EXPECT_NEAR(huber_rho(-below, k), huber_rho(-above, k), 1e-12);
    EXPECT_NEAR(huber_weight(below, k), huber_weight(above, k), 1e-12);
    // Derivative psi(u) = u * w(u) matches on both sides.
    EXPECT_NEAR(below * huber_weight(below, k), above * huber_weight(above, k), 1e-12);
  }
}

TEST(Irls, ExactRecoveryConvergesImmediately) {
  const auto x = random_matrix(80, 5, 2);
  Eigen::VectorXd theta(5);
  theta << 0.2, 0.3, 0.1, 0.25, 0.15;
  const auto fit = irls_fit(make_problem(x, x * theta), EstimatorConfig{});
  EXPECT_TRUE(fit.converged);
  EXPECT_LE(fit.iterations, 2);
  EXPECT_LE((fit.theta - theta).lpNorm<Eigen::Infinity>(), 1e-8);
}

TEST(Irls, HuberBeatsLeastSquaresUnderOutliers) {
  const auto x = random_matrix(300, 5, 4);
  Eigen::VectorXd theta(5);
  theta << 0.2, 0.3, 0.1, 0.25, 0.15;
  Eigen::VectorXd y = x * theta;
  PortableRng rng(6);
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    y(i) += 0.1 * rng.normal();
    const double u = rng.uniform();
    if (u < 0.1) y(i) *= 3.0;
    else if (u < 0.2) y(i) *= 0.3;
  }
  const auto p = make_problem(x, y);
  EstimatorConfig lse;
  lse.loss = LossKind::LSE;
  const auto h = irls_fit(p, EstimatorConfig{});
  const auto l = irls_fit(p, lse);
  EXPECT_LT((h.theta - theta).norm(), 0.5 * (l.theta - theta).norm());
  EXPECT_LE(std::abs(h.theta.sum() - 1.0), 1e-10);
}

TEST(Irls, IterationCapThrowsWithLastIterate) {
  const auto x = random_matrix(50, 3, 9);
  PortableRng rng(1);
  Eigen::VectorXd y(50);
  for (Eigen::Index i = 0; i < 50; ++i) y(i) = 60.0 + 5.0 * rng.normal();
  EstimatorConfig cfg;
  cfg.max_iter = 0;
  try {
    irls_fit(make_problem(x, y), cfg);
    FAIL() << "no error";
  } catch (const NotConvergedError& e) {
    EXPECT_EQ(e.kind(), ErrorKind::NotConverged);
    EXPECT_EQ(e.last().theta.size(), 3);
    EXPECT_FALSE(e.last().converged);
  }
}

TEST(Irls, ReweightingStepDoesNotIncreaseObjective) {
  const auto x = random_matrix(120, 4, 12);
  PortableRng rng(13);
  Eigen::VectorXd y(120);
  for (Eigen::Index i = 0; i < 120; ++i) y(i) = 60.0 + 4.0 * rng.normal() + (rng.uniform() < 0.15 ? 40.0 : 0.0);
  const auto p = make_problem(x, y);
  Eigen::VectorXd theta = solve_constrained_wls(p, Eigen::VectorXd::Ones(120));
  const double s = mad_scale(y - x * theta, 1.4826, 1e-8);
  for (int it = 0; it < 10; ++it) {
    const Eigen::VectorXd r = y - x * theta;
    Eigen::VectorXd w(120);
    for (Eigen::Index i = 0; i < 120; ++i) w(i) = huber_weight(std::abs(r(i) / s), 1.345);
    const Eigen::VectorXd next = solve_constrained_wls(p, w);
    EXPECT_LE(huber_objective(y - x * next, s, 1.345), huber_objective(r, s, 1.345) + 1e-9);
    theta = next;
  }
}

TEST(Irls, NonnegativeOption) {
  const auto x = random_matrix(60, 5, 14);
  Eigen::VectorXd theta(5);
  theta << 0.6, -0.2, 0.3, 0.2, 0.1;
  EstimatorConfig cfg;
  cfg.nonnegative = true;
  const auto fit = irls_fit(make_problem(x, x * theta), cfg);
  EXPECT_GE(fit.theta.minCoeff(), -1e-7);
  EXPECT_NEAR(fit.theta.sum(), 1.0, 1e-6);
}

TEST(Enumeration, PublishedCounts) {
  const auto a = enumeration_counts(2, 10, 5);
  EXPECT_EQ(a.k_s, 250u);
  EXPECT_EQ(a.k_r, 19531250u);
  const auto b = enumeration_counts(2, 100, 5);
  EXPECT_EQ(b.k_s, 2500u);
  EXPECT_EQ(b.k_sum, 2600u);
  const auto one = enumeration_counts(3, 4, 1);
  EXPECT_EQ(one.k_s, 4u);
  EXPECT_EQ(one.k_r, 3u);
  EXPECT_DHN_ERROR(enumeration_counts(0, 4, 2), ErrorKind::InvalidConfig);
}

TEST(DelayCandidatesTest, Validation) {
  DelayCandidates c;
  EXPECT_DHN_ERROR(c.set("A", "B", {}), ErrorKind::InvalidConfig);
  EXPECT_DHN_ERROR(c.set("A", "B", {2, 1}), ErrorKind::InvalidConfig);
  EXPECT_DHN_ERROR(c.get("A", "B"), ErrorKind::InvalidConfig);
  c.set("A", "B", {1, 3});
  EXPECT_EQ(c.max_delay(), 3);
}

TEST(EstimateStm, ExactRecoveryOnSevenNodes) {
  const auto& f = seven();
  const auto cand = candidates_around(f.truth, 2);
  const auto est = estimate_agm(f.train, cand, EstimatorConfig{});
  ASSERT_EQ(est.stm.size(), 4u);
  for (std::size_t v = 0; v < est.stm.size(); ++v) {
    std::size_t combos = 1;
    for (const auto& src : f.train.sources) combos *= cand.get(src, est.stm[v].node).size();
    EXPECT_EQ(est.stm[v].fits_evaluated, combos);
    const auto m = to_agm_mapping(est.stm[v], std::max(est.model.gamma_cap, f.truth.gamma_cap));
    AgmMapping ref = f.truth.stm[v];
    EXPECT_LE(max_coefficient_error(m, ref), 1e-6) << ref.node;
    EXPECT_NEAR(m.normalization_residual(), 0.0, tol::kNormalization);
  }
  ASSERT_EQ(est.rtm.size(), 2u);
  for (const auto& r : est.rtm) EXPECT_EQ(r.fits_evaluated, 1u);
}

TEST(EstimateStm, ThreadCountDoesNotChangeResult) {
  const auto& f = seven();
  const auto noisy = corrupt(f.train, 0.01, 0.1, 5, OutlierChannels::Targets);
  const auto cand = candidates_around(f.truth, 2);
  EstimatorConfig one, many;
  many.threads = 4;
  const auto a = estimate_stm(noisy, cand, one);
  const auto b = estimate_stm(noisy, cand, many);
  for (std::size_t v = 0; v < a.size(); ++v) {
    EXPECT_EQ(a[v].delays, b[v].delays);
    EXPECT_EQ(a[v].fit.theta, b[v].fit.theta);
  }
}

TEST(EstimateStm, TieGoesToSmallestDelays) {
  // A constant input makes every delay equally good.
  MeasurementSet d;
  d.tau_amb = 5.0;
  d.sources = {"S"};
  d.loads = {"L"};
  d.set("S", Side::Supply, std::vector<double>(60, 70.0));
  d.set("L", Side::Supply, std::vector<double>(60, 70.0));
  d.set("S", Side::Return, std::vector<double>(60, 40.0));
  d.set("L", Side::Return, std::vector<double>(60, 40.0));
  DelayCandidates c;
  c.set("S", "L", {1, 2, 3});
  EstimatorConfig cfg;
  cfg.m_trc = 0;
  const auto est = estimate_stm(d, c, cfg);
  EXPECT_EQ(est[0].delays, std::vector<int>{1});
}

TEST(EstimateStm, ErrorsSurface) {
  const auto& f = seven();
  const auto cand = candidates_around(f.truth, 2);
  EXPECT_DHN_ERROR(estimate_stm(f.train.slice(0, 15), cand, EstimatorConfig{}), ErrorKind::InsufficientData);
  EstimatorConfig cfg;
  cfg.gamma_cap = 2;
  EXPECT_DHN_ERROR(estimate_stm(f.train, cand, cfg), ErrorKind::InvalidConfig);
}

TEST(EstimateRtm, SingleLoadMirrorsSupplySide) {
  const auto net = single_pipe_network(2.3, 0.04, 20.0, 5.0);
  const auto truth = derive_agm(net);
  const auto data = generate_dataset(net, 200, 20, 3);
  const auto est = estimate_agm(data, candidates_around(truth, 1), EstimatorConfig{});
  EXPECT_EQ(est.rtm[0].delays, est.stm[0].delays);
  EXPECT_LE(max_coefficient_error(est.model.rtm[0], truth.rtm[0]), 1e-6);
}

TEST(CoarseFit, SuggestsBracketingDelays) {
  const auto& f = seven();
  const auto coarse = coarse_fit(f.train, "N6", MappingRole::Supply, f.truth.gamma_cap, EstimatorConfig{});
  const auto m = to_agm_mapping(coarse, f.truth.gamma_cap);
  const auto sets = suggest_delays(m, 4);
  const auto& ref = f.truth.stm[2];
  ASSERT_EQ(ref.node, "N6");
  for (std::size_t k = 0; k < sets.size(); ++k) {
    EXPECT_LE(sets[k].front(), ref.delays[k]);
    EXPECT_GE(sets[k].back(), ref.delays[k]);
  }
}
