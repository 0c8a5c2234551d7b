#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "dhn/agm.hpp"
#include "dhn/fixtures.hpp"
#include "helpers.hpp"

using namespace dhn;

namespace {

double kernel_sum(const PathKernel& k) { return std::accumulate(k.coeffs.begin(), k.coeffs.end(), 0.0); }

/// Worst |AGM prediction - simulation| after the warm-up window.
double oracle_gap(const NetworkModel& net, std::uint64_t seed) {
  const auto agm = derive_agm(net);
  const int T = agm.gamma_cap + 80;
  const auto u = random_walk_signal(T, static_cast<int>(net.sources().size()), 60.0, 95.0, 2.5, seed);
  const auto r = random_walk_signal(T, static_cast<int>(net.loads().size()), 30.0, 55.0, 2.0, seed + 100);
  const auto data = simulate(net, u, r, T, 77.0).slice(static_cast<std::size_t>(agm.gamma_cap), 80);
  double worst = 0.0;
  for (const auto& m : agm.stm) {
    const auto p = predict_series(m, data, Side::Supply);
    const auto& y = data.channel(m.node, Side::Supply);
    for (std::size_t i = 0; i < p.size(); ++i) worst = std::max(worst, std::abs(p[i] - y[i + static_cast<std::size_t>(agm.gamma_cap)]));
  }
  for (const auto& m : agm.rtm) {
    const auto p = predict_series(m, data, Side::Return);
    const auto& y = data.channel(m.node, Side::Return);
    for (std::size_t i = 0; i < p.size(); ++i) worst = std::max(worst, std::abs(p[i] - y[i + static_cast<std::size_t>(agm.gamma_cap)]));
  }
  return worst;
}

}  // namespace

TEST(PathKernel, SinglePipe) {
  const std::vector<PipeKernelParams> p = {{2, 0.7, 0.1}};
  const auto k = path_kernel(p);
  ASSERT_EQ(k.coeffs.size(), 2u);
  EXPECT_NEAR(k.coeffs[0], 0.63, 1e-15);
  EXPECT_NEAR(k.coeffs[1], 0.27, 1e-15);
  EXPECT_NEAR(k.loss_offset, 0.1, 1e-15);
  EXPECT_EQ(k.delay, 2);
  EXPECT_EQ(k.pipe_count, 1);
}

TEST(PathKernel, TwoPipesMatchCascadedSimulation) {
  const std::vector<PipeKernelParams> p = {{2, 0.7, 0.1}, {2, 0.7, 0.1}};
  const auto k = path_kernel(p);
  ASSERT_EQ(k.coeffs.size(), 3u);
  EXPECT_NEAR(k.coeffs[0], 0.3969, 1e-12);
  EXPECT_NEAR(k.coeffs[1], 0.3402, 1e-12);
  EXPECT_NEAR(k.coeffs[2], 0.0729, 1e-12);
  EXPECT_NEAR(k.loss_offset, 0.19, 1e-12);
  EXPECT_EQ(k.delay, 4);

  // Impulse through the two-pipe recursion directly.
  std::vector<double> in(12, 0.0), mid(12, 0.0), out(12, 0.0);
  in[0] = 1.0;
  auto pipe = [](const std::vector<double>& x, std::vector<double>& y) {
    for (int t = 0; t < 12; ++t) {
      const double a = t - 2 >= 0 ? x[static_cast<std::size_t>(t - 2)] : 0.0;
      const double b = t - 3 >= 0 ? x[static_cast<std::size_t>(t - 3)] : 0.0;
      y[static_cast<std::size_t>(t)] = 0.9 * (0.7 * a + 0.3 * b);
    }
  };
  pipe(in, mid);
  pipe(mid, out);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(out[4 + i], k.coeffs[i], 1e-15);
}

TEST(PathKernel, IdentityPipe) {
  const std::vector<PipeKernelParams> p = {{0, 1.0, 0.0}};
  const auto k = path_kernel(p);
  ASSERT_EQ(k.coeffs.size(), 2u);
  EXPECT_EQ(k.coeffs[0], 1.0);
  EXPECT_EQ(k.coeffs[1], 0.0);
  EXPECT_EQ(k.loss_offset, 0.0);
  EXPECT_EQ(k.delay, 0);
}

TEST(PathKernel, EmptyPath) { EXPECT_DHN_ERROR(path_kernel({}), ErrorKind::EmptyPath); }

TEST(PathKernel, SumsAndAssociativity) {
  PortableRng rng(5);
  std::vector<PipeKernelParams> p;
  for (int i = 0; i < 6; ++i) p.push_back({static_cast<int>(rng.uniform() * 4), rng.uniform(), 0.2 * rng.uniform()});
  const auto all = path_kernel(p);
  double keep = 1.0;
  for (const auto& x : p) keep *= 1.0 - x.eta;
  EXPECT_NEAR(kernel_sum(all), keep, tol::kKernelSum);
  EXPECT_NEAR(kernel_sum(all) + all.loss_offset, 1.0, tol::kKernelSum);
  for (double c : all.coeffs) EXPECT_GE(c, 0.0);
  EXPECT_EQ(all.coeffs.size(), p.size() + 1);

  const std::vector<PipeKernelParams> head(p.begin(), p.begin() + 2), tail(p.begin() + 2, p.end());
  const auto a = path_kernel(head);
  const auto b = path_kernel(tail);
  const auto joined = convolve(a.coeffs, b.coeffs);
  ASSERT_EQ(joined.size(), all.coeffs.size());
  for (std::size_t i = 0; i < joined.size(); ++i) EXPECT_NEAR(joined[i], all.coeffs[i], 1e-15);
  EXPECT_EQ(a.delay + b.delay, all.delay);
  EXPECT_NEAR((1.0 - a.loss_offset) * (1.0 - b.loss_offset), 1.0 - all.loss_offset, 1e-15);
}

TEST(DeriveAgm, SinglePipeEmbedsKernel) {
  const auto net = single_pipe_network(2.4, 0.05);
  const auto agm = derive_agm(net);
  std::vector<PipeKernelParams> p = {net.kernel_params()[0]};
  const auto k = path_kernel(p);
  EXPECT_EQ(agm.gamma_cap, k.delay + 1);
  ASSERT_EQ(agm.stm.size(), 1u);
  EXPECT_EQ(agm.stm[0].delays[0], 2);
  EXPECT_NEAR(agm.stm[0].lag(0, 2), k.coeffs[0], 1e-15);
  EXPECT_NEAR(agm.stm[0].lag(0, 3), k.coeffs[1], 1e-15);
  EXPECT_NEAR(agm.stm[0].offset, k.loss_offset, 1e-15);
  EXPECT_EQ(agm.stm[0].lag(0, 0), 0.0);
}

TEST(DeriveAgm, TwoSourceScaling) {
  Constants c;
  c.dt = 100.0;
  std::vector<Node> nodes = {{"S1", NodeKind::Source, 60.0},
                             {"S2", NodeKind::Source, 40.0},
                             {"J", NodeKind::Junction, 0.0},
                             {"L", NodeKind::Load, 100.0}};
  std::vector<Pipe> pipes = {{"a", "S1", "J", 150.0, 0.06, 0.01, 60.0},
                             {"b", "S2", "J", 100.0, 0.04, 0.02, 40.0},
                             {"c", "J", "L", 120.0, 0.05, 0.015, 100.0}};
  const auto net = build_network(nodes, pipes, c);
  const auto agm = derive_agm(net);
  const auto& m = agm.stm[0];
  const std::vector<PipeKernelParams> pa = {net.kernel_params()[0], net.kernel_params()[2]};
  const std::vector<PipeKernelParams> pb = {net.kernel_params()[1], net.kernel_params()[2]};
  const auto ka = path_kernel(pa), kb = path_kernel(pb);
  for (std::size_t i = 0; i < ka.coeffs.size(); ++i) EXPECT_NEAR(m.lag(0, ka.delay + static_cast<int>(i)), 0.6 * ka.coeffs[i], 1e-15);
  for (std::size_t i = 0; i < kb.coeffs.size(); ++i) EXPECT_NEAR(m.lag(1, kb.delay + static_cast<int>(i)), 0.4 * kb.coeffs[i], 1e-15);
  EXPECT_NEAR(m.offset, 0.6 * ka.loss_offset + 0.4 * kb.loss_offset, 1e-15);
  EXPECT_NEAR(m.normalization_residual(), 0.0, tol::kNormalization);
}

TEST(DeriveAgm, PublishedCoefficientsSumToOne) {
  // Load N6 of the published seven-node case, theoretical row.
  AgmMapping m;
  m.node = "N6";
  m.inputs = {"N1", "N2"};
  m.coeffs = Eigen::MatrixXd::Zero(4, 2);
  const double s1[] = {0.38, 0.23, 0.026, 0.0};
  const double s2[] = {1.4e-3, 0.075, 0.11, 0.015};
  m.delays = {0, 0};
  m.widths = {4, 4};
  for (int i = 0; i < 4; ++i) {
    m.lag(0, i) = s1[i];
    m.lag(1, i) = s2[i];
  }
  m.offset = 0.17;
  EXPECT_NEAR(m.coeffs.col(0).sum(), 0.636, 1e-12);
  EXPECT_NEAR(m.coeffs.col(1).sum(), 0.2014, 1e-12);
  EXPECT_NEAR(m.normalization_residual(), 0.0, 0.01);
}

TEST(DeriveAgm, InvariantsOnRandomTrees) {
  for (std::uint64_t seed = 1; seed <= 15; ++seed) {
    RandomTreeOptions opt;
    opt.n_sources = 1 + static_cast<int>(seed % 3);
    opt.n_loads = 3 + static_cast<int>(seed % 13);
    const auto net = random_tree_network(seed, opt);
    const auto agm = derive_agm(net);
    int cap = 0;
    for (const auto& m : agm.stm) {
      EXPECT_NEAR(m.normalization_residual(), 0.0, tol::kNormalization);
      EXPECT_TRUE(band_violations(m, 1e-300).empty());
      for (std::size_t c = 0; c < m.inputs.size(); ++c) {
        if (m.delays[c] < 0) continue;
        cap = std::max(cap, m.delays[c] + m.widths[c] - 1);
        for (int i = 0; i <= m.gamma_cap(); ++i) {
          const bool inside = i >= m.delays[c] && i < m.delays[c] + m.widths[c];
          if (!inside) {
            EXPECT_EQ(m.lag(c, i), 0.0);
          }
        }
      }
    }
    for (const auto& m : agm.rtm) EXPECT_NEAR(m.normalization_residual(), 0.0, tol::kNormalization);
    EXPECT_EQ(agm.gamma_cap, cap);
  }
}

TEST(EvalAgm, AmbientFixedPoint) {
  const auto net = seven_node_network(9.0);
  const auto agm = derive_agm(net);
  const auto out = eval_stm(agm, Eigen::MatrixXd::Constant(agm.gamma_cap + 1, 2, 9.0), 9.0);
  for (Eigen::Index v = 0; v < out.size(); ++v) EXPECT_NEAR(out(v), 9.0, 1e-12);
  const auto back = eval_rtm(agm, Eigen::MatrixXd::Constant(agm.gamma_cap + 1, 4, 9.0), 9.0);
  for (Eigen::Index k = 0; k < back.size(); ++k) EXPECT_NEAR(back(k), 9.0, 1e-12);
}

TEST(EvalAgm, SteadyStateLoss) {
  const auto agm = derive_agm(single_pipe_network(1.5, 0.19, 20.0, 0.0));
  const auto out = eval_stm(agm, Eigen::MatrixXd::Constant(agm.gamma_cap + 1, 1, 80.0), 0.0);
  EXPECT_NEAR(out(0), 64.8, 1e-12);
}

TEST(EvalAgm, ShapeMismatch) {
  const auto agm = derive_agm(seven_node_network());
  EXPECT_DHN_ERROR(eval_stm(agm, Eigen::MatrixXd::Zero(agm.gamma_cap, 2), 0.0), ErrorKind::ShapeMismatch);
}

TEST(EvalAgm, SingleLoadReturnKernelEqualsSupply) {
  const auto agm = derive_agm(single_pipe_network(2.3, 0.07));
  EXPECT_TRUE(agm.stm[0].coeffs == agm.rtm[0].coeffs);
  EXPECT_EQ(agm.stm[0].offset, agm.rtm[0].offset);
}

TEST(EvalAgm, MatchesSimulationOnSevenNodes) { EXPECT_LE(oracle_gap(seven_node_network(), 3), 1e-9); }

TEST(EvalAgm, MatchesSimulationOnRandomTrees) {
  for (std::uint64_t seed = 11; seed <= 16; ++seed) {
    RandomTreeOptions opt;
    opt.n_sources = 1 + static_cast<int>(seed % 3);
    opt.n_loads = 3 + static_cast<int>((seed * 5) % 13);
    EXPECT_LE(oracle_gap(random_tree_network(seed, opt), seed), 1e-9) << "seed " << seed;
  }
}

TEST(EvalAgm, TimeShiftEquivariance) {
  const auto agm = derive_agm(seven_node_network());
  const int d = 3;
  PortableRng rng(4);
  Eigen::MatrixXd h(agm.gamma_cap + 1, 2);
  for (Eigen::Index i = 0; i < h.size(); ++i) h.data()[i] = 60.0 + 30.0 * rng.uniform();
  // Shift every band back by d lags and delay the history by d steps.
  AgmModel shifted = agm;
  Eigen::MatrixXd hs = Eigen::MatrixXd::Zero(agm.gamma_cap + 1 + d, 2);
  hs.topRows(agm.gamma_cap + 1) = h;
  for (auto& m : shifted.stm) {
    Eigen::MatrixXd c = Eigen::MatrixXd::Zero(agm.gamma_cap + 1 + d, 2);
    c.topRows(agm.gamma_cap + 1) = m.coeffs;
    m.coeffs = c;
  }
  shifted.gamma_cap += d;
  const auto a = eval_stm(agm, h, 5.0);
  const auto b = eval_stm(shifted, hs, 5.0);
  for (Eigen::Index v = 0; v < a.size(); ++v) EXPECT_NEAR(a(v), b(v), 1e-12);
}

TEST(MinSamples, Formula) {
  EXPECT_EQ(min_samples(2, 100).regressor_samples, 303);
  EXPECT_EQ(min_samples(1, 0).target_samples, 2);
  EXPECT_EQ(min_samples(1, 10).target_samples, 12);
  EXPECT_EQ(min_samples(1, 10).regressor_samples, 22);
  EXPECT_DHN_ERROR(min_samples(0, 3), ErrorKind::InvalidConfig);
}

TEST(AgmJson, BitExactRoundTrip) {
  const auto agm = derive_agm(random_tree_network(3, {.n_sources = 2, .n_loads = 7}));
  const auto text = to_json(agm).dump();
  const auto back = agm_from_json(nlohmann::json::parse(text));
  ASSERT_EQ(back.stm.size(), agm.stm.size());
  for (std::size_t v = 0; v < agm.stm.size(); ++v) {
    EXPECT_EQ(back.stm[v].coeffs, agm.stm[v].coeffs);
    EXPECT_EQ(back.stm[v].offset, agm.stm[v].offset);
    EXPECT_EQ(back.stm[v].delays, agm.stm[v].delays);
  }
  for (std::size_t k = 0; k < agm.rtm.size(); ++k) EXPECT_EQ(back.rtm[k].coeffs, agm.rtm[k].coeffs);
  EXPECT_DHN_ERROR(agm_from_json(nlohmann::json::parse(R"({"gamma_cap": 2})")), ErrorKind::ParseError);
}

TEST(Truncate, KeepsNormalizationAndWidth) {
  const auto agm = derive_agm(seven_node_network());
  const auto t = truncate_agm(agm, 1);
  for (const auto& m : t.stm) {
    EXPECT_NEAR(m.normalization_residual(), 0.0, tol::kNormalization);
    for (std::size_t c = 0; c < m.inputs.size(); ++c) {
      int nz = 0;
      for (int i = 0; i <= m.gamma_cap(); ++i) nz += m.lag(c, i) != 0.0;
      EXPECT_LE(nz, 2);
    }
  }
}

TEST(BandViolations, FlagsGaps) {
  AgmMapping m;
  m.node = "L";
  m.inputs = {"A", "B"};
  m.coeffs = Eigen::MatrixXd::Zero(6, 2);
  m.delays = {1, 0};
  m.widths = {3, 3};
  m.lag(0, 1) = 0.3;
  m.lag(0, 2) = 0.2;
  m.lag(1, 0) = 0.2;
  m.lag(1, 4) = 0.1;
  m.offset = 0.2;
  const auto bad = band_violations(m);
  ASSERT_EQ(bad.size(), 1u);
  EXPECT_EQ(bad[0], "B");
}
