#pragma once

// Synthetic networks and boundary signals for experiments and tests.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dhn/error.hpp"
#include "dhn/measurements.hpp"
#include "dhn/network.hpp"

namespace dhn {

// ---------------------------------------------------------------------------
// Boundary signals (one column per channel)

inline Eigen::MatrixXd constant_signal(int steps, int channels, double value) {
  return Eigen::MatrixXd::Constant(steps, channels, value);
}

/// `before` for t < at, `after` from t = at on.
inline Eigen::MatrixXd step_signal(int steps, int channels, int at, double before, double after) {
  Eigen::MatrixXd m(steps, channels);
  for (int t = 0; t < steps; ++t) m.row(t).setConstant(t < at ? before : after);
  return m;
}

/// Channel c is mean + amplitude * sin(2 pi t / period + c).
inline Eigen::MatrixXd sine_signal(int steps, int channels, double mean, double amplitude, double period) {
  Eigen::MatrixXd m(steps, channels);
  for (int t = 0; t < steps; ++t) {
    for (int c = 0; c < channels; ++c) {
      m(t, c) = mean + amplitude * std::sin(2.0 * 3.14159265358979323846 * t / period + c);
    }
  }
  return m;
}

/// Gaussian random walk reflected into [lo, hi], started at the midpoint.
inline Eigen::MatrixXd random_walk_signal(int steps, int channels, double lo, double hi, double step_std,
                                          std::uint64_t seed) {
  if (!(hi > lo)) throw Error(ErrorKind::InvalidConfig, "random walk needs lo < hi");
  PortableRng rng(seed);
  Eigen::MatrixXd m(steps, channels);
  for (int c = 0; c < channels; ++c) {
    double x = 0.5 * (lo + hi);
    for (int t = 0; t < steps; ++t) {
      x += step_std * rng.normal();
      for (int guard = 0; guard < 4 && (x < lo || x > hi); ++guard) x = x < lo ? 2 * lo - x : 2 * hi - x;
      x = std::clamp(x, lo, hi);
      m(t, c) = x;
    }
  }
  return m;
}

// ---------------------------------------------------------------------------
// Networks

namespace detail {

/// A pipe whose transit time is `steps` time steps and whose loss fraction
/// is `eta` at the given flow.
inline Pipe pipe_with(const std::string& id, const std::string& from, const std::string& to, double length,
                      double flow, double steps, double eta, const Constants& c) {
  Pipe p;
  p.id = id;
  p.from = from;
  p.to = to;
  p.length = length;
  p.mass_flow = flow;
  p.area = steps * c.dt * flow / (c.rho_w * length);
  p.loss_coeff = -std::log(1.0 - eta) * c.c_w * flow / length;
  return p;
}

}  // namespace detail

/// Seven nodes, two sources. N1 feeds load N3 (and through it N5); N1's
/// remaining water and N2 meet at junction N4, which feeds loads N6 and N7.
///
///   N1 -> N3 -> N5
///          |
///          v
///          N4 <- N2
///         |  |
///        N6  N7
inline NetworkModel seven_node_network(double tau_amb = 5.0, double dt = 3600.0) {
  Constants c;
  c.dt = dt;
  c.tau_amb = tau_amb;
  std::vector<Node> nodes = {
      {"N1", NodeKind::Source, 50.0}, {"N2", NodeKind::Source, 30.0}, {"N3", NodeKind::Load, 15.0},
      {"N4", NodeKind::Junction, 0.0}, {"N5", NodeKind::Load, 10.0},   {"N6", NodeKind::Load, 30.0},
      {"N7", NodeKind::Load, 25.0},
  };
  using detail::pipe_with;
  std::vector<Pipe> pipes = {
      pipe_with("P1", "N1", "N3", 1800.0, 50.0, 1.4, 0.020, c),
      pipe_with("P2", "N3", "N5", 900.0, 10.0, 0.7, 0.015, c),
      pipe_with("P3", "N3", "N4", 2400.0, 25.0, 2.0, 0.025, c),
      pipe_with("P4", "N2", "N4", 1500.0, 30.0, 1.6, 0.018, c),
      pipe_with("P5", "N4", "N6", 1200.0, 30.0, 0.5, 0.012, c),
      pipe_with("P6", "N4", "N7", 2000.0, 25.0, 2.3, 0.022, c),
  };
  return build_network(std::move(nodes), std::move(pipes), c);
}

/// One source, one load, one pipe.
inline NetworkModel single_pipe_network(double steps, double eta, double flow = 20.0, double tau_amb = 0.0,
                                        double dt = 3600.0) {
  Constants c;
  c.dt = dt;
  c.tau_amb = tau_amb;
  std::vector<Node> nodes = {{"S", NodeKind::Source, flow}, {"L", NodeKind::Load, flow}};
  std::vector<Pipe> pipes = {detail::pipe_with("P", "S", "L", 1000.0, flow, steps, eta, c)};
  return build_network(std::move(nodes), std::move(pipes), c);
}

struct RandomTreeOptions {
  int n_sources = 2;
  int n_loads = 6;
  int max_junctions = 3;
  double min_steps = 0.2;  ///< pipe transit time range, in steps
  double max_steps = 2.5;
  double max_eta = 0.04;
  double tau_amb = 5.0;
  double dt = 3600.0;
};

/// Random tree-routed network. Flow on a tree is fixed by the injections,
/// so pipe directions follow from the sign of each edge flow.
inline NetworkModel random_tree_network(std::uint64_t seed, const RandomTreeOptions& opt = {}) {
  if (opt.n_sources < 1 || opt.n_loads < 1) {
    throw Error(ErrorKind::InvalidConfig, "random tree needs at least one source and one load");
  }
  PortableRng rng(seed);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * rng.uniform(); };
  auto pick = [&](int n) { return static_cast<int>(rng.uniform() * n); };
  Constants c;
  c.dt = opt.dt;
  c.tau_amb = opt.tau_amb;

  for (int attempt = 0; attempt < 1000; ++attempt) {
    const int nj = pick(opt.max_junctions + 1);
    const int n = opt.n_sources + opt.n_loads + nj;
    std::vector<int> parent(static_cast<std::size_t>(n), -1);
    std::vector<int> degree(static_cast<std::size_t>(n), 0);
    for (int i = 1; i < n; ++i) {
      parent[static_cast<std::size_t>(i)] = pick(i);
      ++degree[static_cast<std::size_t>(i)];
      ++degree[static_cast<std::size_t>(parent[static_cast<std::size_t>(i)])];
    }
    std::vector<int> leaves, inner;
    for (int i = 0; i < n; ++i) (degree[static_cast<std::size_t>(i)] == 1 ? leaves : inner).push_back(i);
    if (static_cast<int>(leaves.size()) > opt.n_sources + opt.n_loads) continue;

    // Sources on leaves first, then every other leaf is a load; the rest of
    // the loads go to inner nodes.
    std::vector<NodeKind> kind(static_cast<std::size_t>(n), NodeKind::Junction);
    std::vector<int> order = leaves;
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[static_cast<std::size_t>(pick(static_cast<int>(i)))]);
    std::vector<int> shuffled_inner = inner;
    for (std::size_t i = shuffled_inner.size(); i > 1; --i) {
      std::swap(shuffled_inner[i - 1], shuffled_inner[static_cast<std::size_t>(pick(static_cast<int>(i)))]);
    }
    order.insert(order.end(), shuffled_inner.begin(), shuffled_inner.end());
    int sources = 0, loads = 0;
    for (int node : order) {
      auto& k = kind[static_cast<std::size_t>(node)];
      if (sources < opt.n_sources) {
        k = NodeKind::Source;
        ++sources;
      } else if (loads < opt.n_loads) {
        k = NodeKind::Load;
        ++loads;
      }
    }

    std::vector<double> injection(static_cast<std::size_t>(n), 0.0);
    std::vector<double> flow_of(static_cast<std::size_t>(n), 0.0);
    double demand = 0.0;
    for (int i = 0; i < n; ++i) {
      if (kind[static_cast<std::size_t>(i)] == NodeKind::Load) {
        flow_of[static_cast<std::size_t>(i)] = std::round(uniform(5.0, 30.0) * 10.0) / 10.0;
        injection[static_cast<std::size_t>(i)] = -flow_of[static_cast<std::size_t>(i)];
        demand += flow_of[static_cast<std::size_t>(i)];
      }
    }
    std::vector<double> share;
    double share_sum = 0.0;
    for (int s = 0; s < opt.n_sources; ++s) share_sum += share.emplace_back(uniform(0.4, 1.0));
    int s = 0;
    for (int i = 0; i < n; ++i) {
      if (kind[static_cast<std::size_t>(i)] == NodeKind::Source) {
        flow_of[static_cast<std::size_t>(i)] = demand * share[static_cast<std::size_t>(s++)] / share_sum;
        injection[static_cast<std::size_t>(i)] = flow_of[static_cast<std::size_t>(i)];
      }
    }

    // Subtree net injection gives the flow on the edge to the parent.
    std::vector<double> subtree = injection;
    for (int i = n - 1; i > 0; --i) subtree[static_cast<std::size_t>(parent[static_cast<std::size_t>(i)])] += subtree[static_cast<std::size_t>(i)];
    bool degenerate = false;
    for (int i = 1; i < n; ++i) degenerate |= std::abs(subtree[static_cast<std::size_t>(i)]) < 1.0;
    if (degenerate) continue;

    auto name = [](int i) { return "N" + std::to_string(i + 1); };
    std::vector<Node> nodes;
    for (int i = 0; i < n; ++i) nodes.push_back({name(i), kind[static_cast<std::size_t>(i)], flow_of[static_cast<std::size_t>(i)]});
    std::vector<Pipe> pipes;
    for (int i = 1; i < n; ++i) {
      const double f = subtree[static_cast<std::size_t>(i)];
      const int p = parent[static_cast<std::size_t>(i)];
      const std::string from = f > 0.0 ? name(i) : name(p);
      const std::string to = f > 0.0 ? name(p) : name(i);
      pipes.push_back(detail::pipe_with("P" + std::to_string(i), from, to, uniform(500.0, 3000.0), std::abs(f),
                                        uniform(opt.min_steps, opt.max_steps), uniform(0.0, opt.max_eta), c));
    }
    return build_network(std::move(nodes), std::move(pipes), c);
  }
  throw Error(ErrorKind::InvalidConfig, "could not draw a random tree with the requested shape");
}

}  // namespace dhn
