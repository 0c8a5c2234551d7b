#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "dhn/error.hpp"
#include "dhn/measurements.hpp"

namespace dhn {

enum class NodeKind { Source, Load, Junction };

inline std::string_view to_string(NodeKind kind) {
  switch (kind) {
    case NodeKind::Source: return "source";
    case NodeKind::Load: return "load";
    case NodeKind::Junction: return "junction";
  }
  return "junction";
}

struct Node {
  std::string id;
  NodeKind kind = NodeKind::Junction;
  double mass_flow = 0.0;  ///< kg/s injected (source) or withdrawn (load); unused for junctions
};

/// A supply pipe. Its return twin carries the same flow from `to` back to `from`.
struct Pipe {
  std::string id;
  std::string from;
  std::string to;
  double length = 0.0;     ///< m
  double area = 0.0;       ///< m^2
  double loss_coeff = 0.0; ///< kW/(m.degC)
  double mass_flow = 0.0;  ///< kg/s
};

struct Constants {
  double rho_w = 1000.0;  ///< kg/m^3
  double c_w = 4.2;       ///< kJ/(kg.degC)
  double dt = 3600.0;     ///< s
  double tau_amb = 0.0;   ///< degC
};

/// Node-method parameters of a single pipe: integer delay, sub-step
/// interpolation weight and heat-loss fraction.
struct PipeKernelParams {
  int gamma = 0;
  double alpha = 1.0;
  double eta = 0.0;
};

/// Transit time t_d = rho*A*L/m split into whole steps and a remainder,
/// plus the exponential loss fraction 1 - exp(-lambda*L/(c_w*m)).
inline PipeKernelParams pipe_kernel_params(const Pipe& pipe, const Constants& c) {
  if (!(pipe.mass_flow > 0.0)) {
    throw Error(ErrorKind::ZeroMassFlow, "pipe " + pipe.id + " has non-positive mass flow");
  }
  if (!(c.dt > 0.0) || !(c.rho_w > 0.0) || !(c.c_w > 0.0)) {
    throw Error(ErrorKind::InvalidConfig, "constants rho_w, c_w and dt must be positive");
  }
  const double transit = c.rho_w * pipe.area * pipe.length / pipe.mass_flow;
  double steps = transit / c.dt;
  // A delay that is an integer number of steps up to rounding is a pure delay.
  const double nearest = std::round(steps);
  if (std::abs(steps - nearest) <= tol::kIntegerSnap * std::max(1.0, steps)) steps = nearest;

  PipeKernelParams p;
  p.gamma = static_cast<int>(std::floor(steps));
  p.alpha = 1.0 - (steps - static_cast<double>(p.gamma));
  p.eta = 1.0 - std::exp(-pipe.loss_coeff * pipe.length / (c.c_w * pipe.mass_flow));
  return p;
}

/// Per-source (supply) and per-load (return) water provenance.
struct FlowDecomposition {
  Eigen::MatrixXd xi_s;        ///< [source x load]; each column sums to 1
  Eigen::MatrixXd xi_r;        ///< [source x load]; each row sums to 1
  Eigen::MatrixXd m_load_pair; ///< m_l^{k,v}: water reaching load v that left source k
  Eigen::MatrixXd m_src_pair;  ///< m_src^{k,v}: water reaching source k that left load v
};

/// Validated, immutable network. Construct through build_network().
class NetworkModel {
 public:
  const std::vector<Node>& nodes() const { return nodes_; }
  const std::vector<Pipe>& pipes() const { return pipes_; }
  const Constants& constants() const { return constants_; }
  const std::vector<PipeKernelParams>& kernel_params() const { return kernel_; }

  /// Node indices of sources and loads, in declaration order.
  const std::vector<std::size_t>& sources() const { return sources_; }
  const std::vector<std::size_t>& loads() const { return loads_; }

  std::vector<std::string> source_ids() const { return ids_of(sources_); }
  std::vector<std::string> load_ids() const { return ids_of(loads_); }

  std::size_t node_index(const std::string& id) const {
    auto it = node_index_.find(id);
    if (it == node_index_.end()) throw Error(ErrorKind::DanglingReference, "unknown node " + id);
    return it->second;
  }

  /// Supply pipes entering / leaving each node.
  const std::vector<std::size_t>& pipes_in(std::size_t node) const { return pipes_in_[node]; }
  const std::vector<std::size_t>& pipes_out(std::size_t node) const { return pipes_out_[node]; }
  std::size_t pipe_from(std::size_t pipe) const { return pipe_from_[pipe]; }
  std::size_t pipe_to(std::size_t pipe) const { return pipe_to_[pipe]; }

  /// Supply-direction topological order.
  const std::vector<std::size_t>& topo_order() const { return topo_; }

  double source_flow(std::size_t node) const {
    return nodes_[node].kind == NodeKind::Source ? nodes_[node].mass_flow : 0.0;
  }
  double load_flow(std::size_t node) const {
    return nodes_[node].kind == NodeKind::Load ? nodes_[node].mass_flow : 0.0;
  }

  /// Ordered supply pipes from source `src` to load `load` (both node
  /// indices), or nullopt when the load is not reachable from the source.
  std::optional<std::vector<std::size_t>> path(std::size_t src, std::size_t load) const {
    const auto& reach = reach_[src];
    if (!reach[load]) return std::nullopt;
    std::vector<std::size_t> out;
    std::size_t node = load;
    while (node != src) {
      std::optional<std::size_t> via;
      for (std::size_t j : pipes_in_[node]) {
        if (reach[pipe_from_[j]]) {
          via = j;
          break;
        }
      }
      if (!via) break;  // src itself was the only provenance (unreachable otherwise)
      out.push_back(*via);
      node = pipe_from_[*via];
    }
    std::reverse(out.begin(), out.end());
    return out;
  }

 private:
  friend NetworkModel build_network(std::vector<Node>, std::vector<Pipe>, Constants);

  std::vector<std::string> ids_of(const std::vector<std::size_t>& idx) const {
    std::vector<std::string> out;
    out.reserve(idx.size());
    for (std::size_t i : idx) out.push_back(nodes_[i].id);
    return out;
  }

  std::vector<Node> nodes_;
  std::vector<Pipe> pipes_;
  Constants constants_;
  std::vector<PipeKernelParams> kernel_;
  std::map<std::string, std::size_t> node_index_;
  std::vector<std::size_t> sources_;
  std::vector<std::size_t> loads_;
  std::vector<std::vector<std::size_t>> pipes_in_;
  std::vector<std::vector<std::size_t>> pipes_out_;
  std::vector<std::size_t> pipe_from_;
  std::vector<std::size_t> pipe_to_;
  std::vector<std::size_t> topo_;
  std::vector<std::vector<bool>> reach_;  // reach_[node][other]: other reachable from node
};

inline NetworkModel build_network(std::vector<Node> nodes, std::vector<Pipe> pipes,
                                  Constants constants) {
  NetworkModel net;
  if (!(constants.rho_w > 0.0) || !(constants.c_w > 0.0) || !(constants.dt > 0.0)) {
    throw Error(ErrorKind::InvalidConfig, "constants rho_w, c_w and dt must be positive");
  }

  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const Node& n = nodes[i];
    if (!net.node_index_.emplace(n.id, i).second) {
      throw Error(ErrorKind::DuplicateId, "node id '" + n.id + "' is declared twice");
    }
    if (n.kind != NodeKind::Junction && !(n.mass_flow > 0.0)) {
      throw Error(ErrorKind::InvalidConfig,
                  std::string(to_string(n.kind)) + " node " + n.id + " needs a positive mass flow");
    }
  }
  std::set<std::string> pipe_ids;
  for (const Pipe& p : pipes) {
    if (!pipe_ids.insert(p.id).second) {
      throw Error(ErrorKind::DuplicateId, "pipe id '" + p.id + "' is declared twice");
    }
    for (const auto* end : {&p.from, &p.to}) {
      if (net.node_index_.count(*end) == 0) {
        throw Error(ErrorKind::DanglingReference,
                    "pipe " + p.id + " references unknown node '" + *end + "'");
      }
    }
    if (p.from == p.to) throw Error(ErrorKind::InvalidConfig, "pipe " + p.id + " is a self-loop");
    if (!(p.mass_flow > 0.0)) {
      throw Error(ErrorKind::ZeroMassFlow, "pipe " + p.id + " has non-positive mass flow");
    }
    if (!(p.length > 0.0) || !(p.area > 0.0) || !(p.loss_coeff >= 0.0)) {
      throw Error(ErrorKind::InvalidConfig,
                  "pipe " + p.id + " needs length > 0, area > 0 and loss_coeff >= 0");
    }
  }

  const std::size_t nn = nodes.size();
  net.pipes_in_.assign(nn, {});
  net.pipes_out_.assign(nn, {});
  for (std::size_t j = 0; j < pipes.size(); ++j) {
    const std::size_t f = net.node_index_.at(pipes[j].from);
    const std::size_t t = net.node_index_.at(pipes[j].to);
    net.pipe_from_.push_back(f);
    net.pipe_to_.push_back(t);
    net.pipes_out_[f].push_back(j);
    net.pipes_in_[t].push_back(j);
  }

  // Mass conservation, reporting the worst node.
  double worst = 0.0;
  std::size_t worst_node = 0;
  for (std::size_t i = 0; i < nn; ++i) {
    double in = nodes[i].kind == NodeKind::Source ? nodes[i].mass_flow : 0.0;
    double out = nodes[i].kind == NodeKind::Load ? nodes[i].mass_flow : 0.0;
    for (std::size_t j : net.pipes_in_[i]) in += pipes[j].mass_flow;
    for (std::size_t j : net.pipes_out_[i]) out += pipes[j].mass_flow;
    const double rel = std::abs(in - out) / std::max({in, out, 1.0});
    if (rel > worst) {
      worst = rel;
      worst_node = i;
    }
    if (in == 0.0 && out == 0.0) {
      throw Error(ErrorKind::InvalidConfig, "node " + nodes[i].id + " is isolated");
    }
  }
  if (worst > tol::kMassBalanceRel) {
    throw Error(ErrorKind::MassImbalance, "node " + nodes[worst_node].id +
                                              " violates mass conservation (relative imbalance " +
                                              format_double(worst) + ")");
  }

  // Kahn's algorithm; a cycle cannot be tree-routed.
  std::vector<std::size_t> indeg(nn, 0);
  for (std::size_t i = 0; i < nn; ++i) indeg[i] = net.pipes_in_[i].size();
  std::vector<std::size_t> ready;
  for (std::size_t i = 0; i < nn; ++i) {
    if (indeg[i] == 0) ready.push_back(i);
  }
  std::reverse(ready.begin(), ready.end());
  while (!ready.empty()) {
    const std::size_t n = ready.back();
    ready.pop_back();
    net.topo_.push_back(n);
    for (std::size_t j : net.pipes_out_[n]) {
      if (--indeg[net.pipe_to_[j]] == 0) ready.push_back(net.pipe_to_[j]);
    }
  }
  if (net.topo_.size() != nn) {
    throw Error(ErrorKind::NonTreeRouting, "supply graph contains a directed cycle");
  }

  for (std::size_t i = 0; i < nn; ++i) {
    if (nodes[i].kind == NodeKind::Source) net.sources_.push_back(i);
    if (nodes[i].kind == NodeKind::Load) net.loads_.push_back(i);
  }
  if (net.sources_.empty()) throw Error(ErrorKind::InvalidConfig, "network has no source node");
  if (net.loads_.empty()) throw Error(ErrorKind::InvalidConfig, "network has no load node");

  // Path counts (saturating at 2) from every node.
  net.reach_.assign(nn, std::vector<bool>(nn, false));
  for (std::size_t s = 0; s < nn; ++s) {
    std::vector<int> count(nn, 0);
    count[s] = 1;
    for (std::size_t n : net.topo_) {
      if (count[n] == 0) continue;
      for (std::size_t j : net.pipes_out_[n]) {
        int& c = count[net.pipe_to_[j]];
        c = std::min(2, c + count[n]);
      }
    }
    for (std::size_t n = 0; n < nn; ++n) net.reach_[s][n] = count[n] > 0;
    if (nodes[s].kind != NodeKind::Source) continue;
    for (std::size_t v = 0; v < nn; ++v) {
      if (nodes[v].kind == NodeKind::Load && count[v] > 1) {
        throw Error(ErrorKind::NonTreeRouting, "source " + nodes[s].id + " reaches load " +
                                                   nodes[v].id + " along more than one path");
      }
    }
  }

  net.kernel_.reserve(pipes.size());
  for (const Pipe& p : pipes) net.kernel_.push_back(pipe_kernel_params(p, constants));

  net.nodes_ = std::move(nodes);
  net.pipes_ = std::move(pipes);
  net.constants_ = constants;
  return net;
}

/// Reads the JSON network description:
///
///   { "constants": {"rho_w", "c_w", "dt_s", "tau_amb_c"},
///     "nodes": [{"id", "kind", "mass_flow_kg_s"?}],
///     "pipes": [{"id", "from", "to", "length_m", "area_m2",
///                "lambda_kw_per_m_c", "mass_flow_kg_s"}] }
inline NetworkModel build_network(const nlohmann::json& doc) {
  auto number = [](const nlohmann::json& obj, const char* key, const std::string& where) {
    if (!obj.contains(key)) {
      throw Error(ErrorKind::InvalidConfig, where + ": missing '" + key + "'");
    }
    const auto& v = obj.at(key);
    if (v.is_array()) {
      throw Error(ErrorKind::InvalidConfig,
                  where + ": '" + key + "' must be a constant (time-varying flow is unsupported)");
    }
    if (!v.is_number()) throw Error(ErrorKind::InvalidConfig, where + ": '" + key + "' not numeric");
    return v.get<double>();
  };
  auto text = [](const nlohmann::json& obj, const char* key, const std::string& where) {
    if (!obj.contains(key) || !obj.at(key).is_string()) {
      throw Error(ErrorKind::InvalidConfig, where + ": missing string '" + key + "'");
    }
    return obj.at(key).get<std::string>();
  };

  if (!doc.is_object() || !doc.contains("constants") || !doc.contains("nodes") ||
      !doc.contains("pipes")) {
    throw Error(ErrorKind::InvalidConfig, "network document needs constants, nodes and pipes");
  }
  Constants c;
  const auto& cj = doc.at("constants");
  c.rho_w = number(cj, "rho_w", "constants");
  c.c_w = number(cj, "c_w", "constants");
  c.dt = number(cj, "dt_s", "constants");
  c.tau_amb = number(cj, "tau_amb_c", "constants");

  std::vector<Node> nodes;
  for (const auto& nj : doc.at("nodes")) {
    Node n;
    n.id = text(nj, "id", "node");
    const std::string kind = text(nj, "kind", "node " + n.id);
    if (kind == "source") {
      n.kind = NodeKind::Source;
    } else if (kind == "load") {
      n.kind = NodeKind::Load;
    } else if (kind == "junction") {
      n.kind = NodeKind::Junction;
    } else {
      throw Error(ErrorKind::InvalidConfig, "node " + n.id + ": unknown kind '" + kind + "'");
    }
    if (n.kind != NodeKind::Junction) {
      n.mass_flow = number(nj, "mass_flow_kg_s", "node " + n.id);
    } else if (nj.contains("mass_flow_kg_s")) {
      throw Error(ErrorKind::InvalidConfig, "junction " + n.id + " must not carry a mass flow");
    }
    nodes.push_back(std::move(n));
  }
  std::vector<Pipe> pipes;
  for (const auto& pj : doc.at("pipes")) {
    Pipe p;
    p.id = text(pj, "id", "pipe");
    const std::string where = "pipe " + p.id;
    p.from = text(pj, "from", where);
    p.to = text(pj, "to", where);
    p.length = number(pj, "length_m", where);
    p.area = number(pj, "area_m2", where);
    p.loss_coeff = number(pj, "lambda_kw_per_m_c", where);
    p.mass_flow = number(pj, "mass_flow_kg_s", where);
    pipes.push_back(std::move(p));
  }
  return build_network(std::move(nodes), std::move(pipes), c);
}

inline nlohmann::json to_json(const NetworkModel& net) {
  nlohmann::json doc;
  const auto& c = net.constants();
  doc["constants"] = {{"rho_w", c.rho_w}, {"c_w", c.c_w}, {"dt_s", c.dt}, {"tau_amb_c", c.tau_amb}};
  doc["nodes"] = nlohmann::json::array();
  for (const auto& n : net.nodes()) {
    nlohmann::json nj{{"id", n.id}, {"kind", std::string(to_string(n.kind))}};
    if (n.kind != NodeKind::Junction) nj["mass_flow_kg_s"] = n.mass_flow;
    doc["nodes"].push_back(nj);
  }
  doc["pipes"] = nlohmann::json::array();
  for (const auto& p : net.pipes()) {
    doc["pipes"].push_back({{"id", p.id},
                            {"from", p.from},
                            {"to", p.to},
                            {"length_m", p.length},
                            {"area_m2", p.area},
                            {"lambda_kw_per_m_c", p.loss_coeff},
                            {"mass_flow_kg_s", p.mass_flow}});
  }
  return doc;
}

/// Proportional-sharing flow tracing. Each node's water is the flow-weighted
/// mix of its inflows' provenance; sources inject their own label on the
/// supply side and loads on the return side.
inline FlowDecomposition trace_flow_fractions(const NetworkModel& net) {
  const std::size_t nn = net.nodes().size();
  const std::size_t ns = net.sources().size();
  const std::size_t nl = net.loads().size();
  const auto& pipes = net.pipes();

  Eigen::MatrixXd supply = Eigen::MatrixXd::Zero(nn, ns);
  for (std::size_t n : net.topo_order()) {
    double total = 0.0;
    for (std::size_t j : net.pipes_in(n)) {
      supply.row(n) += pipes[j].mass_flow * supply.row(net.pipe_from(j));
      total += pipes[j].mass_flow;
    }
    for (std::size_t k = 0; k < ns; ++k) {
      if (net.sources()[k] == n) {
        supply(n, k) += net.source_flow(n);
        total += net.source_flow(n);
      }
    }
    if (total > 0.0) supply.row(n) /= total;
  }

  // Return water runs against the supply direction.
  Eigen::MatrixXd ret = Eigen::MatrixXd::Zero(nn, nl);
  const auto& topo = net.topo_order();
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    const std::size_t n = *it;
    double total = 0.0;
    for (std::size_t j : net.pipes_out(n)) {
      ret.row(n) += pipes[j].mass_flow * ret.row(net.pipe_to(j));
      total += pipes[j].mass_flow;
    }
    for (std::size_t v = 0; v < nl; ++v) {
      if (net.loads()[v] == n) {
        ret(n, v) += net.load_flow(n);
        total += net.load_flow(n);
      }
    }
    if (total > 0.0) ret.row(n) /= total;
  }

  FlowDecomposition fd;
  fd.xi_s.resize(ns, nl);
  fd.xi_r.resize(ns, nl);
  fd.m_load_pair.resize(ns, nl);
  fd.m_src_pair.resize(ns, nl);
  for (std::size_t k = 0; k < ns; ++k) {
    for (std::size_t v = 0; v < nl; ++v) {
      const std::size_t src = net.sources()[k];
      const std::size_t load = net.loads()[v];
      fd.xi_s(k, v) = supply(load, k);
      fd.xi_r(k, v) = ret(src, v);
      fd.m_load_pair(k, v) = fd.xi_s(k, v) * net.load_flow(load);
      fd.m_src_pair(k, v) = fd.xi_r(k, v) * net.source_flow(src);
    }
  }
  return fd;
}

/// Steady node temperatures (supply, return) for constant boundary inputs.
inline std::pair<Eigen::VectorXd, Eigen::VectorXd> steady_state(
    const NetworkModel& net, const Eigen::VectorXd& source_supply,
    const Eigen::VectorXd& load_return) {
  const std::size_t nn = net.nodes().size();
  const auto& pipes = net.pipes();
  const auto& kp = net.kernel_params();
  const double amb = net.constants().tau_amb;
  Eigen::VectorXd sup = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(nn), amb);
  Eigen::VectorXd ret = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(nn), amb);
  for (std::size_t n : net.topo_order()) {
    double total = 0.0, heat = 0.0;
    for (std::size_t j : net.pipes_in(n)) {
      heat += pipes[j].mass_flow * ((1.0 - kp[j].eta) * sup(net.pipe_from(j)) + kp[j].eta * amb);
      total += pipes[j].mass_flow;
    }
    for (std::size_t k = 0; k < net.sources().size(); ++k) {
      if (net.sources()[k] == n) {
        heat += net.source_flow(n) * source_supply(k);
        total += net.source_flow(n);
      }
    }
    if (total > 0.0) sup(n) = heat / total;
  }
  const auto& topo = net.topo_order();
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    const std::size_t n = *it;
    double total = 0.0, heat = 0.0;
    for (std::size_t j : net.pipes_out(n)) {
      heat += pipes[j].mass_flow * ((1.0 - kp[j].eta) * ret(net.pipe_to(j)) + kp[j].eta * amb);
      total += pipes[j].mass_flow;
    }
    for (std::size_t v = 0; v < net.loads().size(); ++v) {
      if (net.loads()[v] == n) {
        heat += net.load_flow(n) * load_return(v);
        total += net.load_flow(n);
      }
    }
    if (total > 0.0) ret(n) = heat / total;
  }
  return {sup, ret};
}

/// Node-method simulation of both the supply and the return network.
///
/// `source_supply` is horizon x N_s (column order = net.sources()),
/// `load_return` is horizon x N_l. Each pipe outlet follows
///
///   out(t) = (1-eta)[alpha in(t-gamma) + (1-alpha) in(t-gamma-1)] + eta tau_amb
///
/// and each node mixes its inflows by mass flow. Inlet history before t = 0
/// is `initial_temp`.
inline MeasurementSet simulate(const NetworkModel& net, const Eigen::MatrixXd& source_supply,
                               const Eigen::MatrixXd& load_return, int horizon,
                               double initial_temp) {
  const auto ns = static_cast<Eigen::Index>(net.sources().size());
  const auto nl = static_cast<Eigen::Index>(net.loads().size());
  if (horizon < 0) throw Error(ErrorKind::HorizonTooShort, "negative horizon");
  if (source_supply.cols() != ns || load_return.cols() != nl) {
    throw Error(ErrorKind::ShapeMismatch, "boundary series need one column per source/load");
  }
  if (source_supply.rows() < horizon || load_return.rows() < horizon) {
    throw Error(ErrorKind::HorizonTooShort,
                "boundary series have " +
                    std::to_string(std::min(source_supply.rows(), load_return.rows())) +
                    " steps, horizon is " + std::to_string(horizon));
  }

  const std::size_t nn = net.nodes().size();
  const auto& pipes = net.pipes();
  const auto& kp = net.kernel_params();
  const double amb = net.constants().tau_amb;
  Eigen::MatrixXd sup(horizon, static_cast<Eigen::Index>(nn));
  Eigen::MatrixXd ret(horizon, static_cast<Eigen::Index>(nn));

  auto past = [&](const Eigen::MatrixXd& temps, long t, std::size_t node) {
    return t < 0 ? initial_temp : temps(t, static_cast<Eigen::Index>(node));
  };
  auto outlet = [&](const Eigen::MatrixXd& temps, long t, std::size_t j, std::size_t inlet_node) {
    const auto& p = kp[j];
    const double lagged = p.alpha * past(temps, t - p.gamma, inlet_node) +
                          (1.0 - p.alpha) * past(temps, t - p.gamma - 1, inlet_node);
    return (1.0 - p.eta) * lagged + p.eta * amb;
  };

  std::vector<long> source_col(nn, -1), load_col(nn, -1);
  for (std::size_t k = 0; k < net.sources().size(); ++k) source_col[net.sources()[k]] = static_cast<long>(k);
  for (std::size_t v = 0; v < net.loads().size(); ++v) load_col[net.loads()[v]] = static_cast<long>(v);

  const auto& topo = net.topo_order();
  for (long t = 0; t < horizon; ++t) {
    for (std::size_t n : topo) {
      double total = 0.0, heat = 0.0;
      for (std::size_t j : net.pipes_in(n)) {
        heat += pipes[j].mass_flow * outlet(sup, t, j, net.pipe_from(j));
        total += pipes[j].mass_flow;
      }
      if (source_col[n] >= 0) {
        heat += net.source_flow(n) * source_supply(t, source_col[n]);
        total += net.source_flow(n);
      }
      sup(t, static_cast<Eigen::Index>(n)) = heat / total;
    }
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
      const std::size_t n = *it;
      double total = 0.0, heat = 0.0;
      for (std::size_t j : net.pipes_out(n)) {
        heat += pipes[j].mass_flow * outlet(ret, t, j, net.pipe_to(j));
        total += pipes[j].mass_flow;
      }
      if (load_col[n] >= 0) {
        heat += net.load_flow(n) * load_return(t, load_col[n]);
        total += net.load_flow(n);
      }
      ret(t, static_cast<Eigen::Index>(n)) = heat / total;
    }
  }

  MeasurementSet out;
  out.dt = net.constants().dt;
  out.tau_amb = amb;
  out.sources = net.source_ids();
  out.loads = net.load_ids();
  auto column = [&](const Eigen::MatrixXd& m, Eigen::Index c) {
    std::vector<double> s(static_cast<std::size_t>(horizon));
    for (long t = 0; t < horizon; ++t) s[static_cast<std::size_t>(t)] = m(t, c);
    return s;
  };
  for (Eigen::Index k = 0; k < ns; ++k) {
    const auto n = net.sources()[static_cast<std::size_t>(k)];
    out.set(net.nodes()[n].id, Side::Supply, column(source_supply, k));
    out.set(net.nodes()[n].id, Side::Return, column(ret, static_cast<Eigen::Index>(n)));
  }
  for (Eigen::Index v = 0; v < nl; ++v) {
    const auto n = net.loads()[static_cast<std::size_t>(v)];
    out.set(net.nodes()[n].id, Side::Supply, column(sup, static_cast<Eigen::Index>(n)));
    out.set(net.nodes()[n].id, Side::Return, column(load_return, v));
  }
  return out;
}

}  // namespace dhn
