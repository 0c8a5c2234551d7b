#pragma once

// Heat dispatch of CHP units over a district heating network, with the
// network written either as node-method recursions or as aggregate-model
// maps. Both are linear in the temperatures, so the problem is a QP.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "dhn/agm.hpp"
#include "dhn/error.hpp"
#include "dhn/measurements.hpp"
#include "dhn/network.hpp"
#include "dhn/qp.hpp"

namespace dhn {

enum class DhnModelKind { NodeMethod, Agm };

inline std::string_view to_string(DhnModelKind k) { return k == DhnModelKind::NodeMethod ? "node" : "agm"; }

inline DhnModelKind parse_model_kind(std::string_view text) {
  if (text == "node" || text == "node_method") return DhnModelKind::NodeMethod;
  if (text == "agm") return DhnModelKind::Agm;
  throw Error(ErrorKind::InvalidConfig, "unknown model kind '" + std::string(text) + "'");
}

/// One CHP unit at a source node. Fuel cost c2 h^2 + c1 h + c0 per step
/// with h in MW; electric output is power_ratio * h.
struct ChpUnit {
  std::string source;
  double c2 = 0.0;
  double c1 = 0.0;
  double c0 = 0.0;
  double heat_min = 0.0;  ///< MW
  double heat_max = 50.0;
  double power_ratio = 0.8;
};

struct TemperatureBounds {
  double source_supply_min = 70.0, source_supply_max = 120.0;
  double load_supply_min = 60.0, load_supply_max = 120.0;
  double load_return_min = 30.0, load_return_max = 75.0;
};

struct DispatchScenario {
  int horizon = 24;
  std::map<std::string, std::vector<double>> demand;  ///< MW per load and step
  std::vector<ChpUnit> chp;
  TemperatureBounds bounds;
  double warm_supply = 80.0;  ///< constant history before t = 0
  double warm_return = 45.0;
  DhnModelKind model = DhnModelKind::NodeMethod;
};

/// Variable layout of a built problem. Every index map is [entity][t].
struct DispatchProblem {
  DhnModelKind kind = DhnModelKind::NodeMethod;
  int horizon = 0;
  std::vector<std::string> sources, loads;
  std::vector<std::vector<Eigen::Index>> source_supply, source_return, load_supply, load_return, heat, power;
  qp::Problem qp;
};

struct DispatchSolution {
  DhnModelKind kind = DhnModelKind::NodeMethod;
  double objective = 0.0;
  double feasibility_residual = 0.0;
  double solve_time = 0.0;  ///< s
  int iterations = 0;
  /// [entity][t]
  std::vector<std::vector<double>> source_supply, source_return, load_supply, load_return, heat, power;
};

namespace detail {

/// Incremental builder for qp::Problem rows.
class RowBuilder {
 public:
  Eigen::Index add_var() { return n_++; }

  void begin() { row_.clear(); }
  void coef(Eigen::Index var, double value) { row_.emplace_back(var, value); }
  void equal(double rhs) { finish(rhs, rhs); }
  void range(double lo, double hi) { finish(lo, hi); }

  void bound(Eigen::Index var, double lo, double hi) {
    begin();
    coef(var, 1.0);
    finish(lo, hi);
  }

  qp::Problem make(const std::vector<std::pair<Eigen::Index, double>>& diag_p,
                   const std::vector<std::pair<Eigen::Index, double>>& linear, double constant) const {
    qp::Problem p;
    p.P = Eigen::MatrixXd::Zero(n_, n_);
    p.q = Eigen::VectorXd::Zero(n_);
    for (auto [i, v] : diag_p) p.P(i, i) += v;
    for (auto [i, v] : linear) p.q(i) += v;
    p.constant = constant;
    const auto m = static_cast<Eigen::Index>(rows_.size());
    p.A = Eigen::MatrixXd::Zero(m, n_);
    p.l.resize(m);
    p.u.resize(m);
    for (Eigen::Index r = 0; r < m; ++r) {
      for (auto [i, v] : rows_[static_cast<std::size_t>(r)]) p.A(r, i) += v;
      p.l(r) = lo_[static_cast<std::size_t>(r)];
      p.u(r) = hi_[static_cast<std::size_t>(r)];
    }
    return p;
  }

 private:
  void finish(double lo, double hi) {
    rows_.push_back(row_);
    lo_.push_back(lo);
    hi_.push_back(hi);
  }

  Eigen::Index n_ = 0;
  std::vector<std::pair<Eigen::Index, double>> row_;
  std::vector<std::vector<std::pair<Eigen::Index, double>>> rows_;
  std::vector<double> lo_, hi_;
};

inline std::vector<std::vector<Eigen::Index>> add_block(RowBuilder& b, std::size_t entities, int horizon) {
  std::vector<std::vector<Eigen::Index>> idx(entities, std::vector<Eigen::Index>(static_cast<std::size_t>(horizon)));
  for (auto& row : idx) {
    for (auto& v : row) v = b.add_var();
  }
  return idx;
}

inline void check_scenario(const NetworkModel& net, const DispatchScenario& sc) {
  const auto& b = sc.bounds;
  if (sc.horizon < 1) throw Error(ErrorKind::InvalidConfig, "dispatch horizon must be >= 1");
  if (b.source_supply_min > b.source_supply_max || b.load_supply_min > b.load_supply_max ||
      b.load_return_min > b.load_return_max) {
    throw Error(ErrorKind::InfeasibleBounds, "temperature bounds have lower > upper");
  }
  if (sc.chp.size() != net.sources().size()) {
    throw Error(ErrorKind::InvalidConfig, "need exactly one CHP unit per source");
  }
  const auto source_ids = net.source_ids();
  for (std::size_t k = 0; k < sc.chp.size(); ++k) {
    const auto& u = sc.chp[k];
    if (u.source != source_ids[k]) {
      throw Error(ErrorKind::InvalidConfig, "CHP units must follow the source order; expected " + source_ids[k]);
    }
    if (u.c2 < 0.0) throw Error(ErrorKind::InvalidConfig, "CHP " + u.source + " has c2 < 0");
    if (u.heat_min > u.heat_max) throw Error(ErrorKind::InfeasibleBounds, "CHP " + u.source + " heat bounds");
  }

  // Steady-state reach of the supply temperatures at each load.
  const auto ns = static_cast<Eigen::Index>(net.sources().size());
  const auto nl = static_cast<Eigen::Index>(net.loads().size());
  const auto hot = steady_state(net, Eigen::VectorXd::Constant(ns, b.source_supply_max),
                                Eigen::VectorXd::Constant(nl, b.load_return_min))
                       .first;
  const double cw = net.constants().c_w;
  double total_demand_peak = 0.0, heat_cap = 0.0;
  for (const auto& u : sc.chp) heat_cap += u.heat_max;
  for (std::size_t v = 0; v < net.loads().size(); ++v) {
    const std::size_t node = net.loads()[v];
    const std::string& id = net.nodes()[node].id;
    auto it = sc.demand.find(id);
    if (it == sc.demand.end()) throw Error(ErrorKind::InvalidConfig, "no demand series for load " + id);
    if (static_cast<int>(it->second.size()) != sc.horizon) {
      throw Error(ErrorKind::ShapeMismatch, "demand series for " + id + " does not match the horizon");
    }
    const double m = net.load_flow(node);
    const double top = std::min(hot(static_cast<Eigen::Index>(node)), b.load_supply_max);
    const double reach_hi = cw * m * (top - b.load_return_min) / 1000.0;
    const double reach_lo = cw * m * (b.load_supply_min - b.load_return_max) / 1000.0;
    for (double d : it->second) {
      if (d > reach_hi + 1e-9 || d < reach_lo - 1e-9) {
        throw Error(ErrorKind::InfeasibleBounds,
                    "demand " + format_double(d) + " MW at " + id + " is outside the steady-state reach [" +
                        format_double(reach_lo) + ", " + format_double(reach_hi) + "]");
      }
    }
  }
  for (int t = 0; t < sc.horizon; ++t) {
    double total = 0.0;
    for (const auto& [id, series] : sc.demand) total += series[static_cast<std::size_t>(t)];
    total_demand_peak = std::max(total_demand_peak, total);
  }
  if (total_demand_peak > heat_cap + 1e-9) {
    throw Error(ErrorKind::InfeasibleBounds, "peak demand " + format_double(total_demand_peak) +
                                                 " MW exceeds total CHP capacity " + format_double(heat_cap));
  }
}

}  // namespace detail

/// Builds the dispatch QP. `agm` is required for DhnModelKind::Agm; the
/// network always supplies flows, c_w and tau_amb.
inline DispatchProblem build_dispatch(const NetworkModel& net, const DispatchScenario& sc,
                                      const AgmModel* agm = nullptr) {
  detail::check_scenario(net, sc);
  if (sc.model == DhnModelKind::Agm && agm == nullptr) {
    throw Error(ErrorKind::InvalidConfig, "AGM dispatch needs an aggregate model");
  }
  const int T = sc.horizon;
  const auto& b = sc.bounds;
  const double cw = net.constants().c_w;
  const double amb = net.constants().tau_amb;
  const std::size_t ns = net.sources().size();
  const std::size_t nl = net.loads().size();

  DispatchProblem prob;
  prob.kind = sc.model;
  prob.horizon = T;
  prob.sources = net.source_ids();
  prob.loads = net.load_ids();

  detail::RowBuilder rb;
  prob.source_supply = detail::add_block(rb, ns, T);
  prob.load_return = detail::add_block(rb, nl, T);
  prob.heat = detail::add_block(rb, ns, T);
  prob.power = detail::add_block(rb, ns, T);

  if (sc.model == DhnModelKind::NodeMethod) {
    const std::size_t nn = net.nodes().size();
    const std::size_t np = net.pipes().size();
    const auto sup = detail::add_block(rb, nn, T);
    const auto ret = detail::add_block(rb, nn, T);
    const auto out_s = detail::add_block(rb, np, T);
    const auto out_r = detail::add_block(rb, np, T);
    const auto warm = steady_state(net, Eigen::VectorXd::Constant(static_cast<Eigen::Index>(ns), sc.warm_supply),
                                   Eigen::VectorXd::Constant(static_cast<Eigen::Index>(nl), sc.warm_return));
    const auto& kp = net.kernel_params();

    // Pipe outlets: two taps on the inlet node temperature.
    auto pipe_rows = [&](const std::vector<std::vector<Eigen::Index>>& outlet,
                         const std::vector<std::vector<Eigen::Index>>& node_temp, const Eigen::VectorXd& history,
                         bool supply_side) {
      for (std::size_t j = 0; j < np; ++j) {
        const std::size_t inlet = supply_side ? net.pipe_from(j) : net.pipe_to(j);
        const auto& p = kp[j];
        for (int t = 0; t < T; ++t) {
          rb.begin();
          rb.coef(outlet[j][static_cast<std::size_t>(t)], 1.0);
          double rhs = p.eta * amb;
          const int lags[2] = {t - p.gamma, t - p.gamma - 1};
          const double w[2] = {(1.0 - p.eta) * p.alpha, (1.0 - p.eta) * (1.0 - p.alpha)};
          for (int s = 0; s < 2; ++s) {
            if (w[s] == 0.0) continue;
            if (lags[s] >= 0) {
              rb.coef(node_temp[inlet][static_cast<std::size_t>(lags[s])], -w[s]);
            } else {
              rhs += w[s] * history(static_cast<Eigen::Index>(inlet));
            }
          }
          rb.equal(rhs);
        }
      }
    };
    pipe_rows(out_s, sup, warm.first, true);
    pipe_rows(out_r, ret, warm.second, false);

    std::vector<long> source_col(nn, -1), load_col(nn, -1);
    for (std::size_t k = 0; k < ns; ++k) source_col[net.sources()[k]] = static_cast<long>(k);
    for (std::size_t v = 0; v < nl; ++v) load_col[net.loads()[v]] = static_cast<long>(v);

    // Node mixing, written as flow-weighted averages.
    for (std::size_t n = 0; n < nn; ++n) {
      for (int t = 0; t < T; ++t) {
        const auto ts = static_cast<std::size_t>(t);
        double total = 0.0;
        for (std::size_t j : net.pipes_in(n)) total += net.pipes()[j].mass_flow;
        if (source_col[n] >= 0) total += net.source_flow(n);
        rb.begin();
        rb.coef(sup[n][ts], 1.0);
        for (std::size_t j : net.pipes_in(n)) rb.coef(out_s[j][ts], -net.pipes()[j].mass_flow / total);
        if (source_col[n] >= 0) {
          rb.coef(prob.source_supply[static_cast<std::size_t>(source_col[n])][ts], -net.source_flow(n) / total);
        }
        rb.equal(0.0);

        total = 0.0;
        for (std::size_t j : net.pipes_out(n)) total += net.pipes()[j].mass_flow;
        if (load_col[n] >= 0) total += net.load_flow(n);
        rb.begin();
        rb.coef(ret[n][ts], 1.0);
        for (std::size_t j : net.pipes_out(n)) rb.coef(out_r[j][ts], -net.pipes()[j].mass_flow / total);
        if (load_col[n] >= 0) {
          rb.coef(prob.load_return[static_cast<std::size_t>(load_col[n])][ts], -net.load_flow(n) / total);
        }
        rb.equal(0.0);
      }
    }
    for (std::size_t k = 0; k < ns; ++k) prob.source_return.push_back(ret[net.sources()[k]]);
    for (std::size_t v = 0; v < nl; ++v) prob.load_supply.push_back(sup[net.loads()[v]]);
  } else {
    prob.load_supply = detail::add_block(rb, nl, T);
    prob.source_return = detail::add_block(rb, ns, T);
    auto map_rows = [&](const std::vector<AgmMapping>& maps, const std::vector<std::vector<Eigen::Index>>& output,
                        const std::vector<std::vector<Eigen::Index>>& input, double history) {
      for (std::size_t e = 0; e < maps.size(); ++e) {
        const auto& m = maps[e];
        if (m.inputs.size() != input.size()) {
          throw Error(ErrorKind::ShapeMismatch, "aggregate model for " + m.node + " does not match the network");
        }
        for (int t = 0; t < T; ++t) {
          rb.begin();
          rb.coef(output[e][static_cast<std::size_t>(t)], 1.0);
          double rhs = m.offset * amb;
          for (std::size_t c = 0; c < m.inputs.size(); ++c) {
            for (int lag = 0; lag <= m.gamma_cap(); ++lag) {
              const double a = m.lag(c, lag);
              if (a == 0.0) continue;
              if (t - lag >= 0) {
                rb.coef(input[c][static_cast<std::size_t>(t - lag)], -a);
              } else {
                rhs += a * history;
              }
            }
          }
          rb.equal(rhs);
        }
      }
    };
    if (agm->stm.size() != nl || agm->rtm.size() != ns) {
      throw Error(ErrorKind::ShapeMismatch, "aggregate model does not match the network's sources and loads");
    }
    map_rows(agm->stm, prob.load_supply, prob.source_supply, sc.warm_supply);
    map_rows(agm->rtm, prob.source_return, prob.load_return, sc.warm_return);
  }

  // Shared rows: CHP heat, power, load heat balance, bounds.
  std::vector<std::pair<Eigen::Index, double>> quad, lin;
  double constant = 0.0;
  for (std::size_t k = 0; k < ns; ++k) {
    const double m = net.source_flow(net.sources()[k]);
    const auto& u = sc.chp[k];
    for (int t = 0; t < T; ++t) {
      const auto ts = static_cast<std::size_t>(t);
      rb.begin();
      rb.coef(prob.heat[k][ts], 1.0);
      rb.coef(prob.source_supply[k][ts], -cw * m / 1000.0);
      rb.coef(prob.source_return[k][ts], cw * m / 1000.0);
      rb.equal(0.0);
      rb.begin();
      rb.coef(prob.power[k][ts], 1.0);
      rb.coef(prob.heat[k][ts], -u.power_ratio);
      rb.equal(0.0);
      rb.bound(prob.heat[k][ts], u.heat_min, u.heat_max);
      rb.bound(prob.source_supply[k][ts], b.source_supply_min, b.source_supply_max);
      quad.emplace_back(prob.heat[k][ts], 2.0 * u.c2);
      lin.emplace_back(prob.heat[k][ts], u.c1);
      constant += u.c0;
    }
  }
  for (std::size_t v = 0; v < nl; ++v) {
    const double m = net.load_flow(net.loads()[v]);
    const auto& d = sc.demand.at(prob.loads[v]);
    for (int t = 0; t < T; ++t) {
      const auto ts = static_cast<std::size_t>(t);
      rb.begin();
      rb.coef(prob.load_supply[v][ts], cw * m / 1000.0);
      rb.coef(prob.load_return[v][ts], -cw * m / 1000.0);
      rb.equal(d[ts]);
      rb.bound(prob.load_supply[v][ts], b.load_supply_min, b.load_supply_max);
      rb.bound(prob.load_return[v][ts], b.load_return_min, b.load_return_max);
    }
  }
  prob.qp = rb.make(quad, lin, constant);
  return prob;
}

inline DispatchSolution solve_dispatch(const DispatchProblem& prob, const qp::Settings& settings = {}) {
  const auto start = std::chrono::steady_clock::now();
  const qp::Result r = qp::solve(prob.qp, settings);
  const auto stop = std::chrono::steady_clock::now();

  DispatchSolution s;
  s.kind = prob.kind;
  s.objective = r.objective;
  s.feasibility_residual = r.primal_residual;
  s.solve_time = std::chrono::duration<double>(stop - start).count();
  s.iterations = r.iterations;
  auto read = [&](const std::vector<std::vector<Eigen::Index>>& idx) {
    std::vector<std::vector<double>> out;
    for (const auto& row : idx) {
      auto& series = out.emplace_back();
      for (Eigen::Index i : row) series.push_back(r.x(i));
    }
    return out;
  };
  s.source_supply = read(prob.source_supply);
  s.source_return = read(prob.source_return);
  s.load_supply = read(prob.load_supply);
  s.load_return = read(prob.load_return);
  s.heat = read(prob.heat);
  s.power = read(prob.power);
  return s;
}

struct ModelComparison {
  DispatchSolution node;
  DispatchSolution agm;
  double deviation = 0.0;        ///< |cost_agm - cost_node| / cost_node
  double max_heat_gap = 0.0;     ///< max over steps of |total CHP heat difference|, MW
  double peak_demand = 0.0;      ///< MW
  double node_time = 0.0;        ///< median solve time, s
  double agm_time = 0.0;
};

inline double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Solves the scenario with both network models. Solve times are the median
/// over `repeats` runs.
inline ModelComparison compare_models(const NetworkModel& net, const AgmModel& agm, DispatchScenario sc,
                                      int repeats = 3, const qp::Settings& settings = {}) {
  if (repeats < 1) throw Error(ErrorKind::InvalidConfig, "repeats must be >= 1");
  ModelComparison c;
  std::vector<double> times;

  sc.model = DhnModelKind::NodeMethod;
  const auto node_problem = build_dispatch(net, sc);
  for (int i = 0; i < repeats; ++i) {
    c.node = solve_dispatch(node_problem, settings);
    times.push_back(c.node.solve_time);
  }
  c.node_time = median_of(times);

  times.clear();
  sc.model = DhnModelKind::Agm;
  const auto agm_problem = build_dispatch(net, sc, &agm);
  for (int i = 0; i < repeats; ++i) {
    c.agm = solve_dispatch(agm_problem, settings);
    times.push_back(c.agm.solve_time);
  }
  c.agm_time = median_of(times);

  if (!(std::abs(c.node.objective) > 0.0)) {
    c.deviation = std::abs(c.agm.objective - c.node.objective) == 0.0 ? 0.0 : qp::kInf;
  } else {
    c.deviation = std::abs(c.agm.objective - c.node.objective) / std::abs(c.node.objective);
  }
  for (int t = 0; t < sc.horizon; ++t) {
    double hn = 0.0, ha = 0.0, d = 0.0;
    for (const auto& s : c.node.heat) hn += s[static_cast<std::size_t>(t)];
    for (const auto& s : c.agm.heat) ha += s[static_cast<std::size_t>(t)];
    for (const auto& [id, series] : sc.demand) d += series[static_cast<std::size_t>(t)];
    c.max_heat_gap = std::max(c.max_heat_gap, std::abs(hn - ha));
    c.peak_demand = std::max(c.peak_demand, d);
  }
  return c;
}

// ---------------------------------------------------------------------------
// Files

inline DispatchScenario scenario_from_json(const nlohmann::json& j) {
  try {
    DispatchScenario sc;
    sc.horizon = j.at("horizon").get<int>();
    for (const auto& [id, series] : j.at("demand_mw").items()) sc.demand[id] = series.get<std::vector<double>>();
    for (const auto& u : j.at("chp")) {
      ChpUnit c;
      c.source = u.at("source").get<std::string>();
      c.c2 = u.value("c2", 0.0);
      c.c1 = u.value("c1", 0.0);
      c.c0 = u.value("c0", 0.0);
      c.heat_min = u.value("heat_min_mw", 0.0);
      c.heat_max = u.value("heat_max_mw", 50.0);
      c.power_ratio = u.value("power_ratio", 0.8);
      sc.chp.push_back(c);
    }
    if (j.contains("bounds")) {
      const auto& b = j.at("bounds");
      auto& o = sc.bounds;
      o.source_supply_min = b.value("source_supply_min_c", o.source_supply_min);
      o.source_supply_max = b.value("source_supply_max_c", o.source_supply_max);
      o.load_supply_min = b.value("load_supply_min_c", o.load_supply_min);
      o.load_supply_max = b.value("load_supply_max_c", o.load_supply_max);
      o.load_return_min = b.value("load_return_min_c", o.load_return_min);
      o.load_return_max = b.value("load_return_max_c", o.load_return_max);
    }
    if (j.contains("warm_start")) {
      sc.warm_supply = j.at("warm_start").value("source_supply_c", sc.warm_supply);
      sc.warm_return = j.at("warm_start").value("load_return_c", sc.warm_return);
    }
    sc.model = parse_model_kind(j.value("model", std::string("node")));
    return sc;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::InvalidConfig, std::string("dispatch scenario: ") + e.what());
  }
}

inline nlohmann::json to_json(const DispatchScenario& sc) {
  nlohmann::json j;
  j["horizon"] = sc.horizon;
  j["demand_mw"] = sc.demand;
  j["chp"] = nlohmann::json::array();
  for (const auto& u : sc.chp) {
    j["chp"].push_back({{"source", u.source},
                        {"c2", u.c2},
                        {"c1", u.c1},
                        {"c0", u.c0},
                        {"heat_min_mw", u.heat_min},
                        {"heat_max_mw", u.heat_max},
                        {"power_ratio", u.power_ratio}});
  }
  const auto& b = sc.bounds;
  j["bounds"] = {{"source_supply_min_c", b.source_supply_min}, {"source_supply_max_c", b.source_supply_max},
                 {"load_supply_min_c", b.load_supply_min},     {"load_supply_max_c", b.load_supply_max},
                 {"load_return_min_c", b.load_return_min},     {"load_return_max_c", b.load_return_max}};
  j["warm_start"] = {{"source_supply_c", sc.warm_supply}, {"load_return_c", sc.warm_return}};
  j["model"] = std::string(to_string(sc.model));
  return j;
}

inline nlohmann::json to_json(const DispatchSolution& s) {
  return {{"model", std::string(to_string(s.kind))},
          {"objective", s.objective},
          {"feasibility_residual", s.feasibility_residual},
          {"iterations", s.iterations}};
}

/// Long-format schedule: model,t,node_id,quantity,value
inline void write_schedule_csv(const std::vector<const DispatchSolution*>& solutions, const DispatchProblem& layout,
                               const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::InvalidConfig, "cannot write " + path.string());
  out << "model,t,node_id,quantity,value\n";
  for (const auto* s : solutions) {
    const std::string model(to_string(s->kind));
    auto emit = [&](const std::vector<std::vector<double>>& block, const std::vector<std::string>& ids,
                    const char* quantity) {
      for (std::size_t e = 0; e < block.size(); ++e) {
        for (std::size_t t = 0; t < block[e].size(); ++t) {
          out << model << ',' << t << ',' << ids[e] << ',' << quantity << ',' << format_double(block[e][t]) << '\n';
        }
      }
    };
    emit(s->heat, layout.sources, "heat_mw");
    emit(s->power, layout.sources, "power_mw");
    emit(s->source_supply, layout.sources, "supply_temp_c");
    emit(s->source_return, layout.sources, "return_temp_c");
    emit(s->load_supply, layout.loads, "supply_temp_c");
    emit(s->load_return, layout.loads, "return_temp_c");
  }
}

/// Demand profile for the seven-node fixture's style of tests: a daily
/// shape scaled to `fraction` of each load's steady-state reach.
inline DispatchScenario daily_scenario(const NetworkModel& net, int horizon = 24, double fraction = 0.8) {
  DispatchScenario sc;
  sc.horizon = horizon;
  const auto ids = net.source_ids();
  for (std::size_t k = 0; k < ids.size(); ++k) {
    ChpUnit u;
    u.source = ids[k];
    u.c2 = 0.8 + 0.4 * static_cast<double>(k);
    u.c1 = 20.0 + 4.0 * static_cast<double>(k);
    u.c0 = 3.0;
    u.heat_min = 0.0;
    u.heat_max = 40.0;
    sc.chp.push_back(u);
  }
  const double cw = net.constants().c_w;
  const auto& b = sc.bounds;
  for (std::size_t v = 0; v < net.loads().size(); ++v) {
    const std::size_t node = net.loads()[v];
    const double m = net.load_flow(node);
    const double base = cw * m * (b.load_supply_min - b.load_return_min) / 1000.0;
    auto& series = sc.demand[net.nodes()[node].id];
    for (int t = 0; t < horizon; ++t) {
      const double shape = 0.75 + 0.25 * std::cos(2.0 * 3.14159265358979323846 * (t - 7.0) / 24.0);
      series.push_back(fraction * base * shape);
    }
  }
  return sc;
}

}  // namespace dhn
