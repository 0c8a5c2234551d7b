#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "dhn/error.hpp"
#include "dhn/measurements.hpp"
#include "dhn/network.hpp"

namespace dhn {

/// Source-to-load response of one unique supply path.
struct PathKernel {
  std::vector<double> coeffs;  ///< taps at lags delay, delay+1, ..., delay+pipe_count
  double loss_offset = 0.0;    ///< share of ambient temperature in the output
  int delay = 0;
  int pipe_count = 0;
};

inline std::vector<double> convolve(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) return {};
  std::vector<double> out(a.size() + b.size() - 1, 0.0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < b.size(); ++j) out[i + j] += a[i] * b[j];
  }
  return out;
}

/// Cascades the two-tap kernels [(1-eta)alpha, (1-eta)(1-alpha)] of the
/// pipes along a path, in flow order.
inline PathKernel path_kernel(std::span<const PipeKernelParams> pipes) {
  if (pipes.empty()) throw Error(ErrorKind::EmptyPath, "path has no pipes");
  PathKernel k;
  k.coeffs = {1.0};
  double keep = 1.0;
  for (const auto& p : pipes) {
    if (p.alpha < 0.0 || p.alpha > 1.0 || p.eta < 0.0 || p.eta >= 1.0 || p.gamma < 0) {
      throw Error(ErrorKind::InvalidConfig, "pipe kernel parameters out of range");
    }
    const double tap[2] = {(1.0 - p.eta) * p.alpha, (1.0 - p.eta) * (1.0 - p.alpha)};
    k.coeffs = convolve(k.coeffs, tap);
    keep *= 1.0 - p.eta;
    k.delay += p.gamma;
  }
  k.loss_offset = 1.0 - keep;
  k.pipe_count = static_cast<int>(pipes.size());
  return k;
}

/// One output of the aggregate model: a load supply temperature (STM) or a
/// source return temperature (RTM) as an affine map of lagged inputs.
///
/// `coeffs` is (gamma_cap+1) x inputs.size() and is laid out like the input
/// history: row 0 multiplies the oldest sample (lag gamma_cap), the last row
/// the current one (lag 0).
struct AgmMapping {
  std::string node;
  std::vector<std::string> inputs;
  Eigen::MatrixXd coeffs;
  double offset = 0.0;
  std::vector<int> delays;  ///< band start lag per input, -1 when unconnected
  std::vector<int> widths;  ///< band width per input, 0 when unconnected

  int gamma_cap() const { return static_cast<int>(coeffs.rows()) - 1; }

  double lag(std::size_t input, int i) const {
    return coeffs(gamma_cap() - i, static_cast<Eigen::Index>(input));
  }
  double& lag(std::size_t input, int i) {
    return coeffs(gamma_cap() - i, static_cast<Eigen::Index>(input));
  }

  double normalization_residual() const { return coeffs.sum() + offset - 1.0; }

  /// 1^T (A o H) 1 + b tau_amb for a history laid out like `coeffs`.
  double evaluate(const Eigen::MatrixXd& history, double tau_amb) const {
    if (history.rows() != coeffs.rows() || history.cols() != coeffs.cols()) {
      throw Error(ErrorKind::ShapeMismatch,
                  "history is " + std::to_string(history.rows()) + "x" +
                      std::to_string(history.cols()) + ", model expects " +
                      std::to_string(coeffs.rows()) + "x" + std::to_string(coeffs.cols()));
    }
    return (coeffs.array() * history.array()).sum() + offset * tau_amb;
  }
};

struct AgmModel {
  int gamma_cap = 0;
  std::vector<AgmMapping> stm;  ///< one per load, inputs = sources
  std::vector<AgmMapping> rtm;  ///< one per source, inputs = loads
};

/// Builds the aggregate model by placing each path kernel, scaled by its
/// flow fraction, at its transmission delay.
inline AgmModel derive_agm(const NetworkModel& net, const FlowDecomposition& flows) {
  const std::size_t ns = net.sources().size();
  const std::size_t nl = net.loads().size();
  if (static_cast<std::size_t>(flows.xi_s.rows()) != ns ||
      static_cast<std::size_t>(flows.xi_s.cols()) != nl) {
    throw Error(ErrorKind::ShapeMismatch, "flow decomposition does not match the network");
  }

  std::vector<std::vector<std::optional<PathKernel>>> kernels(ns, std::vector<std::optional<PathKernel>>(nl));
  int gamma_cap = 0;
  for (std::size_t k = 0; k < ns; ++k) {
    for (std::size_t v = 0; v < nl; ++v) {
      const auto path = net.path(net.sources()[k], net.loads()[v]);
      if (!path) continue;
      std::vector<PipeKernelParams> params;
      for (std::size_t j : *path) params.push_back(net.kernel_params()[j]);
      kernels[k][v] = path_kernel(params);
      gamma_cap = std::max(gamma_cap, kernels[k][v]->delay + kernels[k][v]->pipe_count);
    }
  }

  AgmModel agm;
  agm.gamma_cap = gamma_cap;
  const auto source_ids = net.source_ids();
  const auto load_ids = net.load_ids();

  auto place = [&](AgmMapping& m, std::size_t col, const PathKernel& kernel, double weight) {
    for (std::size_t i = 0; i < kernel.coeffs.size(); ++i) {
      m.lag(col, kernel.delay + static_cast<int>(i)) = weight * kernel.coeffs[i];
    }
    m.delays[col] = kernel.delay;
    m.widths[col] = static_cast<int>(kernel.coeffs.size());
    m.offset += weight * kernel.loss_offset;
  };

  for (std::size_t v = 0; v < nl; ++v) {
    AgmMapping m;
    m.node = load_ids[v];
    m.inputs = source_ids;
    m.coeffs = Eigen::MatrixXd::Zero(gamma_cap + 1, static_cast<Eigen::Index>(ns));
    m.delays.assign(ns, -1);
    m.widths.assign(ns, 0);
    for (std::size_t k = 0; k < ns; ++k) {
      if (kernels[k][v]) place(m, k, *kernels[k][v], flows.xi_s(k, v));
    }
    agm.stm.push_back(std::move(m));
  }
  for (std::size_t k = 0; k < ns; ++k) {
    AgmMapping m;
    m.node = source_ids[k];
    m.inputs = load_ids;
    m.coeffs = Eigen::MatrixXd::Zero(gamma_cap + 1, static_cast<Eigen::Index>(nl));
    m.delays.assign(nl, -1);
    m.widths.assign(nl, 0);
    for (std::size_t v = 0; v < nl; ++v) {
      if (kernels[k][v]) place(m, v, *kernels[k][v], flows.xi_r(k, v));
    }
    agm.rtm.push_back(std::move(m));
  }
  return agm;
}

inline AgmModel derive_agm(const NetworkModel& net) { return derive_agm(net, trace_flow_fractions(net)); }

namespace detail {
inline Eigen::VectorXd eval_mappings(const std::vector<AgmMapping>& maps,
                                     const Eigen::MatrixXd& history, double tau_amb) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(maps.size()));
  for (std::size_t i = 0; i < maps.size(); ++i) {
    out(static_cast<Eigen::Index>(i)) = maps[i].evaluate(history, tau_amb);
  }
  return out;
}
}  // namespace detail

/// Load supply temperatures from a (gamma_cap+1) x N_s source history
/// (row 0 oldest, last row current).
inline Eigen::VectorXd eval_stm(const AgmModel& agm, const Eigen::MatrixXd& source_history,
                                double tau_amb) {
  return detail::eval_mappings(agm.stm, source_history, tau_amb);
}

/// Source return temperatures from a (gamma_cap+1) x N_l load-return history.
inline Eigen::VectorXd eval_rtm(const AgmModel& agm, const Eigen::MatrixXd& load_return_history,
                                double tau_amb) {
  return detail::eval_mappings(agm.rtm, load_return_history, tau_amb);
}

/// History window ending at step t for the given input channels.
inline Eigen::MatrixXd history_window(const MeasurementSet& data,
                                      const std::vector<std::string>& inputs, Side side,
                                      std::size_t t, int gamma_cap) {
  if (t < static_cast<std::size_t>(gamma_cap) || t >= data.length()) {
    throw Error(ErrorKind::InsufficientData,
                "step " + std::to_string(t) + " has no full history of " +
                    std::to_string(gamma_cap + 1) + " samples");
  }
  Eigen::MatrixXd h(gamma_cap + 1, static_cast<Eigen::Index>(inputs.size()));
  for (std::size_t c = 0; c < inputs.size(); ++c) {
    const auto& series = data.channel(inputs[c], side);
    for (int r = 0; r <= gamma_cap; ++r) {
      h(r, static_cast<Eigen::Index>(c)) = series[t - static_cast<std::size_t>(gamma_cap - r)];
    }
  }
  return h;
}

/// Runs one mapping over a data set for t = gamma_cap .. T-1. The input side
/// is supply for STM mappings and return for RTM mappings.
inline std::vector<double> predict_series(const AgmMapping& m, const MeasurementSet& data,
                                          Side input_side) {
  std::vector<double> out;
  const int cap = m.gamma_cap();
  for (std::size_t t = static_cast<std::size_t>(cap); t < data.length(); ++t) {
    out.push_back(m.evaluate(history_window(data, m.inputs, input_side, t, cap), data.tau_amb));
  }
  return out;
}

struct SampleCounts {
  long target_samples = 0;
  long regressor_samples = 0;
};

/// Minimum number of noise-free samples that determine one mapping.
inline SampleCounts min_samples(long n_sources, long gamma_cap) {
  if (n_sources < 1 || gamma_cap < 0) {
    throw Error(ErrorKind::InvalidConfig, "min_samples needs n_sources >= 1 and gamma_cap >= 0");
  }
  const long target = (1 + gamma_cap) * n_sources + 1;
  return {target, gamma_cap + target};
}

/// Keeps, per input, the window of `m_trc + 1` consecutive lags with the
/// largest coefficient mass; the dropped mass moves into the ambient offset.
inline AgmModel truncate_agm(const AgmModel& agm, int m_trc) {
  if (m_trc < 0) throw Error(ErrorKind::InvalidConfig, "m_trc must be >= 0");
  AgmModel out = agm;
  auto trim = [m_trc](AgmMapping& m) {
    for (std::size_t c = 0; c < m.inputs.size(); ++c) {
      if (m.widths[c] <= m_trc + 1) continue;
      const int lo = m.delays[c];
      const int hi = lo + m.widths[c] - 1;
      int best = lo;
      double best_sum = -1.0;
      for (int s = lo; s + m_trc <= hi; ++s) {
        double sum = 0.0;
        for (int i = s; i <= s + m_trc; ++i) sum += m.lag(c, i);
        if (sum > best_sum) {
          best_sum = sum;
          best = s;
        }
      }
      for (int i = lo; i <= hi; ++i) {
        if (i < best || i > best + m_trc) {
          m.offset += m.lag(c, i);
          m.lag(c, i) = 0.0;
        }
      }
      m.delays[c] = best;
      m.widths[c] = m_trc + 1;
    }
  };
  for (auto& m : out.stm) trim(m);
  for (auto& m : out.rtm) trim(m);
  return out;
}

/// Inputs whose significant coefficients do not form one contiguous run of
/// lags. A coefficient is significant when its magnitude reaches
/// `rel_threshold` times the largest magnitude in the mapping.
inline std::vector<std::string> band_violations(const AgmMapping& m, double rel_threshold = 0.05) {
  std::vector<std::string> bad;
  const double peak = m.coeffs.size() > 0 ? m.coeffs.cwiseAbs().maxCoeff() : 0.0;
  if (!(peak > 0.0)) return bad;
  const double threshold = rel_threshold * peak;
  for (std::size_t c = 0; c < m.inputs.size(); ++c) {
    int first = -1, last = -1, count = 0;
    for (int i = 0; i <= m.gamma_cap(); ++i) {
      if (std::abs(m.lag(c, i)) >= threshold) {
        if (first < 0) first = i;
        last = i;
        ++count;
      }
    }
    if (count > 0 && last - first + 1 != count) bad.push_back(m.inputs[c]);
  }
  return bad;
}

// ---------------------------------------------------------------------------
// JSON form. Coefficients are stored column-major in the history layout.

inline nlohmann::json to_json(const AgmMapping& m) {
  std::vector<double> flat(m.coeffs.data(), m.coeffs.data() + m.coeffs.size());
  return {{"node", m.node},     {"inputs", m.inputs}, {"delays", m.delays},
          {"widths", m.widths}, {"offset", m.offset}, {"rows", m.coeffs.rows()},
          {"coeffs", flat}};
}

inline nlohmann::json to_json(const AgmModel& agm) {
  nlohmann::json doc;
  doc["gamma_cap"] = agm.gamma_cap;
  doc["stm"] = nlohmann::json::array();
  doc["rtm"] = nlohmann::json::array();
  for (const auto& m : agm.stm) doc["stm"].push_back(to_json(m));
  for (const auto& m : agm.rtm) doc["rtm"].push_back(to_json(m));
  return doc;
}

inline AgmMapping agm_mapping_from_json(const nlohmann::json& j, int gamma_cap) {
  AgmMapping m;
  try {
    m.node = j.at("node").get<std::string>();
    m.inputs = j.at("inputs").get<std::vector<std::string>>();
    m.delays = j.at("delays").get<std::vector<int>>();
    m.widths = j.at("widths").get<std::vector<int>>();
    m.offset = j.at("offset").get<double>();
    const auto flat = j.at("coeffs").get<std::vector<double>>();
    const auto rows = static_cast<Eigen::Index>(gamma_cap + 1);
    const auto cols = static_cast<Eigen::Index>(m.inputs.size());
    if (static_cast<Eigen::Index>(flat.size()) != rows * cols ||
        m.delays.size() != m.inputs.size() || m.widths.size() != m.inputs.size()) {
      throw Error(ErrorKind::ShapeMismatch, "mapping " + m.node + " has inconsistent sizes");
    }
    m.coeffs = Eigen::Map<const Eigen::MatrixXd>(flat.data(), rows, cols);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::ParseError, std::string("aggregate model: ") + e.what());
  }
  return m;
}

inline AgmModel agm_from_json(const nlohmann::json& doc) {
  AgmModel agm;
  try {
    agm.gamma_cap = doc.at("gamma_cap").get<int>();
    for (const auto& j : doc.at("stm")) agm.stm.push_back(agm_mapping_from_json(j, agm.gamma_cap));
    for (const auto& j : doc.at("rtm")) agm.rtm.push_back(agm_mapping_from_json(j, agm.gamma_cap));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::ParseError, std::string("aggregate model: ") + e.what());
  }
  return agm;
}

}  // namespace dhn
