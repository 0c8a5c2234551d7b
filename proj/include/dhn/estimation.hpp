#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "dhn/agm.hpp"
#include "dhn/error.hpp"
#include "dhn/measurements.hpp"
#include "dhn/qp.hpp"

namespace dhn {

enum class LossKind { LSE, HME };

inline std::string_view to_string(LossKind k) { return k == LossKind::LSE ? "lse" : "hme"; }

/// Which half of the aggregate model a regression belongs to.
enum class MappingRole { Supply, Return };

struct EstimatorConfig {
  int m_trc = 4;
  double kappa = 1.345;
  double mad_factor = 1.4826;
  double tol = 1e-9;  ///< on ||r_i - r_{i-1}|| relative to max(1, ||y||)
  int max_iter = 100;
  std::optional<double> scale_floor;  ///< default 1e-8 * max(1, RMS(y))
  bool normalization = true;
  bool nonnegative = false;
  bool allow_ridge = true;
  LossKind loss = LossKind::HME;
  std::optional<int> gamma_cap;  ///< regression window; default max candidate delay + m_trc
  unsigned threads = 1;

  void validate() const {
    if (m_trc < 0) throw Error(ErrorKind::InvalidConfig, "m_trc must be >= 0");
    if (!(kappa > 0.0)) throw Error(ErrorKind::InvalidConfig, "kappa must be > 0");
    if (!(tol > 0.0)) throw Error(ErrorKind::InvalidConfig, "tol must be > 0");
    if (!(mad_factor > 0.0)) throw Error(ErrorKind::InvalidConfig, "mad_factor must be > 0");
    if (max_iter < 0) throw Error(ErrorKind::InvalidConfig, "max_iter must be >= 0");
  }
};

struct ColumnLabel {
  std::string input;  ///< regressor node id; empty for the ambient column
  int lag = 0;        ///< absolute lag (delay + band index)
  bool ambient = false;
};

/// Truncated regression for one model output. Row r of `design` belongs to
/// step first_step + r; the last column holds tau_amb.
struct RegressionProblem {
  std::string node;
  MappingRole role = MappingRole::Supply;
  std::vector<std::string> inputs;
  std::vector<int> delays;
  int m_trc = 0;
  int gamma_cap = 0;
  std::size_t first_step = 0;
  bool normalized = true;
  Eigen::MatrixXd design;
  Eigen::VectorXd target;
  std::vector<ColumnLabel> columns;
  Eigen::VectorXd normalization;  ///< c with c'theta = 1
};

/// Regressors for one load (Supply role, inputs = source supply temperatures)
/// or one source (Return role, inputs = load return temperatures). Rows run
/// over t = gamma_cap .. T-1 so that every delay combination sees the same
/// samples.
inline RegressionProblem build_regression(const MeasurementSet& data, const std::string& node,
                                          MappingRole role, const std::vector<int>& delays,
                                          const EstimatorConfig& config, int gamma_cap) {
  config.validate();
  RegressionProblem p;
  p.node = node;
  p.role = role;
  p.inputs = role == MappingRole::Supply ? data.sources : data.loads;
  p.delays = delays;
  p.m_trc = config.m_trc;
  p.gamma_cap = gamma_cap;
  p.normalized = config.normalization;
  if (p.inputs.empty()) {
    throw Error(ErrorKind::InvalidConfig, "measurement set does not name its sources and loads");
  }
  if (delays.size() != p.inputs.size()) {
    throw Error(ErrorKind::ShapeMismatch, "need one delay per regressor node");
  }
  for (int d : delays) {
    if (d < 0 || d + config.m_trc > gamma_cap) {
      throw Error(ErrorKind::InvalidConfig, "delay " + std::to_string(d) + " outside [0, " +
                                                std::to_string(gamma_cap - config.m_trc) + "]");
    }
  }

  const Side out_side = role == MappingRole::Supply ? Side::Supply : Side::Return;
  const Side in_side = out_side;
  const auto& y = data.channel(node, out_side);
  std::vector<const std::vector<double>*> x;
  for (const auto& id : p.inputs) x.push_back(&data.channel(id, in_side));

  const std::size_t band = static_cast<std::size_t>(config.m_trc) + 1;
  const std::size_t cols = p.inputs.size() * band + 1;
  const std::size_t length = data.length();
  const std::size_t first = static_cast<std::size_t>(gamma_cap);
  const std::size_t rows = length > first ? length - first : 0;
  if (rows < cols) {
    throw Error(ErrorKind::InsufficientData,
                "channel " + node + "/" + std::string(to_string(out_side)) + " has " +
                    std::to_string(length) + " samples; need at least " +
                    std::to_string(first + cols) + " (" + std::to_string(cols) +
                    " regression rows after a window of " + std::to_string(first) + ")");
  }

  p.first_step = first;
  p.design.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  p.target.resize(static_cast<Eigen::Index>(rows));
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t t = first + r;
    std::size_t c = 0;
    for (std::size_t k = 0; k < x.size(); ++k) {
      for (std::size_t i = 0; i < band; ++i, ++c) {
        p.design(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
            (*x[k])[t - static_cast<std::size_t>(delays[k]) - i];
      }
    }
    p.design(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = data.tau_amb;
    p.target(static_cast<Eigen::Index>(r)) = y[t];
  }
  for (std::size_t k = 0; k < x.size(); ++k) {
    for (std::size_t i = 0; i < band; ++i) {
      p.columns.push_back({p.inputs[k], delays[k] + static_cast<int>(i), false});
    }
  }
  p.columns.push_back({"", 0, true});
  p.normalization = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(cols));
  return p;
}

struct WlsOptions {
  bool allow_ridge = true;
  bool nonnegative = false;
};

namespace detail {

/// Nonnegative variant through the QP solver.
inline Eigen::VectorXd solve_nonnegative_wls(const RegressionProblem& p, const Eigen::VectorXd& w) {
  const Eigen::Index n = p.design.cols();
  const Eigen::MatrixXd wx = w.cwiseSqrt().asDiagonal() * p.design;
  const Eigen::VectorXd wy = w.cwiseSqrt().cwiseProduct(p.target);
  qp::Problem prob;
  prob.P = 2.0 * wx.transpose() * wx;
  prob.q = -2.0 * wx.transpose() * wy;
  const Eigen::Index m = n + (p.normalized ? 1 : 0);
  prob.A = Eigen::MatrixXd::Zero(m, n);
  prob.A.topRows(n) = Eigen::MatrixXd::Identity(n, n);
  prob.l = Eigen::VectorXd::Zero(m);
  prob.u = Eigen::VectorXd::Constant(m, qp::kInf);
  if (p.normalized) {
    prob.A.row(n) = p.normalization.transpose();
    prob.l(n) = prob.u(n) = 1.0;
  }
  return qp::solve(prob).x;
}

}  // namespace detail

/// Weighted least squares with the normalization equality, solved through
/// the stationarity system [2X'WX c; c' 0]. Columns are equilibrated first
/// and the solution is refined twice against the unsquared residual.
inline Eigen::VectorXd solve_constrained_wls(const RegressionProblem& p, const Eigen::VectorXd& weights,
                                             const WlsOptions& opt = {}) {
  const Eigen::Index rows = p.design.rows();
  const Eigen::Index n = p.design.cols();
  if (weights.size() != rows) {
    throw Error(ErrorKind::ShapeMismatch, "weights must have one entry per regression row");
  }
  if ((weights.array() < 0.0).any()) throw Error(ErrorKind::InvalidConfig, "negative weight");
  if (opt.nonnegative) return detail::solve_nonnegative_wls(p, weights);

  const Eigen::VectorXd sw = weights.cwiseSqrt();
  const Eigen::MatrixXd wx = sw.asDiagonal() * p.design;
  const Eigen::VectorXd wy = sw.cwiseProduct(p.target);

  Eigen::VectorXd scale(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const double norm = wx.col(j).norm();
    scale(j) = norm > 0.0 ? 1.0 / norm : 1.0;
  }
  const Eigen::MatrixXd xs = wx * scale.asDiagonal();
  const Eigen::VectorXd cs = scale.cwiseProduct(p.normalization);
  const Eigen::Index dim = p.normalized ? n + 1 : n;

  Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(dim, dim);
  kkt.topLeftCorner(n, n) = 2.0 * xs.transpose() * xs;
  if (p.normalized) {
    kkt.block(0, n, n, 1) = cs;
    kkt.block(n, 0, 1, n) = cs.transpose();
  }

  Eigen::FullPivLU<Eigen::MatrixXd> lu(kkt);
  if (lu.rank() < dim) {
    const double mean_diag = kkt.topLeftCorner(n, n).diagonal().mean();
    if (!opt.allow_ridge || !(mean_diag > 0.0)) {
      throw Error(ErrorKind::DegenerateProblem,
                  "regression for " + p.node + " is rank deficient (rank " +
                      std::to_string(lu.rank()) + " of " + std::to_string(dim) + ")");
    }
    kkt.topLeftCorner(n, n).diagonal().array() += 1e-10 * mean_diag;
    lu.compute(kkt);
    if (lu.rank() < dim) {
      throw Error(ErrorKind::DegenerateProblem,
                  "regression for " + p.node + " stays rank deficient after ridge");
    }
  }

  auto rhs_for = [&](const Eigen::VectorXd& residual, double constraint_gap) {
    Eigen::VectorXd rhs(dim);
    rhs.head(n) = 2.0 * xs.transpose() * residual;
    if (p.normalized) rhs(n) = constraint_gap;
    return rhs;
  };
  Eigen::VectorXd theta_s = Eigen::VectorXd::Zero(n);
  for (int pass = 0; pass < 3; ++pass) {
    const Eigen::VectorXd residual = wy - xs * theta_s;
    const double gap = p.normalized ? 1.0 - cs.dot(theta_s) : 0.0;
    Eigen::VectorXd step = lu.solve(rhs_for(residual, gap));
    if (!step.allFinite()) {
      throw Error(ErrorKind::DegenerateProblem, "stationarity system produced non-finite values");
    }
    theta_s += step.head(n);
  }
  return scale.cwiseProduct(theta_s);
}

inline double median_inplace(std::vector<double>& v) {
  const std::size_t n = v.size();
  const std::size_t mid = n / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  const double upper = v[mid];
  if (n % 2 == 1) return upper;
  const double lower = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lower + upper);
}

/// sigma = max(k * median(|r - median(r)|), floor)
inline double mad_scale(const Eigen::VectorXd& residuals, double mad_factor, double scale_floor) {
  if (residuals.size() == 0) throw Error(ErrorKind::InvalidConfig, "MAD of an empty vector");
  std::vector<double> v(residuals.data(), residuals.data() + residuals.size());
  const double med = median_inplace(v);
  for (Eigen::Index i = 0; i < residuals.size(); ++i) v[static_cast<std::size_t>(i)] = std::abs(residuals(i) - med);
  return std::max(mad_factor * median_inplace(v), scale_floor);
}

inline double huber_weight(double ratio, double kappa) { return ratio <= kappa ? 1.0 : kappa / ratio; }

inline double huber_rho(double u, double kappa) {
  const double a = std::abs(u);
  return a <= kappa ? 0.5 * a * a : kappa * a - 0.5 * kappa * kappa;
}

inline double huber_objective(const Eigen::VectorXd& residuals, double scale, double kappa) {
  if (!(scale > 0.0)) throw Error(ErrorKind::InvalidConfig, "scale must be positive");
  double sum = 0.0;
  for (Eigen::Index t = 0; t < residuals.size(); ++t) sum += huber_rho(residuals(t) / scale, kappa);
  return sum;
}

struct FitResult {
  Eigen::VectorXd theta;
  Eigen::VectorXd residuals;
  Eigen::VectorXd weights;
  double scale = 0.0;
  double objective = 0.0;  ///< Huber objective in scale units (HME) or 1/2 r'r (LSE)
  double score = 0.0;      ///< objective in temperature units, used to rank delay combinations
  int iterations = 0;
  bool converged = false;
  LossKind loss = LossKind::HME;
};

/// Raised when IRLS hits max_iter; carries the last iterate.
class NotConvergedError : public Error {
 public:
  explicit NotConvergedError(FitResult last)
      : Error(ErrorKind::NotConverged,
              "IRLS stopped after " + std::to_string(last.iterations) + " iterations"),
        last_(std::move(last)) {}
  const FitResult& last() const { return last_; }

 private:
  FitResult last_;
};

inline double default_scale_floor(const RegressionProblem& p) {
  const double rms = p.target.size() > 0 ? p.target.norm() / std::sqrt(static_cast<double>(p.target.size())) : 0.0;
  return 1e-8 * std::max(1.0, rms);
}

/// Huber M-estimation by iteratively reweighted least squares, started from
/// the least-squares fit. For LossKind::LSE only the first solve runs.
inline FitResult irls_fit(const RegressionProblem& p, const EstimatorConfig& config) {
  config.validate();
  const WlsOptions opt{config.allow_ridge, config.nonnegative};
  const double floor = config.scale_floor.value_or(default_scale_floor(p));
  const Eigen::Index rows = p.design.rows();

  FitResult fit;
  fit.loss = config.loss;
  fit.weights = Eigen::VectorXd::Ones(rows);
  fit.theta = solve_constrained_wls(p, fit.weights, opt);
  fit.residuals = p.target - p.design * fit.theta;
  fit.scale = mad_scale(fit.residuals, config.mad_factor, floor);

  if (config.loss == LossKind::LSE) {
    fit.objective = 0.5 * fit.residuals.squaredNorm();
    fit.score = fit.objective;
    fit.converged = true;
    return fit;
  }

  const double stop = config.tol * std::max(1.0, p.target.norm());
  for (int it = 1; it <= config.max_iter; ++it) {
    for (Eigen::Index t = 0; t < rows; ++t) {
      fit.weights(t) = huber_weight(std::abs(fit.residuals(t) / fit.scale), config.kappa);
    }
    Eigen::VectorXd theta = solve_constrained_wls(p, fit.weights, opt);
    Eigen::VectorXd residuals = p.target - p.design * theta;
    const double change = (residuals - fit.residuals).norm();
    fit.theta = std::move(theta);
    fit.residuals = std::move(residuals);
    fit.scale = mad_scale(fit.residuals, config.mad_factor, floor);
    fit.iterations = it;
    if (change <= stop) {
      fit.converged = true;
      break;
    }
  }
  fit.objective = huber_objective(fit.residuals, fit.scale, config.kappa);
  fit.score = fit.scale * fit.scale * fit.objective;
  if (!fit.converged) throw NotConvergedError(std::move(fit));
  return fit;
}

// ---------------------------------------------------------------------------
// Delay enumeration

struct EnumerationCounts {
  std::uint64_t k_s = 0;
  std::uint64_t k_r = 0;
  std::uint64_t k_sum = 0;
};

/// Estimator solve counts for exhaustive STM enumeration (k_s), exhaustive
/// RTM enumeration (k_r) and the staged scheme (k_sum = k_s + n_loads).
/// `candidate_sizes[k][v]` is |Delta^{k,v}|.
inline EnumerationCounts enumeration_counts(std::size_t n_sources, std::size_t n_loads,
                                            const std::vector<std::vector<std::size_t>>& candidate_sizes) {
  if (n_sources == 0 || n_loads == 0 || candidate_sizes.size() != n_sources) {
    throw Error(ErrorKind::InvalidConfig, "enumeration_counts needs positive counts and one row per source");
  }
  EnumerationCounts c;
  for (std::size_t v = 0; v < n_loads; ++v) {
    std::uint64_t prod = 1;
    for (std::size_t k = 0; k < n_sources; ++k) prod *= candidate_sizes[k].at(v);
    c.k_s += prod;
  }
  for (std::size_t k = 0; k < n_sources; ++k) {
    std::uint64_t prod = 1;
    for (std::size_t v = 0; v < n_loads; ++v) prod *= candidate_sizes[k].at(v);
    c.k_r += prod;
  }
  c.k_sum = c.k_s + n_loads;
  return c;
}

inline EnumerationCounts enumeration_counts(std::size_t n_sources, std::size_t n_loads, std::size_t uniform_size) {
  return enumeration_counts(n_sources, n_loads,
                            std::vector<std::vector<std::size_t>>(n_sources, std::vector<std::size_t>(n_loads, uniform_size)));
}

/// Candidate delay sets keyed by (source id, load id).
class DelayCandidates {
 public:
  void set(const std::string& source, const std::string& load, std::vector<int> delays) {
    if (delays.empty()) throw Error(ErrorKind::InvalidConfig, "empty delay candidate set");
    for (std::size_t i = 0; i < delays.size(); ++i) {
      if (delays[i] < 0 || (i > 0 && delays[i] <= delays[i - 1])) {
        throw Error(ErrorKind::InvalidConfig,
                    "delay candidates for " + source + "->" + load + " must be nonnegative and strictly increasing");
      }
    }
    sets_[{source, load}] = std::move(delays);
  }

  const std::vector<int>& get(const std::string& source, const std::string& load) const {
    auto it = sets_.find({source, load});
    if (it == sets_.end()) {
      throw Error(ErrorKind::InvalidConfig, "no delay candidates for " + source + "->" + load);
    }
    return it->second;
  }

  /// Same range [lo, hi] for every pair.
  static DelayCandidates uniform(const std::vector<std::string>& sources, const std::vector<std::string>& loads,
                                 int lo, int hi) {
    if (lo < 0 || hi < lo) throw Error(ErrorKind::InvalidConfig, "invalid delay range");
    DelayCandidates c;
    std::vector<int> range;
    for (int d = lo; d <= hi; ++d) range.push_back(d);
    for (const auto& s : sources) {
      for (const auto& l : loads) c.set(s, l, range);
    }
    return c;
  }

  int max_delay() const {
    int m = 0;
    for (const auto& [key, set] : sets_) m = std::max(m, set.back());
    return m;
  }

 private:
  std::map<std::pair<std::string, std::string>, std::vector<int>> sets_;
};

/// Result for one model output.
struct MappingEstimate {
  std::string node;
  MappingRole role = MappingRole::Supply;
  std::vector<std::string> inputs;
  std::vector<int> delays;
  int m_trc = 0;
  int gamma_cap = 0;
  FitResult fit;
  std::size_t fits_evaluated = 0;
};

namespace detail {

/// Runs f(i) for i in [0, n) on up to `threads` workers. Results are written
/// by index so the caller's reduction order is fixed.
template <typename F>
void parallel_for(std::size_t n, unsigned threads, F&& f) {
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(n)));
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < threads; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) f(i);
    });
  }
  for (auto& t : pool) t.join();
}

inline std::optional<FitResult> try_fit(const RegressionProblem& p, const EstimatorConfig& config) {
  try {
    return irls_fit(p, config);
  } catch (const NotConvergedError& e) {
    return e.last();
  } catch (const Error&) {
    return std::nullopt;
  }
}

inline int resolve_gamma_cap(const EstimatorConfig& config, int max_delay) {
  const int needed = max_delay + config.m_trc;
  if (config.gamma_cap) {
    if (*config.gamma_cap < needed) {
      throw Error(ErrorKind::InvalidConfig, "gamma_cap " + std::to_string(*config.gamma_cap) +
                                                " is below max candidate delay + m_trc = " + std::to_string(needed));
    }
    return *config.gamma_cap;
  }
  return needed;
}

}  // namespace detail

/// Supply-side estimation: for every load, fit each combination of candidate
/// delays and keep the one with the lowest score (ties go to the
/// lexicographically smallest delays).
inline std::vector<MappingEstimate> estimate_stm(const MeasurementSet& data, const DelayCandidates& candidates,
                                                 const EstimatorConfig& config) {
  config.validate();
  const int gamma_cap = detail::resolve_gamma_cap(config, candidates.max_delay());
  std::vector<MappingEstimate> out;
  for (const auto& load : data.loads) {
    std::vector<const std::vector<int>*> sets;
    std::size_t combos = 1;
    for (const auto& src : data.sources) {
      sets.push_back(&candidates.get(src, load));
      combos *= sets.back()->size();
    }
    auto combo_at = [&](std::size_t index) {
      std::vector<int> d(sets.size());
      for (std::size_t k = sets.size(); k-- > 0;) {
        d[k] = (*sets[k])[index % sets[k]->size()];
        index /= sets[k]->size();
      }
      return d;
    };

    std::vector<std::optional<FitResult>> fits(combos);
    std::string first_error;
    detail::parallel_for(combos, config.threads, [&](std::size_t i) {
      try {
        fits[i] = detail::try_fit(build_regression(data, load, MappingRole::Supply, combo_at(i), config, gamma_cap),
                                  config);
      } catch (const Error&) {
        fits[i] = std::nullopt;
      }
    });

    std::optional<std::size_t> best;
    for (std::size_t i = 0; i < combos; ++i) {
      if (!fits[i] || !std::isfinite(fits[i]->score)) continue;
      if (!best || fits[i]->score < fits[*best]->score) best = i;
    }
    if (!best) {
      // Surface the reason from the first combination.
      build_regression(data, load, MappingRole::Supply, combo_at(0), config, gamma_cap);
      throw Error(ErrorKind::DegenerateProblem, "no delay combination could be fitted for load " + load);
    }
    MappingEstimate e;
    e.node = load;
    e.role = MappingRole::Supply;
    e.inputs = data.sources;
    e.delays = combo_at(*best);
    e.m_trc = config.m_trc;
    e.gamma_cap = gamma_cap;
    e.fit = std::move(*fits[*best]);
    e.fits_evaluated = combos;
    out.push_back(std::move(e));
  }
  return out;
}

/// Return-side estimation with the band positions carried over from the
/// supply-side delays: one fit per source, no enumeration.
inline std::vector<MappingEstimate> estimate_rtm(const MeasurementSet& data, const std::vector<MappingEstimate>& stm,
                                                 const EstimatorConfig& config) {
  config.validate();
  std::map<std::pair<std::string, std::string>, int> delay;  // (source, load) -> delta
  int max_delay = 0;
  for (const auto& e : stm) {
    for (std::size_t k = 0; k < e.inputs.size(); ++k) {
      delay[{e.inputs[k], e.node}] = e.delays[k];
      max_delay = std::max(max_delay, e.delays[k]);
    }
  }
  int gamma_cap = detail::resolve_gamma_cap(config, max_delay);
  if (!stm.empty() && !config.gamma_cap) gamma_cap = std::max(gamma_cap, stm.front().gamma_cap);

  std::vector<MappingEstimate> out;
  for (const auto& src : data.sources) {
    std::vector<int> d;
    for (const auto& load : data.loads) {
      auto it = delay.find({src, load});
      if (it == delay.end()) {
        throw Error(ErrorKind::InvalidConfig, "supply-side estimate lacks a delay for " + src + "->" + load);
      }
      d.push_back(it->second);
    }
    const auto problem = build_regression(data, src, MappingRole::Return, d, config, gamma_cap);
    MappingEstimate e;
    e.node = src;
    e.role = MappingRole::Return;
    e.inputs = data.loads;
    e.delays = d;
    e.m_trc = config.m_trc;
    e.gamma_cap = gamma_cap;
    try {
      e.fit = irls_fit(problem, config);
    } catch (const NotConvergedError& err) {
      e.fit = err.last();
    }
    e.fits_evaluated = 1;
    out.push_back(std::move(e));
  }
  return out;
}

/// Places an estimate's band coefficients into the dense model layout.
inline AgmMapping to_agm_mapping(const MappingEstimate& e, int gamma_cap) {
  if (gamma_cap < e.gamma_cap) throw Error(ErrorKind::InvalidConfig, "gamma_cap smaller than estimate window");
  AgmMapping m;
  m.node = e.node;
  m.inputs = e.inputs;
  m.coeffs = Eigen::MatrixXd::Zero(gamma_cap + 1, static_cast<Eigen::Index>(e.inputs.size()));
  m.delays = e.delays;
  m.widths.assign(e.inputs.size(), e.m_trc + 1);
  const int band = e.m_trc + 1;
  for (std::size_t k = 0; k < e.inputs.size(); ++k) {
    for (int i = 0; i < band; ++i) {
      m.lag(k, e.delays[k] + i) = e.fit.theta(static_cast<Eigen::Index>(k) * band + i);
    }
  }
  m.offset = e.fit.theta(e.fit.theta.size() - 1);
  return m;
}

inline AgmModel to_agm_model(const std::vector<MappingEstimate>& stm, const std::vector<MappingEstimate>& rtm) {
  AgmModel agm;
  for (const auto* list : {&stm, &rtm}) {
    for (const auto& e : *list) agm.gamma_cap = std::max(agm.gamma_cap, e.gamma_cap);
  }
  for (const auto& e : stm) agm.stm.push_back(to_agm_mapping(e, agm.gamma_cap));
  for (const auto& e : rtm) agm.rtm.push_back(to_agm_mapping(e, agm.gamma_cap));
  return agm;
}

/// Band-free fit over lags 0..gamma_cap, used to bracket the delays before
/// enumeration.
inline MappingEstimate coarse_fit(const MeasurementSet& data, const std::string& node, MappingRole role,
                                  int gamma_cap, EstimatorConfig config) {
  config.m_trc = gamma_cap;
  const auto& inputs = role == MappingRole::Supply ? data.sources : data.loads;
  const std::vector<int> zeros(inputs.size(), 0);
  const auto problem = build_regression(data, node, role, zeros, config, gamma_cap);
  MappingEstimate e;
  e.node = node;
  e.role = role;
  e.inputs = inputs;
  e.delays = zeros;
  e.m_trc = gamma_cap;
  e.gamma_cap = gamma_cap;
  try {
    e.fit = irls_fit(problem, config);
  } catch (const NotConvergedError& err) {
    e.fit = err.last();
  }
  e.fits_evaluated = 1;
  return e;
}

/// Delay ranges suggested by a coarse fit: for each input, every start lag
/// whose band of width m_trc+1 covers all coefficients at least
/// `rel_threshold` times the column's largest magnitude.
inline std::vector<std::vector<int>> suggest_delays(const AgmMapping& coarse, int m_trc, double rel_threshold = 0.05) {
  std::vector<std::vector<int>> out;
  for (std::size_t c = 0; c < coarse.inputs.size(); ++c) {
    double peak = 0.0;
    for (int i = 0; i <= coarse.gamma_cap(); ++i) peak = std::max(peak, std::abs(coarse.lag(c, i)));
    int first = -1, last = -1;
    for (int i = 0; i <= coarse.gamma_cap(); ++i) {
      if (peak > 0.0 && std::abs(coarse.lag(c, i)) >= rel_threshold * peak) {
        if (first < 0) first = i;
        last = i;
      }
    }
    std::vector<int> set;
    if (first < 0) {
      set.push_back(0);
    } else {
      const int lo = std::max(0, last - m_trc);
      const int hi = std::max(lo, first);
      for (int d = lo; d <= hi; ++d) set.push_back(d);
    }
    out.push_back(std::move(set));
  }
  return out;
}

}  // namespace dhn
