#pragma once

// Test-matrix harness: simulate a network, corrupt the measurements, fit the
// aggregate model and score it against the derived one.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dhn/agm.hpp"
#include "dhn/error.hpp"
#include "dhn/estimation.hpp"
#include "dhn/fixtures.hpp"
#include "dhn/measurements.hpp"
#include "dhn/network.hpp"

namespace dhn {

/// Which channels receive salt-and-pepper outliers. Targets are the model
/// outputs: load supply and source return temperatures.
enum class OutlierChannels { Targets, All };

struct ExperimentTest {
  std::string id;
  std::string name;
  double gaussian_std = 0.0;  ///< relative
  double outlier_p = 0.0;
  bool normalization = true;
  bool sparsity = true;
  int order = 4;  ///< m_trc, or the lag reach beyond the largest delay when sparsity is off
  LossKind loss = LossKind::HME;
};

inline std::vector<ExperimentTest> default_tests() {
  return {
      {"T1", "noise-free", 0.0, 0.0, true, true, 4, LossKind::HME},
      {"T2", "gaussian 1%", 0.01, 0.0, true, true, 4, LossKind::HME},
      {"T3", "gaussian 1% + outliers 10%", 0.01, 0.10, true, true, 4, LossKind::HME},
      {"T4", "gaussian 1% + outliers 20%", 0.01, 0.20, true, true, 4, LossKind::HME},
      {"T5", "outliers 20%, normalization relaxed", 0.01, 0.20, false, true, 4, LossKind::HME},
      {"T6", "outliers 20%, sparsity relaxed", 0.01, 0.20, true, false, 6, LossKind::HME},
  };
}

struct SignalSpec {
  double supply_lo = 65.0, supply_hi = 100.0, supply_step = 2.0;
  double return_lo = 30.0, return_hi = 55.0, return_step = 1.5;
};

struct ExperimentSpec {
  std::optional<std::filesystem::path> network_path;  ///< default: built-in seven-node network
  int n_train = 400;
  int n_test = 100;
  int warmup = 50;
  std::uint64_t seed = 1;
  EstimatorConfig estimator;
  int candidate_radius = 2;
  OutlierChannels outlier_channels = OutlierChannels::Targets;
  double outlier_high = 3.0;
  double outlier_low = 0.3;
  SignalSpec signals;
  std::vector<ExperimentTest> tests = default_tests();

  void validate() const {
    if (n_train < 1 || n_test < 0 || warmup < 0) throw Error(ErrorKind::InvalidConfig, "bad sample counts");
    if (candidate_radius < 0) throw Error(ErrorKind::InvalidConfig, "candidate_radius must be >= 0");
    std::vector<std::string> ids;
    for (const auto& t : tests) {
      if (std::find(ids.begin(), ids.end(), t.id) != ids.end()) {
        throw Error(ErrorKind::InvalidConfig, "duplicate test id " + t.id);
      }
      ids.push_back(t.id);
    }
    estimator.validate();
  }
};

inline ExperimentSpec experiment_from_json(const nlohmann::json& j, const std::filesystem::path& base = {}) {
  ExperimentSpec s;
  try {
    if (j.contains("network")) {
      std::filesystem::path p = j.at("network").get<std::string>();
      s.network_path = p.is_absolute() || base.empty() ? p : base / p;
    }
    s.n_train = j.value("n_train", s.n_train);
    s.n_test = j.value("n_test", s.n_test);
    s.warmup = j.value("warmup", s.warmup);
    s.seed = j.value("seed", s.seed);
    s.candidate_radius = j.value("candidate_radius", s.candidate_radius);
    const std::string oc = j.value("outlier_channels", std::string("targets"));
    if (oc == "targets") {
      s.outlier_channels = OutlierChannels::Targets;
    } else if (oc == "all") {
      s.outlier_channels = OutlierChannels::All;
    } else {
      throw Error(ErrorKind::InvalidConfig, "outlier_channels must be 'targets' or 'all'");
    }
    if (j.contains("estimator")) {
      const auto& e = j.at("estimator");
      auto& c = s.estimator;
      c.m_trc = e.value("m_trc", c.m_trc);
      c.kappa = e.value("kappa", c.kappa);
      c.mad_factor = e.value("mad_factor", c.mad_factor);
      c.tol = e.value("tol", c.tol);
      c.max_iter = e.value("max_iter", c.max_iter);
      c.nonnegative = e.value("nonnegative", c.nonnegative);
      c.threads = e.value("threads", c.threads);
    }
    if (j.contains("tests")) {
      s.tests.clear();
      for (const auto& t : j.at("tests")) {
        ExperimentTest x;
        x.id = t.at("id").get<std::string>();
        x.name = t.value("name", x.id);
        x.gaussian_std = t.value("gaussian_std", 0.0);
        x.outlier_p = t.value("outlier_p", 0.0);
        x.normalization = t.value("normalization", true);
        x.sparsity = t.value("sparsity", true);
        x.order = t.value("order", s.estimator.m_trc);
        const std::string loss = t.value("loss", std::string("hme"));
        if (loss != "hme" && loss != "lse") throw Error(ErrorKind::InvalidConfig, "loss must be 'lse' or 'hme'");
        x.loss = loss == "lse" ? LossKind::LSE : LossKind::HME;
        s.tests.push_back(x);
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::InvalidConfig, std::string("experiment spec: ") + e.what());
  }
  s.validate();
  return s;
}

/// Clean boundary signals pushed through the node method; the first
/// `warmup` steps are dropped.
inline MeasurementSet generate_dataset(const NetworkModel& net, int samples, int warmup, std::uint64_t seed,
                                       const SignalSpec& sig = {}) {
  const int steps = samples + warmup;
  const auto ns = static_cast<int>(net.sources().size());
  const auto nl = static_cast<int>(net.loads().size());
  const auto supply = random_walk_signal(steps, ns, sig.supply_lo, sig.supply_hi, sig.supply_step, seed * 2 + 1);
  const auto ret = random_walk_signal(steps, nl, sig.return_lo, sig.return_hi, sig.return_step, seed * 2 + 2);
  const double start = 0.5 * (sig.supply_lo + sig.supply_hi);
  return simulate(net, supply, ret, steps, start).slice(static_cast<std::size_t>(warmup), static_cast<std::size_t>(samples));
}

inline ChannelFilter target_filter(const MeasurementSet& data, Side side) {
  ChannelFilter f;
  f.sides = {side};
  const auto& ids = side == Side::Supply ? data.loads : data.sources;
  f.nodes.insert(ids.begin(), ids.end());
  return f;
}

/// Gaussian noise on every channel, then outliers on the selected channels.
inline MeasurementSet corrupt(const MeasurementSet& clean, double gaussian_std, double outlier_p, std::uint64_t seed,
                              OutlierChannels channels, double high = 3.0, double low = 0.3) {
  MeasurementSet out = add_gaussian_noise(clean, gaussian_std, seed * 7 + 3);
  if (outlier_p <= 0.0) return out;
  if (channels == OutlierChannels::All) return add_salt_pepper(out, outlier_p, high, low, seed * 7 + 4);
  out = add_salt_pepper(out, outlier_p, high, low, seed * 7 + 5, target_filter(clean, Side::Supply));
  return add_salt_pepper(out, outlier_p, high, low, seed * 7 + 6, target_filter(clean, Side::Return));
}

/// Candidate delays centred on the derived model: [d - r, d + r] for
/// connected pairs and [0, 2r] otherwise.
inline DelayCandidates candidates_around(const AgmModel& truth, int radius) {
  DelayCandidates c;
  for (const auto& m : truth.stm) {
    for (std::size_t k = 0; k < m.inputs.size(); ++k) {
      const int d = m.delays[k];
      std::vector<int> set;
      const int lo = d < 0 ? 0 : std::max(0, d - radius);
      const int hi = d < 0 ? 2 * radius : d + radius;
      for (int x = lo; x <= hi; ++x) set.push_back(x);
      c.set(m.inputs[k], m.node, set);
    }
  }
  return c;
}

struct Estimate {
  std::vector<MappingEstimate> stm, rtm;
  AgmModel model;
};

inline Estimate estimate_agm(const MeasurementSet& train, const DelayCandidates& candidates,
                             const EstimatorConfig& config) {
  Estimate e;
  e.stm = estimate_stm(train, candidates, config);
  e.rtm = estimate_rtm(train, e.stm, config);
  e.model = to_agm_model(e.stm, e.rtm);
  return e;
}

/// Sparsity relaxed: every mapping is a dense fit over lags 0 .. max
/// candidate delay + order.
inline Estimate estimate_dense(const MeasurementSet& train, const DelayCandidates& candidates,
                               const EstimatorConfig& config, int order) {
  const int cap = candidates.max_delay() + order;
  Estimate e;
  for (const auto& load : train.loads) e.stm.push_back(coarse_fit(train, load, MappingRole::Supply, cap, config));
  for (const auto& src : train.sources) e.rtm.push_back(coarse_fit(train, src, MappingRole::Return, cap, config));
  e.model = to_agm_model(e.stm, e.rtm);
  return e;
}

/// Prediction and measurement aligned over t = gamma_cap .. T-1.
struct SeriesPair {
  std::vector<double> predicted, actual;
  std::size_t first_step = 0;
};

inline SeriesPair predict_against(const AgmMapping& m, const MeasurementSet& data, bool stm) {
  SeriesPair s;
  const Side side = stm ? Side::Supply : Side::Return;
  s.predicted = predict_series(m, data, side);
  const auto& y = data.channel(m.node, side);
  s.first_step = static_cast<std::size_t>(m.gamma_cap());
  s.actual.assign(y.begin() + static_cast<std::ptrdiff_t>(s.first_step), y.end());
  return s;
}

/// Metric that may be undefined for the data (constant or zero actuals).
inline nlohmann::json metric_or_null(double (*f)(const std::vector<double>&, const std::vector<double>&),
                                     const SeriesPair& s) {
  try {
    return f(s.predicted, s.actual);
  } catch (const Error&) {
    return nullptr;
  }
}

inline nlohmann::json metrics_json(const SeriesPair& s) {
  return {{"rmse", metric_or_null(rmse, s)}, {"mape", metric_or_null(mape, s)}, {"r2", metric_or_null(r_squared, s)}};
}

/// Largest |estimated - reference| over all lags and offsets.
inline double max_coefficient_error(const AgmMapping& est, const AgmMapping& ref) {
  double err = std::abs(est.offset - ref.offset);
  const int cap = std::max(est.gamma_cap(), ref.gamma_cap());
  for (std::size_t c = 0; c < est.inputs.size(); ++c) {
    for (int i = 0; i <= cap; ++i) {
      const double a = i <= est.gamma_cap() ? est.lag(c, i) : 0.0;
      const double b = i <= ref.gamma_cap() ? ref.lag(c, i) : 0.0;
      err = std::max(err, std::abs(a - b));
    }
  }
  return err;
}

inline nlohmann::json fit_report_json(const Estimate& e, const MeasurementSet& train, const MeasurementSet* test) {
  nlohmann::json out = nlohmann::json::array();
  auto one = [&](const MappingEstimate& est, const AgmMapping& m, bool stm) {
    nlohmann::json coeffs = nlohmann::json::array();
    for (std::size_t c = 0; c < m.inputs.size(); ++c) {
      for (int i = 0; i <= m.gamma_cap(); ++i) {
        if (m.lag(c, i) != 0.0 || (i >= est.delays[c] && i <= est.delays[c] + est.m_trc)) {
          coeffs.push_back({{"input", m.inputs[c]}, {"lag", i}, {"value", m.lag(c, i)}});
        }
      }
    }
    nlohmann::json j = {{"node", est.node},
                        {"mapping", stm ? "stm" : "rtm"},
                        {"loss", std::string(to_string(est.fit.loss))},
                        {"inputs", est.inputs},
                        {"delays", est.delays},
                        {"coefficients", coeffs},
                        {"offset", m.offset},
                        {"scale", est.fit.scale},
                        {"objective", est.fit.objective},
                        {"iterations", est.fit.iterations},
                        {"converged", est.fit.converged},
                        {"fits_evaluated", est.fits_evaluated},
                        {"normalization_residual", m.normalization_residual()},
                        {"band_violations", band_violations(m)}};
    j["train"] = metrics_json(predict_against(m, train, stm));
    if (test != nullptr && test->length() > static_cast<std::size_t>(m.gamma_cap())) {
      j["test"] = metrics_json(predict_against(m, *test, stm));
    }
    out.push_back(j);
  };
  for (std::size_t i = 0; i < e.stm.size(); ++i) one(e.stm[i], e.model.stm[i], true);
  for (std::size_t i = 0; i < e.rtm.size(); ++i) one(e.rtm[i], e.model.rtm[i], false);
  return out;
}

// ---------------------------------------------------------------------------
// Test matrix

struct TestRow {
  ExperimentTest test;
  bool ok = false;
  std::string message;
  double stm_rmse = 0.0, stm_r2_min = 0.0, rtm_rmse = 0.0, rtm_r2_min = 0.0;
  double max_coef_error = 0.0;    ///< against the derived model
  double max_offset_error = 0.0;  ///< |b_est - b_true| over all mappings
  double max_normalization_residual = 0.0;
  int band_violations = 0;
  std::vector<std::string> violating;  ///< "node:input"
};

struct PlotPoint {
  std::string test_id, node, side;
  std::size_t t = 0;
  double actual = 0.0, predicted = 0.0;
};

struct MatrixResult {
  std::vector<TestRow> rows;
  std::vector<PlotPoint> plot;
};

/// Held-out scores use the clean test data, so they measure the model and not
/// the test-set noise.
inline MatrixResult run_test_matrix(const NetworkModel& net, const ExperimentSpec& spec) {
  spec.validate();
  const AgmModel truth = derive_agm(net);
  const MeasurementSet clean = generate_dataset(net, spec.n_train + spec.n_test, spec.warmup, spec.seed, spec.signals);
  const auto [clean_train, clean_test] = split(clean, static_cast<std::size_t>(spec.n_train),
                                               static_cast<std::size_t>(spec.n_test));
  const DelayCandidates candidates = candidates_around(truth, spec.candidate_radius);

  MatrixResult result;
  for (const auto& test : spec.tests) {
    TestRow row;
    row.test = test;
    try {
      const MeasurementSet noisy = corrupt(clean, test.gaussian_std, test.outlier_p, spec.seed,
                                           spec.outlier_channels, spec.outlier_high, spec.outlier_low);
      const auto train = split(noisy, static_cast<std::size_t>(spec.n_train), static_cast<std::size_t>(spec.n_test)).first;
      EstimatorConfig cfg = spec.estimator;
      cfg.loss = test.loss;
      cfg.normalization = test.normalization;
      Estimate est;
      if (test.sparsity) {
        cfg.m_trc = test.order;
        est = estimate_agm(train, candidates, cfg);
      } else {
        est = estimate_dense(train, candidates, cfg, test.order);
      }

      double stm_ss = 0.0, rtm_ss = 0.0;
      row.stm_r2_min = row.rtm_r2_min = 1.0;
      auto score = [&](const AgmMapping& m, const AgmMapping& ref, bool stm) {
        row.max_coef_error = std::max(row.max_coef_error, max_coefficient_error(m, ref));
        row.max_offset_error = std::max(row.max_offset_error, std::abs(m.offset - ref.offset));
        row.max_normalization_residual = std::max(row.max_normalization_residual, std::abs(m.normalization_residual()));
        for (const auto& input : band_violations(m)) {
          ++row.band_violations;
          row.violating.push_back(m.node + ":" + input);
        }
        if (clean_test.length() <= static_cast<std::size_t>(m.gamma_cap())) return;
        const auto s = predict_against(m, clean_test, stm);
        const double r = rmse(s.predicted, s.actual);
        (stm ? stm_ss : rtm_ss) += r * r;
        const auto r2 = metric_or_null(r_squared, s);
        double& r2_min = stm ? row.stm_r2_min : row.rtm_r2_min;
        if (r2.is_number()) r2_min = std::min(r2_min, r2.get<double>());
        for (std::size_t i = 0; i < s.actual.size(); ++i) {
          result.plot.push_back({test.id, m.node, stm ? "supply" : "return", s.first_step + i, s.actual[i], s.predicted[i]});
        }
      };
      for (std::size_t v = 0; v < truth.stm.size(); ++v) score(est.model.stm[v], truth.stm[v], true);
      for (std::size_t k = 0; k < truth.rtm.size(); ++k) score(est.model.rtm[k], truth.rtm[k], false);
      row.stm_rmse = std::sqrt(stm_ss / static_cast<double>(std::max<std::size_t>(1, truth.stm.size())));
      row.rtm_rmse = std::sqrt(rtm_ss / static_cast<double>(std::max<std::size_t>(1, truth.rtm.size())));
      row.ok = true;
    } catch (const std::exception& e) {
      row.ok = false;
      row.message = e.what();
    }
    result.rows.push_back(std::move(row));
  }
  return result;
}

inline void write_summary_csv(const std::vector<TestRow>& rows, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::InvalidConfig, "cannot write " + path.string());
  out << "test_id,name,status,loss,gaussian_std,outlier_p,normalization,sparsity,order,stm_rmse,stm_r2_min,"
         "rtm_rmse,rtm_r2_min,max_coef_error,max_offset_error,max_normalization_residual,band_violations,message\n";
  auto quoted = [](const std::string& s) {
    std::string q = "\"";
    for (char ch : s) q += ch == '"' ? std::string("\"\"") : std::string(1, ch);
    return q + "\"";
  };
  for (const auto& r : rows) {
    const auto& t = r.test;
    out << t.id << ',' << quoted(t.name) << ',' << (r.ok ? "ok" : "failed") << ',' << to_string(t.loss) << ','
        << format_double(t.gaussian_std) << ',' << format_double(t.outlier_p) << ',' << (t.normalization ? "on" : "off")
        << ',' << (t.sparsity ? "on" : "off") << ',' << t.order << ',';
    if (r.ok) {
      out << format_double(r.stm_rmse) << ',' << format_double(r.stm_r2_min) << ',' << format_double(r.rtm_rmse) << ','
          << format_double(r.rtm_r2_min) << ',' << format_double(r.max_coef_error) << ','
          << format_double(r.max_offset_error) << ',' << format_double(r.max_normalization_residual) << ','
          << r.band_violations << ',';
    } else {
      out << ",,,,,,,,";
    }
    std::string msg = r.message;
    if (r.ok && !r.violating.empty()) {
      msg = "band violations:";
      for (const auto& v : r.violating) msg += " " + v;
    }
    out << quoted(msg) << '\n';
  }
}

inline void write_plot_csv(const std::vector<PlotPoint>& points, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::InvalidConfig, "cannot write " + path.string());
  out << "test_id,node_id,side,t,actual,predicted\n";
  for (const auto& p : points) {
    out << p.test_id << ',' << p.node << ',' << p.side << ',' << p.t << ',' << format_double(p.actual) << ','
        << format_double(p.predicted) << '\n';
  }
}

}  // namespace dhn
