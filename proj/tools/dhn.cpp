// dhn: command-line front end for simulation, aggregate-model derivation,
// estimation, evaluation, perturbation, dispatch and the test matrix.

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "dhn/agm.hpp"
#include "dhn/dispatch.hpp"
#include "dhn/error.hpp"
#include "dhn/estimation.hpp"
#include "dhn/experiments.hpp"
#include "dhn/fixtures.hpp"
#include "dhn/measurements.hpp"
#include "dhn/network.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInternal = 1;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;

int exit_code_for(dhn::ErrorKind kind) {
  using K = dhn::ErrorKind;
  switch (kind) {
    case K::InsufficientData: return kExitData;
    case K::NotConverged:
    case K::DegenerateProblem:
    case K::Infeasible:
    case K::MaxIterations:
    case K::MapeUndefined:
    case K::R2Undefined: return kExitInternal;
    default: return kExitConfig;
  }
}

struct Globals {
  std::uint64_t seed = 1;
  fs::path out_dir = ".";
  std::string config;
  bool no_timestamp = false;
};

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw dhn::Error(dhn::ErrorKind::InvalidConfig, "cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw dhn::Error(dhn::ErrorKind::ParseError, path.string() + ": " + e.what());
  }
}

json config_doc(const Globals& g) { return g.config.empty() ? json::object() : read_json(g.config); }

dhn::NetworkModel load_network(const std::string& arg) {
  if (arg == "builtin:seven-node") return dhn::seven_node_network();
  return dhn::build_network(read_json(arg));
}

fs::path out_path(const Globals& g, const std::string& name) {
  fs::create_directories(g.out_dir);
  return g.out_dir / name;
}

void stamp(json& doc, const Globals& g) {
  if (g.no_timestamp) return;
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  doc["generated_at"] = buf;
}

void write_json(const json& doc, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw dhn::Error(dhn::ErrorKind::InvalidConfig, "cannot write " + path.string());
  out << doc.dump(2) << '\n';
}

dhn::EstimatorConfig estimator_from(const json& doc, dhn::EstimatorConfig c) {
  if (!doc.contains("estimator")) return c;
  const auto& e = doc.at("estimator");
  c.m_trc = e.value("m_trc", c.m_trc);
  c.kappa = e.value("kappa", c.kappa);
  c.mad_factor = e.value("mad_factor", c.mad_factor);
  c.tol = e.value("tol", c.tol);
  c.max_iter = e.value("max_iter", c.max_iter);
  c.normalization = e.value("normalization", c.normalization);
  c.nonnegative = e.value("nonnegative", c.nonnegative);
  c.threads = e.value("threads", c.threads);
  if (e.contains("scale_floor")) c.scale_floor = e.at("scale_floor").get<double>();
  if (e.contains("loss")) c.loss = e.at("loss").get<std::string>() == "lse" ? dhn::LossKind::LSE : dhn::LossKind::HME;
  return c;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

// ---------------------------------------------------------------------------
// simulate

struct SimulateArgs {
  std::string network;
  std::string boundary;
  std::string signal = "random-walk";
  int steps = 500;
  int warmup = 50;
  double supply_lo = 65.0, supply_hi = 100.0, supply_step = 2.0;
  double return_lo = 30.0, return_hi = 55.0, return_step = 1.5;
  int step_at = 10;
  double period = 24.0;
  std::optional<double> initial_temp;
  std::string output = "measurements.csv";
};

Eigen::MatrixXd boundary_block(const dhn::MeasurementSet& b, const std::vector<std::string>& ids, dhn::Side side,
                               int steps) {
  Eigen::MatrixXd m(steps, static_cast<Eigen::Index>(ids.size()));
  for (std::size_t c = 0; c < ids.size(); ++c) {
    const auto& series = b.channel(ids[c], side);
    if (static_cast<int>(series.size()) < steps) {
      throw dhn::Error(dhn::ErrorKind::HorizonTooShort, "boundary series for " + ids[c] + " has " +
                                                            std::to_string(series.size()) + " steps, need " +
                                                            std::to_string(steps));
    }
    for (int t = 0; t < steps; ++t) m(t, static_cast<Eigen::Index>(c)) = series[static_cast<std::size_t>(t)];
  }
  return m;
}

int cmd_simulate(const Globals& g, const SimulateArgs& a) {
  const auto net = load_network(a.network);
  const int total = a.steps + a.warmup;
  const int ns = static_cast<int>(net.sources().size());
  const int nl = static_cast<int>(net.loads().size());
  Eigen::MatrixXd supply, ret;
  if (!a.boundary.empty()) {
    const auto b = dhn::read_csv(a.boundary, net.constants().dt, net.constants().tau_amb);
    supply = boundary_block(b, net.source_ids(), dhn::Side::Supply, total);
    ret = boundary_block(b, net.load_ids(), dhn::Side::Return, total);
  } else if (a.signal == "constant") {
    supply = dhn::constant_signal(total, ns, a.supply_hi);
    ret = dhn::constant_signal(total, nl, a.return_lo);
  } else if (a.signal == "step") {
    supply = dhn::step_signal(total, ns, a.warmup + a.step_at, a.supply_lo, a.supply_hi);
    ret = dhn::constant_signal(total, nl, a.return_lo);
  } else if (a.signal == "sine") {
    supply = dhn::sine_signal(total, ns, 0.5 * (a.supply_lo + a.supply_hi), 0.5 * (a.supply_hi - a.supply_lo), a.period);
    ret = dhn::sine_signal(total, nl, 0.5 * (a.return_lo + a.return_hi), 0.5 * (a.return_hi - a.return_lo), a.period);
  } else if (a.signal == "random-walk") {
    supply = dhn::random_walk_signal(total, ns, a.supply_lo, a.supply_hi, a.supply_step, g.seed * 2 + 1);
    ret = dhn::random_walk_signal(total, nl, a.return_lo, a.return_hi, a.return_step, g.seed * 2 + 2);
  } else {
    throw dhn::Error(dhn::ErrorKind::InvalidConfig, "unknown signal '" + a.signal + "'");
  }
  const double init = a.initial_temp.value_or(supply.rows() > 0 ? supply(0, 0) : a.supply_hi);
  const auto data = dhn::simulate(net, supply, ret, total, init)
                        .slice(static_cast<std::size_t>(a.warmup), static_cast<std::size_t>(a.steps));
  const auto path = out_path(g, a.output);
  dhn::write_csv(data, path);
  std::cout << "wrote " << path.string() << " (" << data.length() << " steps, " << data.channels.size()
            << " channels)\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// derive-agm

struct DeriveArgs {
  std::string network;
  std::optional<int> m_trc;
  std::string output = "agm.json";
};

int cmd_derive(const Globals& g, const DeriveArgs& a) {
  const auto net = load_network(a.network);
  const auto flows = dhn::trace_flow_fractions(net);
  auto agm = dhn::derive_agm(net, flows);
  if (a.m_trc) agm = dhn::truncate_agm(agm, *a.m_trc);
  json doc = dhn::to_json(agm);
  auto matrix = [](const Eigen::MatrixXd& m) {
    json rows = json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      json row = json::array();
      for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
      rows.push_back(row);
    }
    return rows;
  };
  doc["flows"] = {{"sources", net.source_ids()},
                  {"loads", net.load_ids()},
                  {"xi_s", matrix(flows.xi_s)},
                  {"xi_r", matrix(flows.xi_r)}};
  json kernels = json::array();
  for (std::size_t j = 0; j < net.pipes().size(); ++j) {
    const auto& p = net.kernel_params()[j];
    kernels.push_back({{"pipe", net.pipes()[j].id}, {"gamma", p.gamma}, {"alpha", p.alpha}, {"eta", p.eta}});
  }
  doc["pipe_kernels"] = kernels;
  stamp(doc, g);
  const auto path = out_path(g, a.output);
  write_json(doc, path);
  std::cout << "wrote " << path.string() << " (gamma_cap " << agm.gamma_cap << ")\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// estimate

struct EstimateArgs {
  std::string data;
  std::string candidates;
  std::string delay_range;
  std::string truth_network;
  int radius = 2;
  std::optional<int> n_train, n_test;
  std::optional<std::string> loss;
  std::optional<int> m_trc;
  bool no_normalization = false;
  bool nonnegative = false;
  std::optional<unsigned> threads;
  std::string report = "fit_report.json";
  std::string model = "agm_estimated.json";
};

dhn::DelayCandidates read_candidates(const json& doc, const dhn::MeasurementSet& data) {
  dhn::DelayCandidates c;
  try {
    for (const auto& e : doc.at("pairs")) {
      c.set(e.at("source").get<std::string>(), e.at("load").get<std::string>(), e.at("delays").get<std::vector<int>>());
    }
  } catch (const json::exception& e) {
    throw dhn::Error(dhn::ErrorKind::InvalidConfig, std::string("candidate file: ") + e.what());
  }
  for (const auto& s : data.sources) {
    for (const auto& l : data.loads) c.get(s, l);
  }
  return c;
}

int cmd_estimate(const Globals& g, const EstimateArgs& a) {
  const json cfg_doc = config_doc(g);
  dhn::EstimatorConfig cfg = estimator_from(cfg_doc, {});
  if (a.loss) {
    if (*a.loss != "lse" && *a.loss != "hme") throw dhn::Error(dhn::ErrorKind::InvalidConfig, "--loss must be lse or hme");
    cfg.loss = *a.loss == "lse" ? dhn::LossKind::LSE : dhn::LossKind::HME;
  }
  if (a.m_trc) cfg.m_trc = *a.m_trc;
  if (a.no_normalization) cfg.normalization = false;
  if (a.nonnegative) cfg.nonnegative = true;
  if (a.threads) cfg.threads = *a.threads;
  cfg.validate();

  const auto data = dhn::read_csv(a.data);
  if (data.sources.empty() || data.loads.empty()) {
    throw dhn::Error(dhn::ErrorKind::InvalidConfig, "measurement sidecar must list sources and loads");
  }
  const std::size_t n_train = static_cast<std::size_t>(a.n_train.value_or(static_cast<int>(data.length())));
  const std::size_t n_test = static_cast<std::size_t>(a.n_test.value_or(static_cast<int>(data.length() - std::min(data.length(), n_train))));
  const auto [train, test] = dhn::split(data, n_train, n_test);

  std::optional<dhn::AgmModel> truth;
  if (!a.truth_network.empty()) truth = dhn::derive_agm(load_network(a.truth_network));

  dhn::DelayCandidates candidates;
  if (!a.candidates.empty()) {
    candidates = read_candidates(read_json(a.candidates), data);
  } else if (!a.delay_range.empty()) {
    const auto colon = a.delay_range.find(':');
    if (colon == std::string::npos) throw dhn::Error(dhn::ErrorKind::InvalidConfig, "--delay-range expects lo:hi");
    int lo = 0, hi = 0;
    try {
      lo = std::stoi(a.delay_range.substr(0, colon));
      hi = std::stoi(a.delay_range.substr(colon + 1));
    } catch (const std::exception&) {
      throw dhn::Error(dhn::ErrorKind::InvalidConfig, "--delay-range expects integers lo:hi");
    }
    candidates = dhn::DelayCandidates::uniform(data.sources, data.loads, lo, hi);
  } else if (truth) {
    candidates = dhn::candidates_around(*truth, a.radius);
  } else {
    throw dhn::Error(dhn::ErrorKind::InvalidConfig, "give --candidates, --delay-range or --truth-network");
  }

  const auto est = dhn::estimate_agm(train, candidates, cfg);
  json report;
  report["loss"] = std::string(dhn::to_string(cfg.loss));
  report["m_trc"] = cfg.m_trc;
  report["normalization"] = cfg.normalization;
  report["n_train"] = train.length();
  report["n_test"] = test.length();
  report["mappings"] = dhn::fit_report_json(est, train, test.length() > 0 ? &test : nullptr);
  if (truth) {
    double worst = 0.0;
    for (std::size_t v = 0; v < truth->stm.size(); ++v) worst = std::max(worst, dhn::max_coefficient_error(est.model.stm[v], truth->stm[v]));
    for (std::size_t k = 0; k < truth->rtm.size(); ++k) worst = std::max(worst, dhn::max_coefficient_error(est.model.rtm[k], truth->rtm[k]));
    report["recovery"] = {{"max_coefficient_error", worst}, {"exact_match", worst <= 1e-6}};
  }
  stamp(report, g);
  write_json(report, out_path(g, a.report));
  write_json(dhn::to_json(est.model), out_path(g, a.model));
  std::cout << "wrote " << out_path(g, a.report).string() << " and " << out_path(g, a.model).string() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// evaluate

struct EvaluateArgs {
  std::string agm;
  std::string data;
  std::string output = "evaluation.json";
  std::string plot = "evaluation_plot.csv";
};

int cmd_evaluate(const Globals& g, const EvaluateArgs& a) {
  const auto agm = dhn::agm_from_json(read_json(a.agm));
  const auto data = dhn::read_csv(a.data);
  if (data.length() <= static_cast<std::size_t>(agm.gamma_cap)) {
    throw dhn::Error(dhn::ErrorKind::InsufficientData, "data has " + std::to_string(data.length()) +
                                                           " steps; the model needs more than " +
                                                           std::to_string(agm.gamma_cap));
  }
  json doc;
  doc["mappings"] = json::array();
  std::vector<dhn::PlotPoint> plot;
  auto one = [&](const dhn::AgmMapping& m, bool stm) {
    const auto s = dhn::predict_against(m, data, stm);
    doc["mappings"].push_back({{"node", m.node},
                               {"mapping", stm ? "stm" : "rtm"},
                               {"metrics", dhn::metrics_json(s)},
                               {"normalization_residual", m.normalization_residual()},
                               {"band_violations", dhn::band_violations(m)}});
    for (std::size_t i = 0; i < s.actual.size(); ++i) {
      plot.push_back({"eval", m.node, stm ? "supply" : "return", s.first_step + i, s.actual[i], s.predicted[i]});
    }
  };
  for (const auto& m : agm.stm) one(m, true);
  for (const auto& m : agm.rtm) one(m, false);
  stamp(doc, g);
  write_json(doc, out_path(g, a.output));
  dhn::write_plot_csv(plot, out_path(g, a.plot));
  std::cout << "wrote " << out_path(g, a.output).string() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// perturb

struct PerturbArgs {
  std::string data;
  double gaussian_std = 0.0;
  bool absolute = false;
  double outliers = 0.0;
  double high = 3.0;
  double low = 0.3;
  std::string sides;
  std::string nodes;
  std::string output = "perturbed.csv";
};

int cmd_perturb(const Globals& g, const PerturbArgs& a) {
  const auto data = dhn::read_csv(a.data);
  dhn::ChannelFilter filter;
  for (const auto& s : split_list(a.sides)) filter.sides.insert(dhn::parse_side(s));
  for (const auto& n : split_list(a.nodes)) filter.nodes.insert(n);
  if (a.outliers < 0.0 || a.outliers >= 1.0) throw dhn::Error(dhn::ErrorKind::InvalidConfig, "--outliers must be in [0, 1)");
  auto out = dhn::add_gaussian_noise(data, a.gaussian_std, g.seed * 7 + 3, !a.absolute, filter);
  out = dhn::add_salt_pepper(out, a.outliers, a.high, a.low, g.seed * 7 + 4, filter);
  const auto path = out_path(g, a.output);
  dhn::write_csv(out, path);
  std::cout << "wrote " << path.string() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// dispatch

struct DispatchArgs {
  std::string network;
  std::string scenario;
  std::string agm;
  std::optional<int> m_trc;
  std::string model = "both";
  int repeats = 3;
  std::string report = "dispatch_report.json";
  std::string schedule = "dispatch_schedule.csv";
};

int cmd_dispatch(const Globals& g, const DispatchArgs& a) {
  const auto net = load_network(a.network);
  const json cfg = config_doc(g);
  dhn::DispatchScenario sc;
  if (!a.scenario.empty()) {
    sc = dhn::scenario_from_json(read_json(a.scenario));
  } else if (cfg.contains("scenario")) {
    sc = dhn::scenario_from_json(cfg.at("scenario"));
  } else {
    sc = dhn::daily_scenario(net);
  }
  dhn::AgmModel agm = a.agm.empty() ? dhn::derive_agm(net) : dhn::agm_from_json(read_json(a.agm));
  if (a.m_trc) agm = dhn::truncate_agm(agm, *a.m_trc);

  json report;
  report["scenario"] = dhn::to_json(sc);
  if (a.model == "both") {
    const auto c = dhn::compare_models(net, agm, sc, a.repeats);
    report["node"] = dhn::to_json(c.node);
    report["agm"] = dhn::to_json(c.agm);
    report["cost_node"] = c.node.objective;
    report["cost_agm"] = c.agm.objective;
    report["deviation"] = c.deviation;
    report["max_heat_gap_mw"] = c.max_heat_gap;
    report["peak_demand_mw"] = c.peak_demand;
    report["node_solve_time_s"] = c.node_time;
    report["agm_solve_time_s"] = c.agm_time;
    sc.model = dhn::DhnModelKind::NodeMethod;
    dhn::write_schedule_csv({&c.node, &c.agm}, dhn::build_dispatch(net, sc), out_path(g, a.schedule));
    std::cout << "cost node " << dhn::format_double(c.node.objective) << ", agm " << dhn::format_double(c.agm.objective)
              << ", deviation " << dhn::format_double(c.deviation) << "\n";
  } else {
    sc.model = dhn::parse_model_kind(a.model);
    const auto problem = dhn::build_dispatch(net, sc, &agm);
    const auto sol = dhn::solve_dispatch(problem);
    report[a.model] = dhn::to_json(sol);
    report["solve_time_s"] = sol.solve_time;
    dhn::write_schedule_csv({&sol}, problem, out_path(g, a.schedule));
    std::cout << "cost " << dhn::format_double(sol.objective) << "\n";
  }
  if (g.no_timestamp) {
    // Wall-clock times are the only run-to-run difference left.
    for (const char* key : {"node_solve_time_s", "agm_solve_time_s", "solve_time_s"}) report.erase(key);
  }
  stamp(report, g);
  write_json(report, out_path(g, a.report));
  return kExitOk;
}

// ---------------------------------------------------------------------------
// run-tests

struct RunTestsArgs {
  std::string network;
  std::string outliers;
};

int cmd_run_tests(const Globals& g, const RunTestsArgs& a) {
  dhn::ExperimentSpec spec;
  if (!g.config.empty()) spec = dhn::experiment_from_json(read_json(g.config), fs::path(g.config).parent_path());
  if (!a.network.empty()) spec.network_path = a.network;
  if (!a.outliers.empty()) {
    if (a.outliers != "targets" && a.outliers != "all") {
      throw dhn::Error(dhn::ErrorKind::InvalidConfig, "--outliers must be 'targets' or 'all'");
    }
    spec.outlier_channels = a.outliers == "all" ? dhn::OutlierChannels::All : dhn::OutlierChannels::Targets;
  }
  spec.seed = g.seed;
  const auto net = spec.network_path ? load_network(spec.network_path->string()) : dhn::seven_node_network();
  const auto result = dhn::run_test_matrix(net, spec);
  dhn::write_summary_csv(result.rows, out_path(g, "summary.csv"));
  dhn::write_plot_csv(result.plot, out_path(g, "plot_data.csv"));
  json doc;
  doc["seed"] = spec.seed;
  doc["tests"] = result.rows.size();
  doc["failed"] = std::count_if(result.rows.begin(), result.rows.end(), [](const auto& r) { return !r.ok; });
  stamp(doc, g);
  write_json(doc, out_path(g, "run_report.json"));
  for (const auto& r : result.rows) {
    std::cout << r.test.id << "  " << (r.ok ? "ok    " : "FAILED") << "  " << r.test.name;
    if (r.ok) std::cout << "  stm_rmse=" << dhn::format_double(r.stm_rmse) << " max_coef_err=" << dhn::format_double(r.max_coef_error);
    if (!r.ok) std::cout << "  " << r.message;
    std::cout << '\n';
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"District heating network simulation, aggregate-model identification and dispatch"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--seed", g.seed, "Seed for every random draw")->capture_default_str();
  app.add_option("--out-dir", g.out_dir, "Directory for output files")->capture_default_str();
  app.add_option("--config", g.config, "JSON configuration document");
  app.add_flag("--no-timestamp", g.no_timestamp, "Omit wall-clock fields so reruns are byte-identical");

  SimulateArgs sim;
  auto* s = app.add_subcommand("simulate", "Run the node method and write a measurement CSV");
  s->add_option("--network", sim.network, "Network JSON or builtin:seven-node")->required();
  s->add_option("--boundary", sim.boundary, "CSV with source supply and load return series");
  s->add_option("--signal", sim.signal, "constant | step | sine | random-walk")->capture_default_str();
  s->add_option("--steps", sim.steps, "Steps written after warm-up")->capture_default_str();
  s->add_option("--warmup", sim.warmup, "Leading steps discarded")->capture_default_str();
  s->add_option("--supply-lo", sim.supply_lo)->capture_default_str();
  s->add_option("--supply-hi", sim.supply_hi)->capture_default_str();
  s->add_option("--supply-step", sim.supply_step, "Random-walk step std")->capture_default_str();
  s->add_option("--return-lo", sim.return_lo)->capture_default_str();
  s->add_option("--return-hi", sim.return_hi)->capture_default_str();
  s->add_option("--return-step", sim.return_step)->capture_default_str();
  s->add_option("--step-at", sim.step_at, "Step time after warm-up")->capture_default_str();
  s->add_option("--period", sim.period, "Sine period in steps")->capture_default_str();
  s->add_option("--initial-temp", sim.initial_temp, "Pre-history temperature");
  s->add_option("--output", sim.output)->capture_default_str();

  DeriveArgs der;
  auto* d = app.add_subcommand("derive-agm", "Derive the aggregate model of a network");
  d->add_option("--network", der.network)->required();
  d->add_option("--m-trc", der.m_trc, "Truncate each band to m_trc+1 lags");
  d->add_option("--output", der.output)->capture_default_str();

  EstimateArgs est;
  auto* e = app.add_subcommand("estimate", "Fit the aggregate model to measurements");
  e->add_option("--data", est.data, "Measurement CSV (with sidecar)")->required();
  e->add_option("--candidates", est.candidates, "JSON {pairs: [{source, load, delays}]}");
  e->add_option("--delay-range", est.delay_range, "lo:hi for every pair");
  e->add_option("--truth-network", est.truth_network, "Network whose derived model centres the candidates and scores recovery");
  e->add_option("--radius", est.radius, "Candidate half-width around derived delays")->capture_default_str();
  e->add_option("--n-train", est.n_train);
  e->add_option("--n-test", est.n_test);
  e->add_option("--loss", est.loss, "lse | hme");
  e->add_option("--m-trc", est.m_trc);
  e->add_flag("--no-normalization", est.no_normalization);
  e->add_flag("--nonnegative", est.nonnegative);
  e->add_option("--threads", est.threads);
  e->add_option("--report", est.report)->capture_default_str();
  e->add_option("--model-out", est.model)->capture_default_str();

  EvaluateArgs ev;
  auto* v = app.add_subcommand("evaluate", "Score an aggregate model on measurements");
  v->add_option("--agm", ev.agm)->required();
  v->add_option("--data", ev.data)->required();
  v->add_option("--output", ev.output)->capture_default_str();
  v->add_option("--plot", ev.plot)->capture_default_str();

  PerturbArgs per;
  auto* p = app.add_subcommand("perturb", "Add Gaussian noise and salt-and-pepper outliers");
  p->add_option("--data", per.data)->required();
  p->add_option("--gaussian-std", per.gaussian_std, "Relative std (absolute with --absolute)")->capture_default_str();
  p->add_flag("--absolute", per.absolute);
  p->add_option("--outliers", per.outliers, "Outlier proportion P")->capture_default_str();
  p->add_option("--high", per.high, "Outlier factor a")->capture_default_str();
  p->add_option("--low", per.low, "Outlier factor b")->capture_default_str();
  p->add_option("--sides", per.sides, "Comma list of supply,return (default all)");
  p->add_option("--nodes", per.nodes, "Comma list of node ids (default all)");
  p->add_option("--output", per.output)->capture_default_str();

  DispatchArgs dis;
  auto* x = app.add_subcommand("dispatch", "Solve the CHP dispatch with node-method and/or aggregate-model constraints");
  x->add_option("--network", dis.network)->required();
  x->add_option("--scenario", dis.scenario, "Scenario JSON (default: built-in daily profile)");
  x->add_option("--agm", dis.agm, "Aggregate model JSON (default: derived from the network)");
  x->add_option("--m-trc", dis.m_trc, "Truncate the aggregate model first");
  x->add_option("--model", dis.model, "node | agm | both")->capture_default_str();
  x->add_option("--repeats", dis.repeats, "Solves per model for timing")->capture_default_str();
  x->add_option("--report", dis.report)->capture_default_str();
  x->add_option("--schedule", dis.schedule)->capture_default_str();

  RunTestsArgs rt;
  auto* r = app.add_subcommand("run-tests", "Run the Tests 1-6 matrix and write summary and plot data");
  r->add_option("--network", rt.network, "Network JSON (default: built-in seven-node network)");
  r->add_option("--outliers", rt.outliers, "targets | all");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (s->parsed()) return cmd_simulate(g, sim);
    if (d->parsed()) return cmd_derive(g, der);
    if (e->parsed()) return cmd_estimate(g, est);
    if (v->parsed()) return cmd_evaluate(g, ev);
    if (p->parsed()) return cmd_perturb(g, per);
    if (x->parsed()) return cmd_dispatch(g, dis);
    if (r->parsed()) return cmd_run_tests(g, rt);
  } catch (const dhn::Error& err) {
    std::cerr << "error: " << err.what() << '\n';
    return exit_code_for(err.kind());
  } catch (const fs::filesystem_error& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kExitConfig;
  } catch (const json::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& err) {
    std::cerr << "internal error: " << err.what() << '\n';
    return kExitInternal;
  }
  return kExitInternal;
}
