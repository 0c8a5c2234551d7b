#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <compare>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "dhn/error.hpp"

namespace dhn {

enum class Side { Supply, Return };

inline std::string_view to_string(Side side) { return side == Side::Supply ? "supply" : "return"; }

inline Side parse_side(std::string_view text) {
  if (text == "supply") return Side::Supply;
  if (text == "return") return Side::Return;
  throw Error(ErrorKind::ParseError, "unknown side '" + std::string(text) + "'");
}

struct ChannelKey {
  std::string node;
  Side side = Side::Supply;

  auto operator<=>(const ChannelKey&) const = default;
};

/// Time-indexed temperatures at the boundary nodes of a network.
///
/// All channels share one length. `sources` and `loads` record node roles
/// when known; the estimators need them to tell regressors from targets.
struct MeasurementSet {
  double dt = 3600.0;
  double tau_amb = 0.0;
  std::map<ChannelKey, std::vector<double>> channels;
  std::vector<std::string> sources;
  std::vector<std::string> loads;

  std::size_t length() const { return channels.empty() ? 0 : channels.begin()->second.size(); }

  bool has(const std::string& node, Side side) const { return channels.count({node, side}) > 0; }

  const std::vector<double>& channel(const std::string& node, Side side) const {
    auto it = channels.find({node, side});
    if (it == channels.end()) {
      throw Error(ErrorKind::InsufficientData,
                  "missing channel " + node + "/" + std::string(to_string(side)));
    }
    return it->second;
  }

  std::vector<double>& channel(const std::string& node, Side side) {
    auto it = channels.find({node, side});
    if (it == channels.end()) {
      throw Error(ErrorKind::InsufficientData,
                  "missing channel " + node + "/" + std::string(to_string(side)));
    }
    return it->second;
  }

  void set(const std::string& node, Side side, std::vector<double> values) {
    channels[{node, side}] = std::move(values);
  }

  /// Throws ShapeMismatch when lengths differ or a value is not finite.
  void validate() const {
    const std::size_t n = length();
    for (const auto& [key, series] : channels) {
      if (series.size() != n) {
        throw Error(ErrorKind::ShapeMismatch, "channel " + key.node + "/" +
                                                  std::string(to_string(key.side)) +
                                                  " has length " + std::to_string(series.size()) +
                                                  ", expected " + std::to_string(n));
      }
      for (double v : series) {
        if (!std::isfinite(v)) {
          throw Error(ErrorKind::ShapeMismatch, "non-finite temperature in " + key.node);
        }
      }
    }
  }

  /// Contiguous sub-range [begin, begin + count).
  MeasurementSet slice(std::size_t begin, std::size_t count) const {
    if (begin + count > length()) {
      throw Error(ErrorKind::InsufficientData, "slice [" + std::to_string(begin) + ", " +
                                                   std::to_string(begin + count) +
                                                   ") exceeds length " + std::to_string(length()));
    }
    MeasurementSet out;
    out.dt = dt;
    out.tau_amb = tau_amb;
    out.sources = sources;
    out.loads = loads;
    for (const auto& [key, series] : channels) {
      out.channels[key] = std::vector<double>(series.begin() + static_cast<std::ptrdiff_t>(begin),
                                              series.begin() +
                                                  static_cast<std::ptrdiff_t>(begin + count));
    }
    return out;
  }
};

// ---------------------------------------------------------------------------
// Random numbers
//
// The engine is std::mt19937_64, whose output sequence is fixed by the
// standard. The distributions below are written out by hand because the
// std:: distributions are implementation-defined and would make seeded
// fixtures differ between standard libraries.

class PortableRng {
 public:
  explicit PortableRng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Standard normal via the Box-Muller transform; caches the second draw.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * 3.14159265358979323846 * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// Which channels a perturbation touches. Empty sets mean "everything".
struct ChannelFilter {
  std::set<Side> sides;
  std::set<std::string> nodes;

  bool accepts(const ChannelKey& key) const {
    if (!sides.empty() && sides.count(key.side) == 0) return false;
    if (!nodes.empty() && nodes.count(key.node) == 0) return false;
    return true;
  }
};

/// Measurement noise. With `relative` set each sample becomes
/// tau * (1 + eps); otherwise tau + eps, eps ~ N(0, std^2).
inline MeasurementSet add_gaussian_noise(const MeasurementSet& data, double std_dev,
                                         std::uint64_t seed, bool relative = true,
                                         const ChannelFilter& filter = {}) {
  if (std_dev < 0.0) throw Error(ErrorKind::InvalidConfig, "noise std must be >= 0");
  MeasurementSet out = data;
  if (std_dev == 0.0) return out;
  PortableRng rng(seed);
  for (auto& [key, series] : out.channels) {
    if (!filter.accepts(key)) continue;
    for (double& v : series) {
      const double eps = std_dev * rng.normal();
      v = relative ? v * (1.0 + eps) : v + eps;
    }
  }
  return out;
}

/// Impulse outliers: each sample is independently multiplied by `a` with
/// probability P/2, by `b` with probability P/2, and left alone otherwise.
inline MeasurementSet add_salt_pepper(const MeasurementSet& data, double proportion, double a,
                                      double b, std::uint64_t seed,
                                      const ChannelFilter& filter = {}) {
  if (proportion < 0.0 || proportion >= 1.0) {
    throw Error(ErrorKind::InvalidConfig, "outlier proportion must lie in [0, 1)");
  }
  MeasurementSet out = data;
  if (proportion == 0.0) return out;
  PortableRng rng(seed);
  const double half = 0.5 * proportion;
  for (auto& [key, series] : out.channels) {
    if (!filter.accepts(key)) continue;
    for (double& v : series) {
      const double u = rng.uniform();
      if (u < half) {
        v *= a;
      } else if (u < proportion) {
        v *= b;
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Goodness of fit

struct Metrics {
  double rmse = 0.0;
  double mape = 0.0;
  double r2 = 1.0;
};

inline void check_metric_inputs(const std::vector<double>& pred, const std::vector<double>& actual) {
  if (pred.size() != actual.size() || pred.empty()) {
    throw Error(ErrorKind::ShapeMismatch, "metric inputs must have equal nonzero length");
  }
}

inline double rmse(const std::vector<double>& pred, const std::vector<double>& actual) {
  check_metric_inputs(pred, actual);
  double ss = 0.0;
  for (std::size_t t = 0; t < pred.size(); ++t) ss += (pred[t] - actual[t]) * (pred[t] - actual[t]);
  return std::sqrt(ss / static_cast<double>(pred.size()));
}

inline double mape(const std::vector<double>& pred, const std::vector<double>& actual) {
  check_metric_inputs(pred, actual);
  double sum = 0.0;
  for (std::size_t t = 0; t < pred.size(); ++t) {
    if (actual[t] == 0.0) {
      throw Error(ErrorKind::MapeUndefined, "actual value is zero at sample " + std::to_string(t));
    }
    sum += std::abs((pred[t] - actual[t]) / actual[t]);
  }
  return sum / static_cast<double>(pred.size());
}

inline double r_squared(const std::vector<double>& pred, const std::vector<double>& actual) {
  check_metric_inputs(pred, actual);
  const double mean =
      std::accumulate(actual.begin(), actual.end(), 0.0) / static_cast<double>(actual.size());
  double ss_res = 0.0;
  double ss_tot = 0.0;
  for (std::size_t t = 0; t < pred.size(); ++t) {
    ss_res += (pred[t] - actual[t]) * (pred[t] - actual[t]);
    ss_tot += (actual[t] - mean) * (actual[t] - mean);
  }
  if (ss_tot == 0.0) throw Error(ErrorKind::R2Undefined, "actual series is constant");
  return 1.0 - ss_res / ss_tot;
}

inline Metrics compute_metrics(const std::vector<double>& pred, const std::vector<double>& actual) {
  return {rmse(pred, actual), mape(pred, actual), r_squared(pred, actual)};
}

/// Chronological split: the first n_train samples, then the next n_test.
inline std::pair<MeasurementSet, MeasurementSet> split(const MeasurementSet& data,
                                                       std::size_t n_train, std::size_t n_test) {
  if (n_train + n_test > data.length()) {
    throw Error(ErrorKind::InsufficientData,
                "split needs " + std::to_string(n_train + n_test) + " samples, have " +
                    std::to_string(data.length()));
  }
  return {data.slice(0, n_train), data.slice(n_train, n_test)};
}

// ---------------------------------------------------------------------------
// CSV I/O
//
// Long format, one row per (t, node, side):
//
//   t,node_id,side,temp_c
//   0,N1,supply,80
//
// dt, ambient temperature and node roles live in a JSON sidecar next to the
// CSV (`<path>.json`). Values are written in shortest round-trip form.

inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline std::filesystem::path sidecar_path(const std::filesystem::path& csv) {
  return std::filesystem::path(csv.string() + ".json");
}

inline void write_csv(const MeasurementSet& data, const std::filesystem::path& path) {
  data.validate();
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::ParseError, "cannot open " + path.string() + " for writing");
  out << "t,node_id,side,temp_c\n";
  for (std::size_t t = 0; t < data.length(); ++t) {
    for (const auto& [key, series] : data.channels) {
      out << t << ',' << key.node << ',' << to_string(key.side) << ',' << format_double(series[t])
          << '\n';
    }
  }
  nlohmann::json meta;
  meta["dt_s"] = data.dt;
  meta["tau_amb_c"] = data.tau_amb;
  meta["sources"] = data.sources;
  meta["loads"] = data.loads;
  std::ofstream side(sidecar_path(path));
  side << meta.dump(2) << '\n';
}

namespace detail {

inline std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

inline double parse_number(const std::string& text, std::size_t line_no) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size() || !std::isfinite(v)) {
    throw Error(ErrorKind::ParseError,
                "line " + std::to_string(line_no) + ": not a finite number '" + text + "'");
  }
  return v;
}

}  // namespace detail

/// Parses the long-format CSV. Missing sidecar leaves dt/tau_amb at the
/// supplied defaults.
inline MeasurementSet read_csv(const std::filesystem::path& path,
                               std::optional<double> dt = std::nullopt,
                               std::optional<double> tau_amb = std::nullopt) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::ParseError, "line 0: cannot open " + path.string());

  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) throw Error(ErrorKind::ParseError, "line 1: empty file");
  ++line_no;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = detail::split_fields(line);
  const std::vector<std::string> expected{"t", "node_id", "side", "temp_c"};
  if (header != expected) {
    throw Error(ErrorKind::ParseError,
                "line 1: expected header 't,node_id,side,temp_c', got '" + line + "'");
  }

  std::map<ChannelKey, std::map<std::size_t, double>> raw;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = detail::split_fields(line);
    if (fields.size() != 4) {
      throw Error(ErrorKind::ParseError, "line " + std::to_string(line_no) + ": expected 4 fields");
    }
    std::size_t t = 0;
    auto [ptr, ec] = std::from_chars(fields[0].data(), fields[0].data() + fields[0].size(), t);
    if (ec != std::errc() || ptr != fields[0].data() + fields[0].size()) {
      throw Error(ErrorKind::ParseError,
                  "line " + std::to_string(line_no) + ": bad step index '" + fields[0] + "'");
    }
    if (fields[1].empty()) {
      throw Error(ErrorKind::ParseError, "line " + std::to_string(line_no) + ": empty node id");
    }
    Side side = Side::Supply;
    try {
      side = parse_side(fields[2]);
    } catch (const Error&) {
      throw Error(ErrorKind::ParseError,
                  "line " + std::to_string(line_no) + ": unknown side '" + fields[2] + "'");
    }
    const double temp = detail::parse_number(fields[3], line_no);
    auto& series = raw[{fields[1], side}];
    if (!series.emplace(t, temp).second) {
      throw Error(ErrorKind::ParseError,
                  "line " + std::to_string(line_no) + ": duplicate sample for step " + fields[0]);
    }
  }

  MeasurementSet data;
  std::size_t length = 0;
  bool first = true;
  for (auto& [key, samples] : raw) {
    std::vector<double> series;
    series.reserve(samples.size());
    std::size_t expect = 0;
    for (const auto& [t, v] : samples) {
      if (t != expect) {
        throw Error(ErrorKind::ParseError, "channel " + key.node + "/" +
                                               std::string(to_string(key.side)) +
                                               " is missing step " + std::to_string(expect));
      }
      series.push_back(v);
      ++expect;
    }
    if (first) {
      length = series.size();
      first = false;
    } else if (series.size() != length) {
      throw Error(ErrorKind::ParseError, "channel " + key.node + " has " +
                                             std::to_string(series.size()) + " steps, expected " +
                                             std::to_string(length));
    }
    data.channels[key] = std::move(series);
  }

  const auto meta_path = sidecar_path(path);
  if (std::filesystem::exists(meta_path)) {
    std::ifstream meta_in(meta_path);
    nlohmann::json meta;
    try {
      meta_in >> meta;
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::ParseError, "sidecar " + meta_path.string() + ": " + e.what());
    }
    data.dt = meta.value("dt_s", data.dt);
    data.tau_amb = meta.value("tau_amb_c", data.tau_amb);
    data.sources = meta.value("sources", std::vector<std::string>{});
    data.loads = meta.value("loads", std::vector<std::string>{});
  }
  if (dt) data.dt = *dt;
  if (tau_amb) data.tau_amb = *tau_amb;
  return data;
}

}  // namespace dhn
