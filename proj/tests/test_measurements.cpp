#include <cmath>
#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "dhn/measurements.hpp"
#include "helpers.hpp"

using namespace dhn;

namespace {

MeasurementSet sample_set(std::size_t n) {
  MeasurementSet d;
  d.tau_amb = 4.5;
  d.dt = 900.0;
  d.sources = {"S"};
  d.loads = {"L"};
  std::vector<double> a(n), b(n), c(n), e(n);
  for (std::size_t t = 0; t < n; ++t) {
    a[t] = 80.0 + std::sin(0.3 * static_cast<double>(t));
    b[t] = 40.0 + 0.1 * static_cast<double>(t);
    c[t] = 75.0 + 1.0 / 3.0 * static_cast<double>(t % 7);
    e[t] = 45.0 - 0.05 * static_cast<double>(t);
  }
  d.set("S", Side::Supply, a);
  d.set("S", Side::Return, b);
  d.set("L", Side::Supply, c);
  d.set("L", Side::Return, e);
  return d;
}

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("dhn_test_" + name);
}

}  // namespace

TEST(Noise, ZeroStdIsIdentity) {
  const auto d = sample_set(50);
  EXPECT_EQ(add_gaussian_noise(d, 0.0, 1).channels, d.channels);
  EXPECT_EQ(add_salt_pepper(d, 0.0, 3.0, 0.3, 1).channels, d.channels);
}

TEST(Noise, SeededIsDeterministic) {
  const auto d = sample_set(50);
  EXPECT_EQ(add_gaussian_noise(d, 0.01, 7).channels, add_gaussian_noise(d, 0.01, 7).channels);
  EXPECT_NE(add_gaussian_noise(d, 0.01, 7).channels, add_gaussian_noise(d, 0.01, 8).channels);
}

TEST(Noise, RelativeStdMatches) {
  MeasurementSet d;
  d.set("S", Side::Supply, std::vector<double>(20000, 50.0));
  const auto n = add_gaussian_noise(d, 0.02, 3);
  double s = 0.0, ss = 0.0;
  for (double v : n.channel("S", Side::Supply)) {
    const double e = v / 50.0 - 1.0;
    s += e;
    ss += e * e;
  }
  const double mean = s / 20000.0;
  EXPECT_NEAR(mean, 0.0, 5e-4);
  EXPECT_NEAR(std::sqrt(ss / 20000.0 - mean * mean), 0.02, 5e-4);
}

TEST(Noise, FilterLimitsChannels) {
  const auto d = sample_set(40);
  ChannelFilter f;
  f.sides = {Side::Supply};
  f.nodes = {"L"};
  const auto n = add_gaussian_noise(d, 0.05, 2, true, f);
  EXPECT_NE(n.channel("L", Side::Supply), d.channel("L", Side::Supply));
  EXPECT_EQ(n.channel("S", Side::Supply), d.channel("S", Side::Supply));
  EXPECT_EQ(n.channel("L", Side::Return), d.channel("L", Side::Return));
}

TEST(SaltPepper, OnlyTwoRatiosAndFrequency) {
  MeasurementSet d;
  d.set("S", Side::Supply, std::vector<double>(40000, 10.0));
  const auto n = add_salt_pepper(d, 0.2, 3.0, 0.3, 11);
  int high = 0, low = 0;
  for (double v : n.channel("S", Side::Supply)) {
    const double r = v / 10.0;
    if (r == 3.0) {
      ++high;
    } else if (std::abs(r - 0.3) < 1e-15) {
      ++low;
    } else {
      ASSERT_EQ(r, 1.0);
    }
  }
  EXPECT_NEAR((high + low) / 40000.0, 0.2, 0.01);
  EXPECT_NEAR(high / 40000.0, 0.1, 0.01);
}

TEST(SaltPepper, RejectsBadProportion) {
  const auto d = sample_set(5);
  EXPECT_DHN_ERROR(add_salt_pepper(d, 1.0, 2.0, 0.5, 1), ErrorKind::InvalidConfig);
  EXPECT_DHN_ERROR(add_salt_pepper(d, -0.1, 2.0, 0.5, 1), ErrorKind::InvalidConfig);
  EXPECT_DHN_ERROR(add_gaussian_noise(d, -1.0, 1), ErrorKind::InvalidConfig);
}

TEST(Metrics, WorkedExample) {
  const std::vector<double> pred = {1.0, 2.0}, actual = {2.0, 2.0};
  EXPECT_DOUBLE_EQ(rmse(pred, actual), std::sqrt(0.5));
  EXPECT_DOUBLE_EQ(mape(pred, actual), 0.25);
  EXPECT_DHN_ERROR(r_squared(pred, actual), ErrorKind::R2Undefined);
  EXPECT_DHN_ERROR(mape(pred, std::vector<double>{0.0, 1.0}), ErrorKind::MapeUndefined);
  EXPECT_DHN_ERROR(rmse(pred, std::vector<double>{1.0}), ErrorKind::ShapeMismatch);
}

TEST(Metrics, PerfectFit) {
  const std::vector<double> y = {1.0, 3.0, 2.0, 5.0};
  const auto m = compute_metrics(y, y);
  EXPECT_EQ(m.rmse, 0.0);
  EXPECT_EQ(m.mape, 0.0);
  EXPECT_EQ(m.r2, 1.0);
}

TEST(Metrics, RmseScaleEquivariance) {
  const std::vector<double> p = {1.0, 4.0, -2.0, 3.5}, a = {1.5, 3.0, -1.0, 3.0};
  for (double c : {0.5, 2.0, 17.0}) {
    std::vector<double> pc, ac;
    for (std::size_t i = 0; i < p.size(); ++i) {
      pc.push_back(c * p[i]);
      ac.push_back(c * a[i]);
    }
    EXPECT_NEAR(rmse(pc, ac), c * rmse(p, a), 1e-12);
    EXPECT_NEAR(r_squared(pc, ac), r_squared(p, a), 1e-12);
  }
}

TEST(Split, Chronological) {
  const auto d = sample_set(30);
  const auto [train, test] = split(d, 20, 10);
  EXPECT_EQ(train.length(), 20u);
  EXPECT_EQ(test.length(), 10u);
  EXPECT_EQ(test.channel("S", Side::Supply)[0], d.channel("S", Side::Supply)[20]);
  EXPECT_EQ(train.tau_amb, d.tau_amb);
  EXPECT_EQ(split(d, 30, 0).first.length(), 30u);
  EXPECT_DHN_ERROR(split(d, 25, 10), ErrorKind::InsufficientData);
}

TEST(Csv, BitExactRoundTrip) {
  const auto d = sample_set(25);
  const auto path = temp_file("roundtrip.csv");
  write_csv(d, path);
  const auto back = read_csv(path);
  EXPECT_EQ(back.channels, d.channels);
  EXPECT_EQ(back.dt, d.dt);
  EXPECT_EQ(back.tau_amb, d.tau_amb);
  EXPECT_EQ(back.sources, d.sources);
  EXPECT_EQ(back.loads, d.loads);
}

TEST(Csv, ParseErrorsNameTheLine) {
  const auto path = temp_file("bad.csv");
  auto expect_line = [&](const std::string& body, const std::string& where) {
    std::ofstream(path) << body;
    try {
      read_csv(path);
      ADD_FAILURE() << "no error for:\n" << body;
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::ParseError);
      EXPECT_NE(std::string(e.what()).find(where), std::string::npos) << e.what();
    }
  };
  expect_line("t,node,side,temp_c\n", "line 1");
  expect_line("t,node_id,side,temp_c\n0,N1,supply,80\n1,N1,supply,abc\n", "line 3");
  expect_line("t,node_id,side,temp_c\n0,N1,sideways,80\n", "line 2");
  expect_line("t,node_id,side,temp_c\n0,N1,supply,80,1\n", "line 2");
  expect_line("t,node_id,side,temp_c\n0,N1,supply,80\n0,N1,supply,81\n", "line 3");
  expect_line("t,node_id,side,temp_c\n0,N1,supply,nan\n", "line 2");
  EXPECT_DHN_ERROR(read_csv(temp_file("does_not_exist.csv")), ErrorKind::ParseError);
}

TEST(MeasurementSet, ValidateAndMissingChannel) {
  auto d = sample_set(10);
  EXPECT_NO_THROW(d.validate());
  d.channel("S", Side::Supply).push_back(1.0);
  EXPECT_DHN_ERROR(d.validate(), ErrorKind::ShapeMismatch);
  EXPECT_DHN_ERROR(d.channel("X", Side::Supply), ErrorKind::InsufficientData);
}
