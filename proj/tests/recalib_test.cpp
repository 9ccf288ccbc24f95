#include "qrcal/recalib.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "qrcal/datasets.hpp"
#include "qrcal/error.hpp"
#include "qrcal/metrics.hpp"
#include "test_util.hpp"

namespace qrcal {
namespace {

TEST(RecalibrationDataset, SinglePoint) {
  const std::vector<double> c{0.42};
  const auto d = build_recalibration_dataset(c);
  ASSERT_EQ(d.size(), 1u);
  EXPECT_DOUBLE_EQ(d[0].pit, 0.42);
  EXPECT_DOUBLE_EQ(d[0].empirical, 1.0);
}

TEST(RecalibrationDataset, Counting) {
  const std::vector<double> c{0.9, 0.2, 0.4};
  const auto d = build_recalibration_dataset(c);
  ASSERT_EQ(d.size(), 3u);
  EXPECT_DOUBLE_EQ(d[0].pit, 0.2);
  EXPECT_DOUBLE_EQ(d[0].empirical, 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(d[1].empirical, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(d[2].empirical, 1.0);
}

TEST(RecalibrationDataset, MatchesBruteForceCounting) {
  std::mt19937_64 rng(7);
  auto c = testing::uniform_vector(rng, 50);
  c[3] = c[10];  // include a tie
  const auto d = build_recalibration_dataset(c);
  for (std::size_t i = 0; i < d.size(); ++i) {
    std::size_t count = 0;
    for (double v : c) count += v <= d[i].pit;
    EXPECT_EQ(d[i].empirical, static_cast<double>(count) / 50.0);
    if (i > 0) EXPECT_LE(d[i - 1].pit, d[i].pit);
  }
}

TEST(RecalibrationDataset, FromPredictions) {
  std::vector<GaussianPrediction> preds{{0.0, 1.0}, {1.0, 2.0}};
  std::vector<double> y{0.0, 1.0};
  const auto d = build_recalibration_dataset(preds, y);
  EXPECT_DOUBLE_EQ(d[0].pit, 0.5);
  EXPECT_DOUBLE_EQ(d[1].empirical, 1.0);
}

TEST(RecalibrationDataset, EmptyThrows) {
  EXPECT_THROW(build_recalibration_dataset(std::vector<double>{}), DomainError);
}

TEST(Pav, MonotoneInputReturnedExactly) {
  const std::vector<double> xs{0.1, 0.2, 0.3, 0.4};
  const std::vector<double> ys{0.1, 0.3, 0.3, 0.7};
  EXPECT_EQ(pav(xs, ys), ys);
}

TEST(Pav, TwoPointPool) {
  const std::vector<double> xs{0.0, 1.0};
  const std::vector<double> ys{2.0, 1.0};
  EXPECT_EQ(pav(xs, ys), (std::vector<double>{1.5, 1.5}));
}

TEST(Pav, MatchesProjectionOracle) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + trial % 8;
    std::vector<double> xs(n);
    std::iota(xs.begin(), xs.end(), 0.0);
    const auto ys = testing::uniform_vector(rng, n, -1.0, 1.0);
    const auto fit = pav(xs, ys);
    const auto oracle = testing::monotone_projection_bruteforce(ys);
    for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(fit[i], oracle[i], 1e-8);
  }
}

TEST(Pav, InvariantsOnRandomInput) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + trial * 3;
    std::vector<double> xs(n);
    std::iota(xs.begin(), xs.end(), 0.0);
    const auto ys = testing::uniform_vector(rng, n, -5.0, 5.0);
    const auto fit = pav(xs, ys);
    EXPECT_TRUE(std::is_sorted(fit.begin(), fit.end()));
    const double m0 = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
    const double m1 = std::accumulate(fit.begin(), fit.end(), 0.0) / n;
    EXPECT_NEAR(m0, m1, 1e-12);
    const auto again = pav(xs, fit);
    for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(again[i], fit[i], 1e-12);
  }
}

TEST(Pav, Errors) {
  EXPECT_THROW(pav(std::vector<double>{1.0, 0.0}, std::vector<double>{0.0, 0.0}), DomainError);
  EXPECT_THROW(pav(std::vector<double>{0.0}, std::vector<double>{0.0, 1.0}), ShapeError);
}

TEST(CalibrationMap, IdentityDefault) {
  CalibrationMap id;
  ASSERT_EQ(id.knots().size(), 2u);
  EXPECT_DOUBLE_EQ(apply_map(id, 0.37), 0.37);
  EXPECT_DOUBLE_EQ(apply_map(id, 0.0), 0.0);
  EXPECT_DOUBLE_EQ(apply_map(id, 1.0), 1.0);
}

TEST(CalibrationMap, Interpolation) {
  CalibrationMap m({{0.5, 0.8}});
  EXPECT_DOUBLE_EQ(apply_map(m, 0.25), 0.4);
  EXPECT_DOUBLE_EQ(apply_map(m, 0.5), 0.8);
  EXPECT_DOUBLE_EQ(apply_map(m, 0.75), 0.9);
}

TEST(CalibrationMap, OutOfRangeThrows) {
  CalibrationMap m;
  EXPECT_THROW(apply_map(m, -0.01), DomainError);
  EXPECT_THROW(apply_map(m, 1.01), DomainError);
  EXPECT_THROW(apply_map(m, std::nan("")), DomainError);
}

TEST(CalibrationMap, RejectsBadKnots) {
  EXPECT_THROW(CalibrationMap({{0.5, 0.6}, {0.4, 0.7}}), DomainError);
  EXPECT_THROW(CalibrationMap({{0.5, 0.6}, {0.5, 0.7}}), DomainError);
  EXPECT_THROW(CalibrationMap({{0.3, 0.6}, {0.5, 0.5}}), DomainError);
  EXPECT_THROW(CalibrationMap({{0.3, 1.5}}), DomainError);
}

TEST(CalibrationMap, CsvRoundTrip) {
  CalibrationMap m({{0.1, 0.05}, {0.3, 0.4}, {0.9, 0.95}});
  std::stringstream ss;
  m.write_csv(ss);
  EXPECT_EQ(ss.str().substr(0, 8), "p,value\n");
  const auto back = CalibrationMap::read_csv(ss);
  ASSERT_EQ(back.knots().size(), m.knots().size());
  for (std::size_t i = 0; i < m.knots().size(); ++i) {
    EXPECT_EQ(back.knots()[i].p, m.knots()[i].p);
    EXPECT_EQ(back.knots()[i].value, m.knots()[i].value);
  }
  std::stringstream bad("p,value\n0.2;0.3\n");
  EXPECT_THROW(CalibrationMap::read_csv(bad), ConfigError);
  std::stringstream no_header("0.2,0.3\n");
  EXPECT_THROW(CalibrationMap::read_csv(no_header), ConfigError);
}

TEST(FitCalibrationMap, TwoPointExample) {
  const auto m = fit_calibration_map(std::vector<double>{0.6, 0.3});
  const auto& k = m.knots();
  ASSERT_EQ(k.size(), 4u);
  EXPECT_DOUBLE_EQ(k[0].p, 0.0);
  EXPECT_DOUBLE_EQ(k[0].value, 0.0);
  EXPECT_DOUBLE_EQ(k[1].p, 0.3);
  EXPECT_DOUBLE_EQ(k[1].value, 0.5);
  EXPECT_DOUBLE_EQ(k[2].p, 0.6);
  EXPECT_DOUBLE_EQ(k[2].value, 1.0);
  EXPECT_DOUBLE_EQ(k[3].p, 1.0);
  EXPECT_DOUBLE_EQ(k[3].value, 1.0);
}

TEST(FitCalibrationMap, GridIsNearIdentity) {
  const std::size_t n = 500;
  std::vector<double> c(n);
  for (std::size_t i = 0; i < n; ++i) c[i] = (i + 0.5) / n;
  const auto m = fit_calibration_map(c);
  for (const auto& k : m.knots()) EXPECT_LE(std::fabs(k.value - k.p), 1.0 / n + 1e-12);
}

TEST(FitCalibrationMap, PassesThroughEmpiricalCdf) {
  std::mt19937_64 rng(3);
  const auto c = testing::uniform_vector(rng, 200, 0.0, 0.7);
  const auto d = build_recalibration_dataset(c);
  const auto m = fit_calibration_map(c);
  ASSERT_EQ(m.knots().size(), d.size() + 2);
  for (std::size_t i = 0; i < d.size(); ++i) {
    EXPECT_EQ(m.knots()[i + 1].p, d[i].pit);
    EXPECT_EQ(m.knots()[i + 1].value, d[i].empirical);
  }
}

TEST(FitCalibrationMap, DuplicatesCollapse) {
  const auto m = fit_calibration_map(std::vector<double>{0.2, 0.2, 0.5, 0.2});
  ASSERT_EQ(m.knots().size(), 4u);
  EXPECT_DOUBLE_EQ(m.knots()[1].value, 0.75);
}

TEST(FitCalibrationMap, EndpointPitsAbsorbed) {
  const auto m = fit_calibration_map(std::vector<double>{0.0, 0.5, 1.0});
  EXPECT_EQ(m.knots().front().value, 0.0);
  EXPECT_EQ(m.knots().back().value, 1.0);
  EXPECT_EQ(m.knots().size(), 3u);
}

TEST(FitCalibrationMap, RandomMapMonotone) {
  std::mt19937_64 rng(5);
  const auto c = testing::uniform_vector(rng, 100);
  const auto m = fit_calibration_map(c);
  EXPECT_EQ(apply_map(m, 0.0), 0.0);
  EXPECT_EQ(apply_map(m, 1.0), 1.0);
  double prev = 0.0;
  for (int i = 0; i <= 1000; ++i) {
    const double v = apply_map(m, i / 1000.0);
    EXPECT_GE(v, prev);
    prev = v;
  }
}

TEST(RecalibratedPit, IdentityMapIsRawPit) {
  CalibrationMap id;
  const GaussianPrediction p{0.3, 1.7};
  EXPECT_DOUBLE_EQ(recalibrated_pit(id, p, 1.1), pit(p, 1.1));
}

TEST(RecalibratedPit, InSampleUniformWithinOneOverN) {
  // Badly over-dispersed model: sigma 3x too large.
  const auto synth = synth_hetero(400, 21);
  std::vector<GaussianPrediction> preds = synth.truth;
  for (auto& p : preds) p.sigma *= 3.0;
  const auto& y = synth.data.targets;
  const auto m = fit_calibration_map(preds, y);
  std::vector<double> rc;
  for (std::size_t i = 0; i < y.size(); ++i) rc.push_back(recalibrated_pit(m, preds[i], y[i]));
  const double n = static_cast<double>(y.size());
  for (const auto& k : m.knots()) {
    const double frac = std::count_if(rc.begin(), rc.end(), [&](double v) { return v <= k.value; }) / n;
    EXPECT_LE(std::fabs(frac - k.value), 1.0 / n + 1e-12);
  }
  MetricConfig cfg;
  cfg.percent = false;
  const auto raw = pit(preds, y);
  EXPECT_LT(calibration_error(rc, cfg), 1.0 / 20 + 1.0 / n);
  EXPECT_LT(calibration_error(rc, cfg), calibration_error(raw, cfg));
}

TEST(RecalibratedPit, ConstantPredictionMonotoneInY) {
  const GaussianPrediction p{0.0, 1.0};
  std::vector<double> y;
  for (int i = -20; i <= 20; ++i) y.push_back(i * 0.1);
  std::vector<GaussianPrediction> preds(y.size(), p);
  const auto m = fit_calibration_map(preds, y);
  double prev = -1.0;
  for (double v : y) {
    const double r = recalibrated_pit(m, p, v);
    EXPECT_GE(r, 0.0);
    EXPECT_LE(r, 1.0);
    EXPECT_GE(r, prev);
    prev = r;
  }
}

}  // namespace
}  // namespace qrcal
