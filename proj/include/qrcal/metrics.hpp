#pragma once

#include <span>
#include <string>
#include <vector>

#include "qrcal/gaussian.hpp"

namespace qrcal {

struct MetricConfig {
  /// Number of quantile levels p_i = i / bins, i = 1..bins.
  std::size_t bins = 20;
  /// Report the calibration error multiplied by 100.
  bool percent = true;
};

struct ReliabilityPoint {
  double expected = 0.0;  // p_i
  double observed = 0.0;  // fraction of PITs <= p_i
};

/// Mean over the quantile levels of (observed - expected)^2.
double calibration_error(std::span<const double> pits, const MetricConfig& cfg = {});

std::vector<ReliabilityPoint> reliability_curve(std::span<const double> pits,
                                                const MetricConfig& cfg = {});

/// Root mean squared error of the predictive means.
double rmse(std::span<const GaussianPrediction> preds, std::span<const double> y);

/// Mean Gaussian NLL; pass predictions and targets in the units to report.
double predictive_nll(std::span<const GaussianPrediction> preds, std::span<const double> y);

struct MetricsReport {
  double calib_error = 0.0;
  double rmse = 0.0;
  double nll = 0.0;
  std::size_t n = 0;
  std::vector<ReliabilityPoint> reliability;

  /// "key: value" lines, one per scalar metric, in a JSON-compatible form.
  std::string to_text() const;
};

MetricsReport evaluate(std::span<const GaussianPrediction> preds, std::span<const double> y,
                       const MetricConfig& cfg = {});

/// Shortest decimal text that round-trips the double.
std::string format_double(double v);

}  // namespace qrcal
