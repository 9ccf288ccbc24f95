#include "qrcal/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>

#include "qrcal/error.hpp"

namespace qrcal {

std::vector<ReliabilityPoint> reliability_curve(std::span<const double> pits,
                                                const MetricConfig& cfg) {
  if (pits.empty()) throw DomainError("reliability_curve: no PIT values");
  if (cfg.bins == 0) throw DomainError("reliability_curve: bins must be positive");
  std::vector<double> sorted(pits.begin(), pits.end());
  std::sort(sorted.begin(), sorted.end());
  const double n = static_cast<double>(sorted.size());
  std::vector<ReliabilityPoint> curve(cfg.bins);
  for (std::size_t i = 1; i <= cfg.bins; ++i) {
    const double p = static_cast<double>(i) / static_cast<double>(cfg.bins);
    const auto count = std::upper_bound(sorted.begin(), sorted.end(), p) - sorted.begin();
    curve[i - 1] = {p, static_cast<double>(count) / n};
  }
  return curve;
}

double calibration_error(std::span<const double> pits, const MetricConfig& cfg) {
  if (pits.empty()) throw DomainError("calibration_error: no PIT values");
  double acc = 0.0;
  for (const auto& pt : reliability_curve(pits, cfg)) {
    const double d = pt.observed - pt.expected;
    acc += d * d;
  }
  const double ce = acc / static_cast<double>(cfg.bins);
  return cfg.percent ? 100.0 * ce : ce;
}

double rmse(std::span<const GaussianPrediction> preds, std::span<const double> y) {
  if (preds.size() != y.size()) throw ShapeError("rmse: predictions and targets differ in length");
  if (preds.empty()) throw DomainError("rmse: empty input");
  double acc = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double r = y[i] - preds[i].mu;
    acc += r * r;
  }
  return std::sqrt(acc / static_cast<double>(y.size()));
}

double predictive_nll(std::span<const GaussianPrediction> preds, std::span<const double> y) {
  if (preds.empty()) throw DomainError("predictive_nll: empty input");
  return gaussian_nll(preds, y);
}

MetricsReport evaluate(std::span<const GaussianPrediction> preds, std::span<const double> y,
                       const MetricConfig& cfg) {
  MetricsReport r;
  const auto pits = pit(preds, y);
  r.calib_error = calibration_error(pits, cfg);
  r.rmse = rmse(preds, y);
  r.nll = predictive_nll(preds, y);
  r.n = y.size();
  r.reliability = reliability_curve(pits, cfg);
  return r;
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) return "nan";
  return std::string(buf, ptr);
}

std::string MetricsReport::to_text() const {
  std::ostringstream os;
  os << "{\n"
     << "  \"calib_error\": " << format_double(calib_error) << ",\n"
     << "  \"rmse\": " << format_double(rmse) << ",\n"
     << "  \"nll\": " << format_double(nll) << ",\n"
     << "  \"n\": " << n << "\n"
     << "}\n";
  return os.str();
}

}  // namespace qrcal
