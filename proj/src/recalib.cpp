#include "qrcal/recalib.hpp"

#include <algorithm>
#include <charconv>
#include <istream>
#include <ostream>
#include <string>

#include "qrcal/error.hpp"
#include "qrcal/metrics.hpp"

namespace qrcal {

std::vector<RecalibrationPoint> build_recalibration_dataset(std::span<const double> pits) {
  if (pits.empty()) throw DomainError("build_recalibration_dataset: empty input");
  std::vector<double> c(pits.begin(), pits.end());
  std::sort(c.begin(), c.end());
  const double n = static_cast<double>(c.size());
  std::vector<RecalibrationPoint> out(c.size());
  for (std::size_t i = 0; i < c.size(); ++i) {
    const auto count = std::upper_bound(c.begin(), c.end(), c[i]) - c.begin();
    out[i] = {c[i], static_cast<double>(count) / n};
  }
  return out;
}

std::vector<RecalibrationPoint> build_recalibration_dataset(
    std::span<const GaussianPrediction> preds, std::span<const double> y) {
  if (preds.empty()) throw DomainError("build_recalibration_dataset: empty input");
  const auto pits = pit(preds, y);
  return build_recalibration_dataset(pits);
}

std::vector<double> pav(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw ShapeError("pav: xs and ys differ in length");
  if (!std::is_sorted(xs.begin(), xs.end())) throw DomainError("pav: xs must be ascending");

  // Stack of pooled blocks (sum, count); merge while the last two violate.
  std::vector<double> sums;
  std::vector<std::size_t> counts;
  for (double y : ys) {
    sums.push_back(y);
    counts.push_back(1);
    while (sums.size() > 1) {
      const std::size_t k = sums.size() - 1;
      if (sums[k - 1] * static_cast<double>(counts[k]) <=
          sums[k] * static_cast<double>(counts[k - 1])) {
        break;
      }
      sums[k - 1] += sums[k];
      counts[k - 1] += counts[k];
      sums.pop_back();
      counts.pop_back();
    }
  }
  std::vector<double> fit;
  fit.reserve(ys.size());
  for (std::size_t b = 0; b < sums.size(); ++b) {
    // Singleton blocks keep their exact input value.
    const double m = counts[b] == 1 ? sums[b] : sums[b] / static_cast<double>(counts[b]);
    fit.insert(fit.end(), counts[b], m);
  }
  return fit;
}

CalibrationMap::CalibrationMap() : knots_{{0.0, 0.0}, {1.0, 1.0}} {}

CalibrationMap::CalibrationMap(std::vector<Knot> interior) {
  knots_.push_back({0.0, 0.0});
  double last_p = 0.0;
  double last_v = 0.0;
  for (const Knot& k : interior) {
    if (!(k.value >= 0.0 && k.value <= 1.0)) {
      throw DomainError("calibration map: knot value outside [0,1]");
    }
    if (k.p <= 0.0 || k.p >= 1.0) continue;  // endpoints are fixed
    if (k.p <= last_p && knots_.size() > 1) {
      throw DomainError("calibration map: knot positions must be strictly increasing");
    }
    if (k.value < last_v) throw DomainError("calibration map: knot values must be nondecreasing");
    knots_.push_back(k);
    last_p = k.p;
    last_v = k.value;
  }
  knots_.push_back({1.0, 1.0});
}

double CalibrationMap::operator()(double p) const {
  if (!(p >= 0.0 && p <= 1.0)) {
    throw DomainError("calibration map: argument " + std::to_string(p) + " outside [0,1]");
  }
  auto hi = std::upper_bound(knots_.begin(), knots_.end(), p,
                             [](double v, const Knot& k) { return v < k.p; });
  if (hi == knots_.end()) return knots_.back().value;
  auto lo = hi - 1;
  const double t = (p - lo->p) / (hi->p - lo->p);
  return lo->value + t * (hi->value - lo->value);
}

void CalibrationMap::write_csv(std::ostream& os) const {
  os << "p,value\n";
  for (const Knot& k : knots_) os << format_double(k.p) << ',' << format_double(k.value) << '\n';
}

CalibrationMap CalibrationMap::read_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line.rfind("p,value", 0) != 0) {
    throw ConfigError("calibration map csv: missing 'p,value' header");
  }
  std::vector<Knot> knots;
  std::size_t row = 1;
  while (std::getline(is, line)) {
    ++row;
    if (line.empty()) continue;
    const auto comma = line.find(',');
    Knot k;
    const char* end = line.data() + line.size();
    auto r1 = std::from_chars(line.data(), line.data() + comma, k.p);
    auto r2 = comma == std::string::npos ? r1 : std::from_chars(line.data() + comma + 1, end, k.value);
    if (comma == std::string::npos || r1.ec != std::errc() || r2.ec != std::errc()) {
      throw ConfigError("calibration map csv: malformed row " + std::to_string(row));
    }
    knots.push_back(k);
  }
  return CalibrationMap(std::move(knots));
}

CalibrationMap fit_calibration_map(std::span<const double> pits) {
  const auto data = build_recalibration_dataset(pits);
  std::vector<double> xs, ys;
  for (const auto& d : data) {
    xs.push_back(d.pit);
    ys.push_back(d.empirical);
  }
  const std::vector<double> fitted = pav(xs, ys);
  std::vector<Knot> knots;
  for (std::size_t i = 0; i < xs.size();) {
    std::size_t j = i;
    double acc = 0.0;
    while (j < xs.size() && xs[j] == xs[i]) acc += fitted[j++];
    knots.push_back({xs[i], j - i == 1 ? fitted[i] : acc / static_cast<double>(j - i)});
    i = j;
  }
  return CalibrationMap(std::move(knots));
}

CalibrationMap fit_calibration_map(std::span<const GaussianPrediction> preds,
                                   std::span<const double> y) {
  return fit_calibration_map(pit(preds, y));
}

double apply_map(const CalibrationMap& map, double p) { return map(p); }

double recalibrated_pit(const CalibrationMap& map, const GaussianPrediction& pred, double y) {
  return map(pit(pred, y));
}

}  // namespace qrcal
