#pragma once

// Post-hoc quantile recalibration: fit a monotone map R on (PIT, empirical
// CDF of PIT) pairs and report R(F(y)) in place of F(y).

#include <iosfwd>
#include <span>
#include <vector>

#include "qrcal/gaussian.hpp"

namespace qrcal {

struct RecalibrationPoint {
  double pit = 0.0;
  double empirical = 0.0;  // fraction of PITs <= pit
};

/// (c_i, P(c <= c_i)) pairs sorted by c_i.
std::vector<RecalibrationPoint> build_recalibration_dataset(
    std::span<const GaussianPrediction> preds, std::span<const double> y);
std::vector<RecalibrationPoint> build_recalibration_dataset(std::span<const double> pits);

/// Least-squares isotonic (nondecreasing) fit of ys by pool adjacent
/// violators. `xs` only fixes the order and must be ascending.
std::vector<double> pav(std::span<const double> xs, std::span<const double> ys);

struct Knot {
  double p = 0.0;
  double value = 0.0;
};

/// Piecewise-linear nondecreasing map [0,1] -> [0,1] through (0,0), the
/// interior knots, and (1,1).
class CalibrationMap {
 public:
  CalibrationMap();  // identity

  /// Validates ordering and range; adds the (0,0) and (1,1) endpoints.
  explicit CalibrationMap(std::vector<Knot> interior);

  double operator()(double p) const;
  const std::vector<Knot>& knots() const { return knots_; }

  /// Two-column CSV, header "p,value".
  void write_csv(std::ostream& os) const;
  static CalibrationMap read_csv(std::istream& is);

 private:
  std::vector<Knot> knots_;
};

CalibrationMap fit_calibration_map(std::span<const GaussianPrediction> preds,
                                   std::span<const double> y);
CalibrationMap fit_calibration_map(std::span<const double> pits);

double apply_map(const CalibrationMap& map, double p);

/// PIT of the recalibrated model R o F.
double recalibrated_pit(const CalibrationMap& map, const GaussianPrediction& pred, double y);

}  // namespace qrcal
