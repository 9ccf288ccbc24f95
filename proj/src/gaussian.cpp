#include "qrcal/gaussian.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "qrcal/error.hpp"

namespace qrcal {

namespace {

std::atomic<std::size_t> g_floor_hits{0};

const double kHalfLog2Pi = 0.5 * std::log(2.0 * std::numbers::pi);

void check_aligned(const char* op, std::size_t a, std::size_t b) {
  if (a != b) {
    throw ShapeError(std::string(op) + ": " + std::to_string(a) + " predictions but " +
                     std::to_string(b) + " targets");
  }
}

}  // namespace

double pit(const GaussianPrediction& pred, double y) {
  if (!std::isfinite(y)) throw DomainError("pit: non-finite target");
  if (!(pred.sigma > 0.0) || !std::isfinite(pred.mu)) {
    throw DomainError("pit: invalid prediction (sigma must be positive, mu finite)");
  }
  return ad::normal_cdf((y - pred.mu) / pred.sigma);
}

std::vector<double> pit(std::span<const GaussianPrediction> preds, std::span<const double> y) {
  check_aligned("pit", preds.size(), y.size());
  std::vector<double> out(preds.size());
  for (std::size_t i = 0; i < preds.size(); ++i) out[i] = pit(preds[i], y[i]);
  return out;
}

double gaussian_nll(std::span<const GaussianPrediction> preds, std::span<const double> y) {
  check_aligned("gaussian_nll", preds.size(), y.size());
  if (preds.empty()) throw DomainError("gaussian_nll: empty input");
  double total = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    double sigma = preds[i].sigma;
    if (sigma < kSigmaFloor) {
      sigma = kSigmaFloor;
      ++g_floor_hits;
    }
    const double z = (y[i] - preds[i].mu) / sigma;
    total += kHalfLog2Pi + std::log(sigma) + 0.5 * z * z;
  }
  return total / static_cast<double>(preds.size());
}

ad::Var gaussian_nll(const ad::Tensor& y, ad::Var mu, ad::Var sigma) {
  if (mu.shape() != y.shape() || sigma.shape() != y.shape()) {
    throw ShapeError("gaussian_nll: mu " + ad::shape_str(mu.shape()) + ", sigma " +
                     ad::shape_str(sigma.shape()) + " and y " + ad::shape_str(y.shape()) +
                     " must match");
  }
  const auto& s = sigma.value();
  const auto below = static_cast<std::size_t>(
      std::count_if(s.data().begin(), s.data().end(), [](double v) { return v < kSigmaFloor; }));
  if (below > 0) {
    g_floor_hits += below;
    sigma = ad::clamp(sigma, kSigmaFloor, std::numeric_limits<double>::max());
  }
  ad::Tape& tape = mu.tape();
  ad::Var z = (tape.constant(y) - mu) / sigma;
  return ad::mean(ad::log(sigma) + 0.5 * (z * z)) + kHalfLog2Pi;
}

std::size_t sigma_floor_hits() { return g_floor_hits.load(); }

GaussianPrediction aggregate_mc(std::span<const GaussianPrediction> passes) {
  if (passes.empty()) throw DomainError("aggregate_mc: no forward passes");
  const double t = static_cast<double>(passes.size());
  double mu = 0.0;
  for (const auto& p : passes) mu += p.mu;
  mu /= t;
  double var = 0.0;
  double spread = 0.0;
  for (const auto& p : passes) {
    var += p.sigma * p.sigma;
    spread += (p.mu - mu) * (p.mu - mu);
  }
  return {mu, std::sqrt(var / t + spread / t)};
}

GaussianPrediction aggregate_ensemble(std::span<const GaussianPrediction> members) {
  if (members.empty()) throw DomainError("aggregate_ensemble: no members");
  const double m = static_cast<double>(members.size());
  double mu = 0.0;
  double second = 0.0;
  for (const auto& p : members) {
    mu += p.mu;
    second += p.sigma * p.sigma + p.mu * p.mu;
  }
  mu /= m;
  // Cancellation can push the difference a hair below the member variances.
  double var = second / m - mu * mu;
  double min_var = members[0].sigma * members[0].sigma;
  for (const auto& p : members) min_var = std::min(min_var, p.sigma * p.sigma);
  var = std::max(var, min_var / m);
  return {mu, std::sqrt(var)};
}

}  // namespace qrcal
