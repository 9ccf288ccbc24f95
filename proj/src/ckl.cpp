#include "qrcal/ckl.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <string>

#include "qrcal/error.hpp"
#include "qrcal/gaussian.hpp"

namespace qrcal {

namespace {

double one_minus_log(double s) {
  const double r = 1.0 - s;
  return r > 0.0 ? r * std::log(r) : 0.0;
}

// Coefficients c_j such that sum_j c_j s_j = sum_i w_i (s_(i+1) - s_(i)).
const std::vector<double>& telescoped_weights(std::size_t n) {
  thread_local std::map<std::size_t, std::vector<double>> cache;
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;
  const std::vector<double> w = gap_weights(n);
  std::vector<double> c(n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    const double prev = j >= 1 ? w[j - 1] : 0.0;
    const double next = j + 1 < n ? w[j] : 0.0;
    c[j] = prev - next;
  }
  return cache.emplace(n, std::move(c)).first->second;
}

}  // namespace

std::vector<double> gap_weights(std::size_t n) {
  std::vector<double> w(n > 0 ? n - 1 : 0);
  const double dn = static_cast<double>(n);
  for (std::size_t i = 1; i < n; ++i) {
    const double q = static_cast<double>(n - i) / dn;
    w[i - 1] = q * std::log(q);
  }
  return w;
}

double cre_empirical(std::span<const double> sorted) {
  if (sorted.empty()) throw DomainError("cre_empirical: empty sample");
  const std::vector<double> w = gap_weights(sorted.size());
  double acc = 0.0;
  for (std::size_t i = 0; i + 1 < sorted.size(); ++i) acc += w[i] * (sorted[i + 1] - sorted[i]);
  return -acc;
}

CklEstimate ckl_uniform(std::span<const double> samples) {
  if (samples.empty()) throw DomainError("ckl_uniform: empty sample");
  std::vector<double> s(samples.begin(), samples.end());
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!(s[i] >= -1e-12 && s[i] <= 1.0 + 1e-12)) {
      throw DomainError("ckl_uniform: sample " + std::to_string(i) + " = " +
                        std::to_string(s[i]) + " lies outside [0,1]");
    }
    s[i] = std::clamp(s[i], 0.0, 1.0);
  }
  std::sort(s.begin(), s.end());
  CklEstimate est;
  est.cre = cre_empirical(s);
  double e = 0.0;
  for (double v : s) e += one_minus_log(v);
  est.expectation_term = e / static_cast<double>(s.size());
  est.value = -est.cre + est.expectation_term + 0.5;
  return est;
}

ad::Var quantile_reg_loss(const ad::Tensor& y, ad::Var mu, ad::Var sigma,
                          const SoftSortConfig& cfg) {
  const std::size_t n = y.size();
  if (n < 2) throw DomainError("quantile_reg_loss: batch needs at least 2 instances");
  if (mu.shape() != y.shape() || sigma.shape() != y.shape()) {
    throw ShapeError("quantile_reg_loss: mu " + ad::shape_str(mu.shape()) + ", sigma " +
                     ad::shape_str(sigma.shape()) + " and y " + ad::shape_str(y.shape()) +
                     " must match");
  }
  ad::Tape& tape = mu.tape();
  ad::Var pits = ad::clamp(ad::std_normal_cdf((tape.constant(y) - mu) / sigma), kPitEps,
                           1.0 - kPitEps);

  SoftSortConfig ascending = cfg;
  ascending.order = SortOrder::kAscending;
  ad::Var sorted = soft_sorted(pits, ascending);
  const std::vector<double>& c = telescoped_weights(n);
  ad::Var gap_term = ad::sum(sorted * tape.constant(ad::Tensor::vector(c)));

  ad::Var rest = 1.0 - pits;
  ad::Var expectation = ad::mean(rest * ad::log(rest));
  return gap_term + expectation + 0.5;
}

ad::Var total_loss(const ad::Tensor& y, ad::Var mu, ad::Var sigma, double lambda,
                   const SoftSortConfig& cfg) {
  if (!(lambda >= 0.0)) throw DomainError("total_loss: lambda must be nonnegative");
  ad::Var nll = gaussian_nll(y, mu, sigma);
  if (lambda == 0.0) return nll;
  return nll + lambda * quantile_reg_loss(y, mu, sigma, cfg);
}

}  // namespace qrcal
