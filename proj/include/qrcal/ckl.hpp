#pragma once

// Cumulative residual entropy and the cumulative KL divergence between a
// sample distribution on [0,1] and Uniform[0,1].
//
// For S supported on [0,1] and T ~ Uniform[0,1],
//   CKL(F_S || G_T) = -cre(S) + E[(1 - S) ln(1 - S)] + 1/2,
// and the plug-in estimator over ordered samples s_(1) <= ... <= s_(n) is
//   sum_{i<n} w_i (s_(i+1) - s_(i)) + mean_i (1 - s_i) ln(1 - s_i) + 1/2,
// with w_i = ((n - i)/n) ln((n - i)/n). The first sum equals -cre of the
// empirical distribution.

#include <span>
#include <vector>

#include "qrcal/ndgrad.hpp"
#include "qrcal/softsort.hpp"

namespace qrcal {

/// PIT clamp applied inside the differentiable loss.
inline constexpr double kPitEps = 1e-6;

struct CklEstimate {
  /// Estimated divergence in nats; nonnegative up to rounding.
  double value = 0.0;
  /// Empirical cumulative residual entropy (>= 0); enters value with a minus sign.
  double cre = 0.0;
  /// Sample mean of (1 - s) ln(1 - s).
  double expectation_term = 0.0;
};

/// Gap weights w_i = ((n - i)/n) ln((n - i)/n) for i = 1..n-1.
std::vector<double> gap_weights(std::size_t n);

/// Cumulative residual entropy of the empirical distribution of an ascending
/// sample.
double cre_empirical(std::span<const double> sorted);

/// Plug-in CKL estimate against Uniform[0,1]. Samples are sorted internally.
CklEstimate ckl_uniform(std::span<const double> samples);

/// Differentiable quantile regularizer on a batch: PITs of y under
/// N(mu, sigma^2), clamped to [kPitEps, 1 - kPitEps], soft-sorted ascending,
/// then the plug-in CKL estimate. Requires at least two instances.
ad::Var quantile_reg_loss(const ad::Tensor& y, ad::Var mu, ad::Var sigma,
                          const SoftSortConfig& cfg);

/// NLL + lambda * quantile_reg_loss. lambda == 0 returns the NLL node itself.
ad::Var total_loss(const ad::Tensor& y, ad::Var mu, ad::Var sigma, double lambda,
                   const SoftSortConfig& cfg);

}  // namespace qrcal
