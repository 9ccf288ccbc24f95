#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "qrcal/ndgrad.hpp"

namespace qrcal {

/// Lower bound on predictive standard deviations, in standardized units.
inline constexpr double kSigmaFloor = 1e-6;

/// Predictive Normal(mu, sigma^2) for one instance.
struct GaussianPrediction {
  double mu = 0.0;
  double sigma = 1.0;
};

/// Probability integral transform Phi((y - mu) / sigma), unclamped.
double pit(const GaussianPrediction& pred, double y);
std::vector<double> pit(std::span<const GaussianPrediction> preds, std::span<const double> y);

/// Mean Gaussian negative log likelihood. Sigmas below kSigmaFloor are
/// raised to the floor and counted (see sigma_floor_hits()).
double gaussian_nll(std::span<const GaussianPrediction> preds, std::span<const double> y);

/// Differentiable mean NLL over vectors mu, sigma of the same length as y.
ad::Var gaussian_nll(const ad::Tensor& y, ad::Var mu, ad::Var sigma);

/// Number of sigma values raised to the floor since process start.
std::size_t sigma_floor_hits();

/// Moment-matched Gaussian of T stochastic forward passes:
/// mean of the means, mean of the variances plus variance of the means.
GaussianPrediction aggregate_mc(std::span<const GaussianPrediction> passes);

/// Moment-matched Gaussian of a uniform mixture of M members:
/// mean of (sigma^2 + mu^2) minus the squared mixture mean.
GaussianPrediction aggregate_ensemble(std::span<const GaussianPrediction> members);

}  // namespace qrcal
