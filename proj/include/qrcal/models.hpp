#pragma once

// Heteroscedastic MLP regressor: input -> hidden -> hidden -> (mu, sigma),
// ReLU hidden units, sigma = softplus(raw) + 1e-6. Trained with Adam on
// NLL + lambda * quantile regularizer.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "qrcal/datasets.hpp"
#include "qrcal/gaussian.hpp"
#include "qrcal/ndgrad.hpp"

namespace qrcal {

inline constexpr double kSigmaOffset = 1e-6;

/// y = x W + b with W of shape (in, out) and b of shape (1, out).
struct DenseLayer {
  ad::Tensor weight;
  ad::Tensor bias;
};

struct MlpParams {
  std::vector<DenseLayer> layers;

  std::size_t input_dim() const { return layers.empty() ? 0 : layers.front().weight.rows(); }
  std::size_t hidden_dim() const { return layers.empty() ? 0 : layers.front().weight.cols(); }
  bool all_finite() const;
  /// "layer1.weight", "layer1.bias", ... in parameter order.
  std::vector<std::string> block_names() const;
  std::vector<ad::Tensor*> blocks();
  std::vector<const ad::Tensor*> blocks() const;
};

/// Uniform fan-in init: hidden layers U(+-sqrt(6/fan_in)), head
/// U(+-1/sqrt(fan_in)); zero biases.
MlpParams init_mlp(std::size_t input_dim, std::size_t hidden, std::uint64_t seed);

/// 0/1 keep masks for the two hidden layers.
struct DropoutMasks {
  ad::Tensor hidden1;
  ad::Tensor hidden2;
  double rate = 0.0;
};

DropoutMasks sample_dropout_masks(std::size_t rows, std::size_t hidden, double rate,
                                  std::mt19937_64& rng);

/// Puts every parameter block on the tape as a variable.
std::vector<ad::Var> bind_params(ad::Tape& tape, const MlpParams& params);

struct MlpOutput {
  ad::Var mu;
  ad::Var sigma;
};

/// `params` as returned by bind_params. Throws ShapeError when x does not
/// have the input width.
MlpOutput mlp_forward(std::span<const ad::Var> params, ad::Var x,
                      const DropoutMasks* masks = nullptr);

/// Deterministic forward pass without dropout.
std::vector<GaussianPrediction> predict(const MlpParams& params, const ad::Tensor& x);

struct AdamConfig {
  double learning_rate = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<ad::Tensor> m;
  std::vector<ad::Tensor> v;
  std::size_t step = 0;
};

/// One bias-corrected Adam update in place. Throws DivergenceError naming
/// the block when a gradient is not finite.
void adam_step(std::span<ad::Tensor* const> params, std::span<const ad::Tensor> grads,
               std::span<const std::string> names, AdamState& state, const AdamConfig& cfg);
void adam_step(MlpParams& params, std::span<const ad::Tensor> grads, AdamState& state,
               const AdamConfig& cfg);

struct TrainConfig {
  double lambda = 0.0;
  double learning_rate = 1e-2;
  std::size_t batch_size = 512;
  std::size_t epochs = 100;
  /// Applied to both hidden layers during training; 0 disables dropout.
  double dropout_rate = 0.25;
  std::uint64_t seed = 0;
  double tau = 0.1;
  std::size_t hidden = 128;
  /// Per-feature FGSM step; empty disables adversarial augmentation.
  std::vector<double> adversarial_eps;
};

struct TrainResult {
  MlpParams params;
  std::vector<double> epoch_loss;  // size-weighted mean batch loss
};

/// Minibatch Adam on a standardized dataset. Throws DivergenceError with the
/// epoch and batch when the loss stops being finite.
TrainResult train(const Dataset& data, const TrainConfig& cfg);

/// T stochastic passes with dropout on, aggregated by aggregate_mc. Pass t
/// uses the t-th sample_dropout_masks draw from std::mt19937_64(seed).
std::vector<GaussianPrediction> mc_dropout_predict(const MlpParams& params, const ad::Tensor& x,
                                                   std::size_t passes, double rate,
                                                   std::uint64_t seed);

/// x + eps * sign(d NLL / d x), with the NLL of the deterministic forward.
ad::Tensor fgsm_perturb(const MlpParams& params, const ad::Tensor& x, std::span<const double> y,
                        std::span<const double> eps);

struct EnsembleConfig {
  std::size_t size = 5;
  /// Multiplies the per-feature range of the training inputs.
  double adv_eps_scale = 0.01;
  /// Train every member with this seed instead of distinct derived seeds.
  std::optional<std::uint64_t> shared_seed;
  std::size_t threads = 0;  // 0 = hardware concurrency
};

struct Ensemble {
  std::vector<MlpParams> members;
};

/// max - min of each feature column.
std::vector<double> feature_ranges(const ad::Tensor& x);

/// Seed of ensemble member k derived from the base seed.
std::uint64_t member_seed(std::uint64_t base, std::size_t k);

/// Members are trained without dropout, with FGSM augmentation when
/// adv_eps_scale > 0.
Ensemble train_ensemble(const Dataset& data, const TrainConfig& cfg, const EnsembleConfig& ens);
std::vector<GaussianPrediction> predict_ensemble(const Ensemble& ensemble, const ad::Tensor& x);

/// Binary container: "QRCM", u32 version, u32 layer count, per layer i32
/// rows and cols, then float64 weights and biases in layer order. All
/// little-endian.
void save_params(std::ostream& os, const MlpParams& params);
MlpParams load_params(std::istream& is);

}  // namespace qrcal
