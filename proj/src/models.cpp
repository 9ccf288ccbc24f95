#include "qrcal/models.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <cstring>
#include <exception>
#include <istream>
#include <mutex>
#include <numeric>
#include <ostream>
#include <thread>

#include "qrcal/ckl.hpp"
#include "qrcal/error.hpp"

namespace qrcal {

namespace {

using ad::Tensor;
using ad::Var;

// Independent streams for init, shuffling and dropout from one seed.
std::mt19937_64 stream_rng(std::uint64_t seed, std::uint32_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    stream};
  return std::mt19937_64(seq);
}

Tensor uniform_tensor(ad::Shape shape, double bound, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> u(-bound, bound);
  for (double& v : t.data()) v = u(rng);
  return t;
}

Tensor rows_of(const Tensor& x, std::span<const std::size_t> idx) {
  const std::size_t d = x.cols();
  Tensor out({idx.size(), d});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    std::copy_n(&x[idx[i] * d], d, &out[i * d]);
  }
  return out;
}

Tensor targets_of(std::span<const double> y, std::span<const std::size_t> idx) {
  Tensor out({idx.size()});
  for (std::size_t i = 0; i < idx.size(); ++i) out[i] = y[idx[i]];
  return out;
}

std::vector<GaussianPrediction> to_predictions(const MlpOutput& out) {
  const auto& mu = out.mu.value();
  const auto& sigma = out.sigma.value();
  std::vector<GaussianPrediction> preds(mu.size());
  for (std::size_t i = 0; i < mu.size(); ++i) preds[i] = {mu[i], sigma[i]};
  return preds;
}

}  // namespace

bool MlpParams::all_finite() const {
  return std::all_of(layers.begin(), layers.end(), [](const DenseLayer& l) {
    return l.weight.all_finite() && l.bias.all_finite();
  });
}

std::vector<std::string> MlpParams::block_names() const {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    names.push_back("layer" + std::to_string(i + 1) + ".weight");
    names.push_back("layer" + std::to_string(i + 1) + ".bias");
  }
  return names;
}

std::vector<Tensor*> MlpParams::blocks() {
  std::vector<Tensor*> out;
  for (auto& l : layers) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  return out;
}

std::vector<const Tensor*> MlpParams::blocks() const {
  std::vector<const Tensor*> out;
  for (const auto& l : layers) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  return out;
}

MlpParams init_mlp(std::size_t input_dim, std::size_t hidden, std::uint64_t seed) {
  if (input_dim == 0 || hidden == 0) throw ConfigError("init_mlp: dimensions must be positive");
  auto rng = stream_rng(seed, 1);
  MlpParams p;
  const std::size_t fan_in[3] = {input_dim, hidden, hidden};
  const std::size_t fan_out[3] = {hidden, hidden, 2};
  for (int l = 0; l < 3; ++l) {
    const double bound = l < 2 ? std::sqrt(6.0 / static_cast<double>(fan_in[l]))
                               : 1.0 / std::sqrt(static_cast<double>(fan_in[l]));
    p.layers.push_back({uniform_tensor({fan_in[l], fan_out[l]}, bound, rng),
                        Tensor({1, fan_out[l]}, 0.0)});
  }
  return p;
}

DropoutMasks sample_dropout_masks(std::size_t rows, std::size_t hidden, double rate,
                                  std::mt19937_64& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("dropout rate must lie in [0, 1)");
  DropoutMasks m{Tensor({rows, hidden}, 1.0), Tensor({rows, hidden}, 1.0), rate};
  if (rate == 0.0) return m;
  std::bernoulli_distribution keep(1.0 - rate);
  for (double& v : m.hidden1.data()) v = keep(rng) ? 1.0 : 0.0;
  for (double& v : m.hidden2.data()) v = keep(rng) ? 1.0 : 0.0;
  return m;
}

std::vector<Var> bind_params(ad::Tape& tape, const MlpParams& params) {
  std::vector<Var> vars;
  for (const Tensor* t : params.blocks()) vars.push_back(tape.variable(*t));
  return vars;
}

MlpOutput mlp_forward(std::span<const Var> params, Var x, const DropoutMasks* masks) {
  if (params.size() != 6) throw ShapeError("mlp_forward: expected 6 parameter blocks");
  const auto& w1 = params[0].value();
  if (x.value().rank() != 2 || x.value().cols() != w1.rows()) {
    throw ShapeError("mlp_forward: input of shape " + ad::shape_str(x.shape()) + " but the model expects " +
                     std::to_string(w1.rows()) + " features");
  }
  Var h = ad::relu(ad::matmul(x, params[0]) + params[1]);
  if (masks) h = ad::dropout(h, masks->hidden1, masks->rate);
  h = ad::relu(ad::matmul(h, params[2]) + params[3]);
  if (masks) h = ad::dropout(h, masks->hidden2, masks->rate);
  Var out = ad::matmul(h, params[4]) + params[5];
  return {ad::column(out, 0), ad::softplus(ad::column(out, 1)) + kSigmaOffset};
}

std::vector<GaussianPrediction> predict(const MlpParams& params, const Tensor& x) {
  ad::Tape tape;
  std::vector<Var> vars;
  for (const Tensor* t : params.blocks()) vars.push_back(tape.constant(*t));
  return to_predictions(mlp_forward(vars, tape.constant(x)));
}

void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads,
               std::span<const std::string> names, AdamState& state, const AdamConfig& cfg) {
  if (params.size() != grads.size()) throw ShapeError("adam_step: parameter/gradient count mismatch");
  for (std::size_t k = 0; k < grads.size(); ++k) {
    if (!grads[k].all_finite()) {
      throw DivergenceError("non-finite gradient in " +
                            (k < names.size() ? names[k] : "block " + std::to_string(k)));
    }
  }
  if (state.m.empty()) {
    for (const Tensor* p : params) {
      state.m.emplace_back(p->shape(), 0.0);
      state.v.emplace_back(p->shape(), 0.0);
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto w = params[k]->data();
    auto g = grads[k].data();
    auto m = state.m[k].data();
    auto v = state.v[k].data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      w[i] -= cfg.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.eps);
    }
  }
}

void adam_step(MlpParams& params, std::span<const Tensor> grads, AdamState& state,
               const AdamConfig& cfg) {
  const auto blocks = params.blocks();
  const auto names = params.block_names();
  adam_step(blocks, grads, names, state, cfg);
}

TrainResult train(const Dataset& data, const TrainConfig& cfg) {
  if (data.size() < 2) throw DomainError("train: need at least two rows");
  if (cfg.lambda < 0.0) throw ConfigError("train: lambda must be nonnegative");
  if (cfg.batch_size < 2) throw ConfigError("train: batch size must be at least 2");
  if (!(cfg.dropout_rate >= 0.0 && cfg.dropout_rate < 1.0)) {
    throw ConfigError("train: dropout rate must lie in [0, 1)");
  }
  const bool adversarial = !cfg.adversarial_eps.empty();
  if (adversarial && cfg.adversarial_eps.size() != data.dims()) {
    throw ShapeError("train: adversarial eps has " + std::to_string(cfg.adversarial_eps.size()) +
                     " entries for " + std::to_string(data.dims()) + " features");
  }

  TrainResult result{init_mlp(data.dims(), cfg.hidden, cfg.seed), {}};
  auto shuffle_rng = stream_rng(cfg.seed, 2);
  auto dropout_rng = stream_rng(cfg.seed, 3);
  const AdamConfig adam{cfg.learning_rate};
  AdamState state;
  const SoftSortConfig sort_cfg{cfg.tau};

  const std::size_t n = data.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  // Batch boundaries; a size-1 remainder joins the previous batch.
  std::vector<std::size_t> bounds;
  for (std::size_t b = 0; b < n; b += cfg.batch_size) bounds.push_back(b);
  bounds.push_back(n);
  if (bounds.size() > 2 && n - bounds[bounds.size() - 2] == 1) bounds.erase(bounds.end() - 2);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double epoch_acc = 0.0;
    for (std::size_t b = 0; b + 1 < bounds.size(); ++b) {
      const std::span<const std::size_t> idx(order.data() + bounds[b], bounds[b + 1] - bounds[b]);
      try {
        const Tensor xb = rows_of(data.features, idx);
        const Tensor yb = targets_of(data.targets, idx);
        ad::Tape tape;
        const auto vars = bind_params(tape, result.params);
        std::optional<DropoutMasks> masks;
        if (cfg.dropout_rate > 0.0) {
          masks = sample_dropout_masks(idx.size(), cfg.hidden, cfg.dropout_rate, dropout_rng);
        }
        auto out = mlp_forward(vars, tape.constant(xb), masks ? &*masks : nullptr);
        Var loss = total_loss(yb, out.mu, out.sigma, cfg.lambda, sort_cfg);
        if (adversarial) {
          const Tensor xa = fgsm_perturb(result.params, xb, yb.values(), cfg.adversarial_eps);
          auto adv = mlp_forward(vars, tape.constant(xa), masks ? &*masks : nullptr);
          loss = (loss + total_loss(yb, adv.mu, adv.sigma, cfg.lambda, sort_cfg)) * 0.5;
        }
        const double value = loss.value().item();
        if (!std::isfinite(value)) throw DivergenceError("loss is not finite");
        const auto grads = tape.gradients(loss, vars);
        adam_step(result.params, grads, state, adam);
        epoch_acc += value * static_cast<double>(idx.size());
      } catch (const Error& e) {
        throw DivergenceError("training diverged at epoch " + std::to_string(epoch + 1) +
                              ", batch " + std::to_string(b + 1) + ": " + e.what());
      }
    }
    result.epoch_loss.push_back(epoch_acc / static_cast<double>(n));
  }
  return result;
}

std::vector<GaussianPrediction> mc_dropout_predict(const MlpParams& params, const Tensor& x,
                                                   std::size_t passes, double rate,
                                                   std::uint64_t seed) {
  if (passes < 1) throw DomainError("mc_dropout_predict: need at least one pass");
  std::mt19937_64 rng(seed);
  const std::size_t n = x.rows();
  std::vector<std::vector<GaussianPrediction>> per_row(n);
  ad::Tape tape;
  std::vector<Var> vars;
  for (const Tensor* t : params.blocks()) vars.push_back(tape.constant(*t));
  Var xv = tape.constant(x);
  for (std::size_t t = 0; t < passes; ++t) {
    const auto masks = sample_dropout_masks(n, params.hidden_dim(), rate, rng);
    const auto preds = to_predictions(mlp_forward(vars, xv, &masks));
    for (std::size_t i = 0; i < n; ++i) per_row[i].push_back(preds[i]);
  }
  std::vector<GaussianPrediction> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = aggregate_mc(per_row[i]);
  return out;
}

Tensor fgsm_perturb(const MlpParams& params, const Tensor& x, std::span<const double> y,
                    std::span<const double> eps) {
  if (eps.size() != x.cols()) throw ShapeError("fgsm_perturb: eps length must equal feature count");
  if (y.size() != x.rows()) throw ShapeError("fgsm_perturb: one target per row required");
  ad::Tape tape;
  std::vector<Var> vars;
  for (const Tensor* t : params.blocks()) vars.push_back(tape.constant(*t));
  Var xv = tape.variable(x);
  const auto out = mlp_forward(vars, xv);
  Var nll = gaussian_nll(Tensor({y.size()}, std::vector<double>(y.begin(), y.end())), out.mu,
                         out.sigma);
  const Tensor g = tape.gradients(nll, {xv})[0];
  Tensor xa = x;
  const std::size_t d = x.cols();
  for (std::size_t i = 0; i < xa.size(); ++i) {
    const double s = g[i] > 0.0 ? 1.0 : (g[i] < 0.0 ? -1.0 : 0.0);
    xa[i] += eps[i % d] * s;
  }
  return xa;
}

std::vector<double> feature_ranges(const Tensor& x) {
  std::vector<double> r(x.cols(), 0.0);
  for (std::size_t j = 0; j < x.cols(); ++j) {
    double lo = INFINITY, hi = -INFINITY;
    for (std::size_t i = 0; i < x.rows(); ++i) {
      lo = std::min(lo, x.at(i, j));
      hi = std::max(hi, x.at(i, j));
    }
    r[j] = x.rows() ? hi - lo : 0.0;
  }
  return r;
}

std::uint64_t member_seed(std::uint64_t base, std::size_t k) {
  auto rng = stream_rng(base, 100 + static_cast<std::uint32_t>(k));
  return rng();
}

Ensemble train_ensemble(const Dataset& data, const TrainConfig& cfg, const EnsembleConfig& ens) {
  if (ens.size < 1) throw ConfigError("ensemble size must be at least 1");
  if (!(ens.adv_eps_scale >= 0.0)) throw ConfigError("adversarial eps scale must be nonnegative");
  TrainConfig member_cfg = cfg;
  member_cfg.dropout_rate = 0.0;
  member_cfg.adversarial_eps.clear();
  if (ens.adv_eps_scale > 0.0) {
    for (double r : feature_ranges(data.features)) {
      member_cfg.adversarial_eps.push_back(ens.adv_eps_scale * r);
    }
  }

  Ensemble out;
  out.members.resize(ens.size);
  std::vector<std::exception_ptr> errors(ens.size);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t k = next++; k < ens.size; k = next++) {
      try {
        TrainConfig c = member_cfg;
        c.seed = ens.shared_seed ? *ens.shared_seed : member_seed(cfg.seed, k);
        out.members[k] = train(data, c).params;
      } catch (...) {
        errors[k] = std::current_exception();
      }
    }
  };
  std::size_t threads = ens.threads ? ens.threads : std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, ens.size);
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

std::vector<GaussianPrediction> predict_ensemble(const Ensemble& ensemble, const Tensor& x) {
  if (ensemble.members.empty()) throw DomainError("predict_ensemble: empty ensemble");
  std::vector<std::vector<GaussianPrediction>> per_member;
  for (const auto& m : ensemble.members) per_member.push_back(predict(m, x));
  std::vector<GaussianPrediction> out(x.rows());
  std::vector<GaussianPrediction> row(ensemble.members.size());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t k = 0; k < per_member.size(); ++k) row[k] = per_member[k][i];
    out[i] = aggregate_ensemble(row);
  }
  return out;
}

namespace {

constexpr char kMagic[4] = {'Q', 'R', 'C', 'M'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;

template <typename T>
void put_le(std::ostream& os, T v) {
  const auto bits = std::bit_cast<Bits<T>>(v);
  char buf[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
  os.write(buf, sizeof(T));
}

template <typename T>
T get_le(std::istream& is) {
  unsigned char buf[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(buf), sizeof(T))) {
    throw ConfigError("model file truncated");
  }
  Bits<T> bits = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) bits |= static_cast<Bits<T>>(buf[i]) << (8 * i);
  return std::bit_cast<T>(bits);
}

}  // namespace

void save_params(std::ostream& os, const MlpParams& params) {
  os.write(kMagic, 4);
  put_le<std::uint32_t>(os, kVersion);
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(params.layers.size()));
  for (const auto& l : params.layers) {
    put_le<std::int32_t>(os, static_cast<std::int32_t>(l.weight.rows()));
    put_le<std::int32_t>(os, static_cast<std::int32_t>(l.weight.cols()));
  }
  for (const auto& l : params.layers) {
    for (double v : l.weight.data()) put_le<double>(os, v);
    for (double v : l.bias.data()) put_le<double>(os, v);
  }
  if (!os) throw Error("failed to write model parameters");
}

MlpParams load_params(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw ConfigError("not a model file (bad magic)");
  }
  const auto version = get_le<std::uint32_t>(is);
  if (version != kVersion) throw ConfigError("unsupported model file version " + std::to_string(version));
  const auto n_layers = get_le<std::uint32_t>(is);
  if (n_layers == 0 || n_layers > 64) throw ConfigError("model file: implausible layer count");
  MlpParams p;
  for (std::uint32_t l = 0; l < n_layers; ++l) {
    const auto rows = get_le<std::int32_t>(is);
    const auto cols = get_le<std::int32_t>(is);
    if (rows <= 0 || cols <= 0) throw ConfigError("model file: invalid layer shape");
    const auto r = static_cast<std::size_t>(rows), c = static_cast<std::size_t>(cols);
    if (!p.layers.empty() && p.layers.back().weight.cols() != r) {
      throw ConfigError("model file: layer shapes do not chain");
    }
    p.layers.push_back({Tensor({r, c}), Tensor({1, c})});
  }
  for (auto& l : p.layers) {
    for (double& v : l.weight.data()) v = get_le<double>(is);
    for (double& v : l.bias.data()) v = get_le<double>(is);
  }
  return p;
}

}  // namespace qrcal
