#include "qrcal/softsort.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>

#include "qrcal/error.hpp"

namespace qrcal {

namespace {

ad::Var as_vector(ad::Var s) {
  if (s.shape().size() == 1) return s;
  if (s.shape().size() == 2 && (s.shape()[0] == 1 || s.shape()[1] == 1)) {
    return ad::reshape(s, {s.size()});
  }
  throw ShapeError("soft sort: expected a vector, got shape " + ad::shape_str(s.shape()));
}

}  // namespace

ad::Var soft_permutation(ad::Var s, const SoftSortConfig& cfg) {
  if (!(cfg.tau > 0.0)) throw DomainError("soft sort: temperature must be positive");
  s = as_vector(s);
  const std::size_t n = s.size();
  if (n == 0) throw DomainError("soft sort: empty input");
  ad::Tape& tape = s.tape();

  // Row coefficient (n + 1 - 2i) for descending, negated row order for ascending.
  ad::Tensor coef({n, 1});
  for (std::size_t i = 0; i < n; ++i) {
    const double desc = static_cast<double>(n + 1) - 2.0 * static_cast<double>(i + 1);
    coef[i] = cfg.order == SortOrder::kDescending ? desc : -desc;
  }

  ad::Var row = ad::reshape(s, {1, n});
  ad::Var spread = ad::matmul(ad::pairwise_abs_diff(s), tape.constant(ad::Tensor({n, 1}, 1.0)));
  ad::Var logits = ad::matmul(tape.constant(std::move(coef)), row) - ad::reshape(spread, {1, n});
  return ad::softmax_rows(logits * (1.0 / cfg.tau));
}

ad::Var soft_sorted(ad::Var s, const SoftSortConfig& cfg) {
  if (!(cfg.tau > 0.0)) throw DomainError("soft sort: temperature must be positive");
  s = as_vector(s);
  const std::size_t n = s.size();
  if (n == 0) throw DomainError("soft sort: empty input");

  // Same value as soft_permutation(s) * s, computed in one pass. Only the
  // n x n permutation is kept for the backward rule.
  const auto& x = s.value();
  const double inv_tau = 1.0 / cfg.tau;
  std::vector<double> spread(n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t k = 0; k < n; ++k) spread[j] += std::fabs(x[j] - x[k]);
  }
  std::vector<double> coef(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double desc = static_cast<double>(n + 1) - 2.0 * static_cast<double>(i + 1);
    coef[i] = cfg.order == SortOrder::kDescending ? desc : -desc;
  }
  auto perm = std::make_shared<std::vector<double>>(n * n);
  ad::Tensor out({n});
  for (std::size_t i = 0; i < n; ++i) {
    double* row = perm->data() + i * n;
    double top = -INFINITY;
    for (std::size_t j = 0; j < n; ++j) {
      row[j] = (coef[i] * x[j] - spread[j]) * inv_tau;
      top = std::max(top, row[j]);
    }
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += (row[j] = std::exp(row[j] - top));
    double acc = 0.0;
    for (std::size_t j = 0; j < n; ++j) acc += (row[j] /= z) * x[j];
    out[i] = acc;
  }

  return s.tape().record(
      "soft_sorted", std::move(out), {s},
      [perm, coef = std::move(coef), n, inv_tau](const ad::Tensor& g, const ad::Tensor& out,
                                                 std::span<const ad::Tensor* const> in,
                                                 std::span<ad::Tensor* const> grads) {
        const ad::Tensor& x = *in[0];
        ad::Tensor& gx = *grads[0];
        // d spread_j accumulated from the logits, then pushed through |x_j - x_k|.
        std::vector<double> d_spread(n, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
          const double* row = perm->data() + i * n;
          for (std::size_t j = 0; j < n; ++j) {
            const double d_logit = row[j] * g[i] * (x[j] - out[i]);
            gx[j] += g[i] * row[j] + d_logit * coef[i] * inv_tau;
            d_spread[j] -= d_logit * inv_tau;
          }
        }
        for (std::size_t m = 0; m < n; ++m) {
          double acc = 0.0;
          for (std::size_t k = 0; k < n; ++k) {
            const double d = x[m] - x[k];
            if (d != 0.0) acc += (d > 0.0 ? 1.0 : -1.0) * (d_spread[m] + d_spread[k]);
          }
          gx[m] += acc;
        }
      });
}

std::vector<double> soft_sort_values(std::span<const double> s, const SoftSortConfig& cfg) {
  ad::Tape tape;
  ad::Var v = tape.constant(ad::Tensor::vector({s.begin(), s.end()}));
  return soft_sorted(v, cfg).value().values();
}

}  // namespace qrcal
