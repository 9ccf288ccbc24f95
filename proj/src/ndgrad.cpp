#include "qrcal/ndgrad.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "qrcal/error.hpp"

namespace qrcal::ad {

namespace {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " +
                   shape_str(b));
}

void require_rank(const char* op, const Tensor& t, std::size_t rank) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) +
                     " input, got shape " + shape_str(t.shape()));
  }
}

// Rank <= 2 operands viewed as (rows, cols).
struct View2 {
  std::size_t rows;
  std::size_t cols;
};

View2 view2(const Shape& s) {
  switch (s.size()) {
    case 0:
      return {1, 1};
    case 1:
      return {1, s[0]};
    case 2:
      return {s[0], s[1]};
    default:
      throw ShapeError("tensor of rank " + std::to_string(s.size()) +
                       " is not supported by elementwise ops");
  }
}

struct Broadcast {
  View2 a;
  View2 b;
  View2 out;
  Shape out_shape;

  std::size_t a_index(std::size_t r, std::size_t c) const {
    return (a.rows == 1 ? 0 : r) * a.cols + (a.cols == 1 ? 0 : c);
  }
  std::size_t b_index(std::size_t r, std::size_t c) const {
    return (b.rows == 1 ? 0 : r) * b.cols + (b.cols == 1 ? 0 : c);
  }
};

Broadcast broadcast(const char* op, const Shape& sa, const Shape& sb) {
  Broadcast bc{view2(sa), view2(sb), {}, {}};
  auto merge = [&](std::size_t x, std::size_t y) {
    if (x == y || y == 1) return x;
    if (x == 1) return y;
    shape_error(op, sa, sb);
  };
  bc.out = {merge(bc.a.rows, bc.b.rows), merge(bc.a.cols, bc.b.cols)};
  switch (std::max(sa.size(), sb.size())) {
    case 0:
      bc.out_shape = {};
      break;
    case 1:
      bc.out_shape = {bc.out.cols};
      break;
    default:
      bc.out_shape = {bc.out.rows, bc.out.cols};
  }
  return bc;
}

// Elementwise binary op with broadcasting. `df` returns the pair of partial
// derivatives (d out/d a, d out/d b) at a point.
template <class F, class DF>
Var binary(const char* op, Var a, Var b, F f, DF df) {
  const Tensor& ta = a.value();
  const Tensor& tb = b.value();
  Broadcast bc = broadcast(op, ta.shape(), tb.shape());
  Tensor out(bc.out_shape);
  for (std::size_t r = 0; r < bc.out.rows; ++r) {
    for (std::size_t c = 0; c < bc.out.cols; ++c) {
      out[r * bc.out.cols + c] = f(ta[bc.a_index(r, c)], tb[bc.b_index(r, c)]);
    }
  }
  return a.tape().record(
      op, std::move(out), {a, b},
      [bc, df](const Tensor& g, const Tensor&, std::span<const Tensor* const> in,
               std::span<Tensor* const> grads) {
        const Tensor& x = *in[0];
        const Tensor& y = *in[1];
        for (std::size_t r = 0; r < bc.out.rows; ++r) {
          for (std::size_t c = 0; c < bc.out.cols; ++c) {
            std::size_t ia = bc.a_index(r, c);
            std::size_t ib = bc.b_index(r, c);
            auto [da, db] = df(x[ia], y[ib]);
            double go = g[r * bc.out.cols + c];
            if (grads[0]) (*grads[0])[ia] += go * da;
            if (grads[1]) (*grads[1])[ib] += go * db;
          }
        }
      });
}

// Elementwise unary op; `df(x, y)` is d y/d x given input x and output y.
template <class F, class DF>
Var unary(const char* op, Var a, F f, DF df) {
  const Tensor& ta = a.value();
  Tensor out(ta.shape());
  for (std::size_t i = 0; i < ta.size(); ++i) out[i] = f(ta[i]);
  return a.tape().record(op, std::move(out), {a},
                         [df](const Tensor& g, const Tensor& y,
                              std::span<const Tensor* const> in,
                              std::span<Tensor* const> grads) {
                           const Tensor& x = *in[0];
                           Tensor& gx = *grads[0];
                           for (std::size_t i = 0; i < x.size(); ++i) {
                             gx[i] += g[i] * df(x[i], y[i]);
                           }
                         });
}

double sign(double x) { return (x > 0.0) - (x < 0.0); }

}  // namespace

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

// --- Tensor -----------------------------------------------------------------

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_size(shape_) != data_.size()) {
    throw ShapeError("tensor: shape " + shape_str(shape_) + " does not match " +
                     std::to_string(data_.size()) + " values");
  }
}

Tensor Tensor::vector(std::vector<double> v) {
  Shape s{v.size()};
  return Tensor(std::move(s), std::move(v));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> v) {
  return Tensor({rows, cols}, std::move(v));
}

double Tensor::item() const {
  if (data_.size() != 1) {
    throw ShapeError("item: tensor of shape " + shape_str(shape_) + " is not a scalar");
  }
  return data_[0];
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

// --- Tape -------------------------------------------------------------------

const Tensor& Var::value() const { return tape_->nodes_[id_].value; }

bool Var::requires_grad() const { return tape_->nodes_[id_].requires_grad; }

Var Tape::variable(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, nullptr, true});
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, nullptr, false});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(const char* op, Tensor value, std::span<const Var> parents,
                 BackwardFn backward) {
  if (!value.all_finite()) {
    throw DomainError(std::string(op) + ": produced a non-finite value");
  }
  bool needs = false;
  for (const Var& p : parents) {
    if (p.tape_ != this) throw Error(std::string(op) + ": operands live on different tapes");
    needs = needs || nodes_[p.id_].requires_grad;
  }
  Node node{std::move(value), {}, nullptr, needs};
  if (needs) {
    node.parents.reserve(parents.size());
    for (const Var& p : parents) node.parents.push_back(p.id_);
    node.backward = std::move(backward);
  }
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

std::vector<Tensor> Tape::gradients(Var output, std::span<const Var> wrt) const {
  if (output.tape_ != this) throw Error("gradients: output belongs to another tape");
  const Node& out_node = nodes_[output.id_];
  if (out_node.value.size() != 1) {
    throw ShapeError("gradients: output must be a scalar, got shape " +
                     shape_str(out_node.value.shape()));
  }
  for (const Var& w : wrt) {
    if (w.tape_ != this || !nodes_[w.id_].requires_grad) {
      throw Error("gradients: requested gradient of a node without requires-grad");
    }
  }

  std::vector<Tensor> grads(output.id_ + 1);
  std::vector<char> has(output.id_ + 1, 0);
  grads[output.id_] = Tensor(out_node.value.shape(), 1.0);
  has[output.id_] = 1;

  std::vector<const Tensor*> inputs;
  std::vector<Tensor*> parent_grads;
  for (std::size_t i = output.id_ + 1; i-- > 0;) {
    const Node& node = nodes_[i];
    if (!has[i] || !node.requires_grad || !node.backward) continue;
    inputs.clear();
    parent_grads.clear();
    for (std::size_t p : node.parents) {
      const Node& parent = nodes_[p];
      inputs.push_back(&parent.value);
      if (parent.requires_grad) {
        if (!has[p]) {
          grads[p] = Tensor(parent.value.shape(), 0.0);
          has[p] = 1;
        }
        parent_grads.push_back(&grads[p]);
      } else {
        parent_grads.push_back(nullptr);
      }
    }
    node.backward(grads[i], node.value, inputs, parent_grads);
  }

  std::vector<Tensor> result;
  result.reserve(wrt.size());
  for (const Var& w : wrt) {
    if (w.id_ <= output.id_ && has[w.id_]) {
      result.push_back(grads[w.id_]);
    } else {
      result.emplace_back(w.value().shape(), 0.0);
    }
  }
  return result;
}

// --- ops --------------------------------------------------------------------

Var add(Var a, Var b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double) { return std::pair{1.0, 1.0}; });
}

Var sub(Var a, Var b) {
  return binary(
      "subtract", a, b, [](double x, double y) { return x - y; },
      [](double, double) { return std::pair{1.0, -1.0}; });
}

Var mul(Var a, Var b) {
  return binary(
      "multiply", a, b, [](double x, double y) { return x * y; },
      [](double x, double y) { return std::pair{y, x}; });
}

Var div(Var a, Var b) {
  const Tensor& tb = b.value();
  for (std::size_t i = 0; i < tb.size(); ++i) {
    if (tb[i] == 0.0) throw DomainError("divide: zero divisor at index " + std::to_string(i));
  }
  return binary(
      "divide", a, b, [](double x, double y) { return x / y; },
      [](double x, double y) { return std::pair{1.0 / y, -x / (y * y)}; });
}

Var add(Var a, double b) {
  return unary(
      "add", a, [b](double x) { return x + b; }, [](double, double) { return 1.0; });
}

Var mul(Var a, double b) {
  return unary(
      "multiply", a, [b](double x) { return x * b; }, [b](double, double) { return b; });
}

Var matmul(Var a, Var b) {
  const Tensor& ta = a.value();
  const Tensor& tb = b.value();
  if (ta.rank() != 2 || tb.rank() != 2 || ta.cols() != tb.rows()) {
    shape_error("matmul", ta.shape(), tb.shape());
  }
  const std::size_t n = ta.rows(), k = ta.cols(), m = tb.cols();
  Tensor out({n, m});
  for (std::size_t i = 0; i < n; ++i) {
    double* orow = &out[i * m];
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = ta[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = &tb[p * m];
      for (std::size_t j = 0; j < m; ++j) orow[j] += aip * brow[j];
    }
  }
  return a.tape().record(
      "matmul", std::move(out), {a, b},
      [n, k, m](const Tensor& g, const Tensor&, std::span<const Tensor* const> in,
                std::span<Tensor* const> grads) {
        const Tensor& x = *in[0];
        const Tensor& y = *in[1];
        if (grads[0]) {
          // dA = G * B^T
          Tensor& ga = *grads[0];
          for (std::size_t i = 0; i < n; ++i) {
            const double* grow = &g[i * m];
            for (std::size_t p = 0; p < k; ++p) {
              const double* brow = &y[p * m];
              double acc = 0.0;
              for (std::size_t j = 0; j < m; ++j) acc += grow[j] * brow[j];
              ga[i * k + p] += acc;
            }
          }
        }
        if (grads[1]) {
          // dB = A^T * G
          Tensor& gb = *grads[1];
          for (std::size_t i = 0; i < n; ++i) {
            const double* grow = &g[i * m];
            for (std::size_t p = 0; p < k; ++p) {
              const double aip = x[i * k + p];
              if (aip == 0.0) continue;
              double* gbrow = &gb[p * m];
              for (std::size_t j = 0; j < m; ++j) gbrow[j] += aip * grow[j];
            }
          }
        }
      });
}

Var sum(Var a) {
  const Tensor& ta = a.value();
  double s = 0.0;
  for (double v : ta.data()) s += v;
  return a.tape().record("sum", Tensor::scalar(s), {a},
                         [](const Tensor& g, const Tensor&, std::span<const Tensor* const>,
                            std::span<Tensor* const> grads) {
                           const double go = g[0];
                           for (double& v : grads[0]->data()) v += go;
                         });
}

Var mean(Var a) {
  const Tensor& ta = a.value();
  if (ta.size() == 0) throw DomainError("mean: empty tensor");
  double s = 0.0;
  for (double v : ta.data()) s += v;
  const double inv = 1.0 / static_cast<double>(ta.size());
  return a.tape().record("mean", Tensor::scalar(s * inv), {a},
                         [inv](const Tensor& g, const Tensor&, std::span<const Tensor* const>,
                               std::span<Tensor* const> grads) {
                           const double go = g[0] * inv;
                           for (double& v : grads[0]->data()) v += go;
                         });
}

Var exp(Var a) {
  return unary(
      "exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(Var a) {
  const Tensor& ta = a.value();
  for (std::size_t i = 0; i < ta.size(); ++i) {
    if (!(ta[i] > 0.0)) {
      throw DomainError("log: nonpositive argument " + std::to_string(ta[i]) + " at index " +
                        std::to_string(i));
    }
  }
  return unary(
      "log", a, [](double x) { return std::log(x); },
      [](double x, double) { return 1.0 / x; });
}

Var neg(Var a) {
  return unary(
      "negate", a, [](double x) { return -x; }, [](double, double) { return -1.0; });
}

Var abs(Var a) {
  return unary(
      "abs", a, [](double x) { return std::fabs(x); },
      [](double x, double) { return sign(x); });
}

Var tanh(Var a) {
  return unary(
      "tanh", a, [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

Var relu(Var a) {
  return unary(
      "relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var softplus(Var a) {
  return unary(
      "softplus", a,
      [](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::fabs(x))); },
      [](double x, double) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      });
}

Var clamp(Var a, double lo, double hi) {
  if (!(lo <= hi)) throw DomainError("clamp: lower bound exceeds upper bound");
  return unary(
      "clamp", a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
      [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

Var softmax_rows(Var a) {
  const Tensor& ta = a.value();
  require_rank("softmax_rows", ta, 2);
  const std::size_t n = ta.rows(), m = ta.cols();
  Tensor out({n, m});
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = &ta[i * m];
    double* orow = &out[i * m];
    const double mx = *std::max_element(row, row + m);
    double z = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      orow[j] = std::exp(row[j] - mx);
      z += orow[j];
    }
    for (std::size_t j = 0; j < m; ++j) orow[j] /= z;
  }
  return a.tape().record(
      "softmax_rows", std::move(out), {a},
      [n, m](const Tensor& g, const Tensor& y, std::span<const Tensor* const>,
             std::span<Tensor* const> grads) {
        Tensor& gx = *grads[0];
        for (std::size_t i = 0; i < n; ++i) {
          const double* yrow = &y[i * m];
          const double* grow = &g[i * m];
          double dot = 0.0;
          for (std::size_t j = 0; j < m; ++j) dot += grow[j] * yrow[j];
          for (std::size_t j = 0; j < m; ++j) gx[i * m + j] += yrow[j] * (grow[j] - dot);
        }
      });
}

Var pairwise_abs_diff(Var s) {
  const Tensor& ts = s.value();
  if (ts.rank() > 2 || (ts.rank() == 2 && ts.rows() != 1 && ts.cols() != 1)) {
    throw ShapeError("pairwise_abs_diff: expected a vector, got shape " + shape_str(ts.shape()));
  }
  const std::size_t n = ts.size();
  Tensor out({n, n});
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t k = 0; k < n; ++k) out[j * n + k] = std::fabs(ts[j] - ts[k]);
  }
  return s.tape().record("pairwise_abs_diff", std::move(out), {s},
                         [n](const Tensor& g, const Tensor&, std::span<const Tensor* const> in,
                             std::span<Tensor* const> grads) {
                           const Tensor& x = *in[0];
                           Tensor& gx = *grads[0];
                           for (std::size_t j = 0; j < n; ++j) {
                             for (std::size_t k = 0; k < n; ++k) {
                               const double d = g[j * n + k] * sign(x[j] - x[k]);
                               gx[j] += d;
                               gx[k] -= d;
                             }
                           }
                         });
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z * std::numbers::sqrt2 / 2.0); }

double normal_pdf(double z) {
  return std::exp(-0.5 * z * z) * (std::numbers::inv_sqrtpi / std::numbers::sqrt2);
}

Var std_normal_cdf(Var a) {
  return unary("std_normal_cdf", a, normal_cdf, [](double x, double) { return normal_pdf(x); });
}

Var column(Var a, std::size_t j) {
  const Tensor& ta = a.value();
  require_rank("column", ta, 2);
  if (j >= ta.cols()) {
    throw ShapeError("column: index " + std::to_string(j) + " out of range for shape " +
                     shape_str(ta.shape()));
  }
  const std::size_t n = ta.rows(), m = ta.cols();
  Tensor out({n});
  for (std::size_t i = 0; i < n; ++i) out[i] = ta[i * m + j];
  return a.tape().record("column", std::move(out), {a},
                         [n, m, j](const Tensor& g, const Tensor&, std::span<const Tensor* const>,
                                   std::span<Tensor* const> grads) {
                           for (std::size_t i = 0; i < n; ++i) (*grads[0])[i * m + j] += g[i];
                         });
}

Var slice(Var a, std::size_t begin, std::size_t end) {
  const Tensor& ta = a.value();
  if (ta.rank() != 1 && ta.rank() != 2) {
    throw ShapeError("slice: expected rank 1 or 2, got shape " + shape_str(ta.shape()));
  }
  const std::size_t len = ta.shape()[0];
  if (begin > end || end > len) {
    throw ShapeError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") out of bounds for shape " + shape_str(ta.shape()));
  }
  const std::size_t stride = ta.rank() == 2 ? ta.cols() : 1;
  Shape shape = ta.shape();
  shape[0] = end - begin;
  std::vector<double> vals(ta.data().begin() + static_cast<std::ptrdiff_t>(begin * stride),
                           ta.data().begin() + static_cast<std::ptrdiff_t>(end * stride));
  return a.tape().record("slice", Tensor(std::move(shape), std::move(vals)), {a},
                         [begin, stride](const Tensor& g, const Tensor&,
                                         std::span<const Tensor* const>,
                                         std::span<Tensor* const> grads) {
                           for (std::size_t i = 0; i < g.size(); ++i) {
                             (*grads[0])[begin * stride + i] += g[i];
                           }
                         });
}

Var index(Var a, std::size_t i) {
  const Tensor& ta = a.value();
  if (i >= ta.size()) {
    throw ShapeError("index: " + std::to_string(i) + " out of range for shape " +
                     shape_str(ta.shape()));
  }
  return a.tape().record("index", Tensor::scalar(ta[i]), {a},
                         [i](const Tensor& g, const Tensor&, std::span<const Tensor* const>,
                             std::span<Tensor* const> grads) { (*grads[0])[i] += g[0]; });
}

Var concat(std::span<const Var> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Tensor& first = parts[0].value();
  const std::size_t rank = first.rank();
  if (rank == 0 || rank > 2 || axis >= rank) {
    throw ShapeError("concat: unsupported axis " + std::to_string(axis) + " for shape " +
                     shape_str(first.shape()));
  }
  Shape out_shape = first.shape();
  out_shape[axis] = 0;
  for (const Var& p : parts) {
    const Shape& s = p.value().shape();
    if (s.size() != rank) shape_error("concat", first.shape(), s);
    for (std::size_t d = 0; d < rank; ++d) {
      if (d != axis && s[d] != first.shape()[d]) shape_error("concat", first.shape(), s);
    }
    out_shape[axis] += s[axis];
  }
  Tensor out(out_shape);
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const Var& p : parts) {
    offsets.push_back(off);
    const Tensor& t = p.value();
    if (rank == 1 || axis == 0) {
      std::copy(t.data().begin(), t.data().end(),
                out.data().begin() + static_cast<std::ptrdiff_t>(out.size() / out_shape[0] * off));
    } else {
      for (std::size_t r = 0; r < t.rows(); ++r) {
        for (std::size_t c = 0; c < t.cols(); ++c) out.at(r, off + c) = t.at(r, c);
      }
    }
    off += t.shape()[axis];
  }
  return parts[0].tape().record(
      "concat", std::move(out), parts,
      [rank, axis, offsets](const Tensor& g, const Tensor&, std::span<const Tensor* const> in,
                            std::span<Tensor* const> grads) {
        for (std::size_t k = 0; k < in.size(); ++k) {
          if (!grads[k]) continue;
          Tensor& gk = *grads[k];
          if (rank == 1 || axis == 0) {
            const std::size_t start = offsets[k] * (rank == 2 ? g.cols() : 1);
            for (std::size_t i = 0; i < gk.size(); ++i) gk[i] += g[start + i];
          } else {
            for (std::size_t r = 0; r < gk.rows(); ++r) {
              for (std::size_t c = 0; c < gk.cols(); ++c) gk.at(r, c) += g.at(r, offsets[k] + c);
            }
          }
        }
      });
}

Var reshape(Var a, Shape shape) {
  const Tensor& ta = a.value();
  if (shape_size(shape) != ta.size()) shape_error("reshape", ta.shape(), shape);
  std::vector<double> vals(ta.data().begin(), ta.data().end());
  return a.tape().record("reshape", Tensor(std::move(shape), std::move(vals)), {a},
                         [](const Tensor& g, const Tensor&, std::span<const Tensor* const>,
                            std::span<Tensor* const> grads) {
                           for (std::size_t i = 0; i < g.size(); ++i) (*grads[0])[i] += g[i];
                         });
}

Var dropout(Var a, const Tensor& mask, double rate) {
  const Tensor& ta = a.value();
  if (mask.shape() != ta.shape()) shape_error("dropout", ta.shape(), mask.shape());
  if (!(rate >= 0.0 && rate < 1.0)) throw DomainError("dropout: rate must lie in [0, 1)");
  const double scale = 1.0 / (1.0 - rate);
  Tensor out(ta.shape());
  for (std::size_t i = 0; i < ta.size(); ++i) out[i] = ta[i] * mask[i] * scale;
  return a.tape().record("dropout", std::move(out), {a},
                         [mask, scale](const Tensor& g, const Tensor&,
                                       std::span<const Tensor* const>,
                                       std::span<Tensor* const> grads) {
                           for (std::size_t i = 0; i < g.size(); ++i) {
                             (*grads[0])[i] += g[i] * mask[i] * scale;
                           }
                         });
}

double finite_diff_check(const std::function<Var(Var)>& f, const Tensor& x, double h) {
  if (!(h > 0.0)) throw DomainError("finite_diff_check: step must be positive");
  Tensor analytic;
  {
    Tape tape;
    Var xv = tape.variable(x);
    Var y = f(xv);
    analytic = tape.gradients(y, {xv})[0];
  }
  auto eval = [&f](const Tensor& at) {
    Tape tape;
    return f(tape.constant(at)).value().item();
  };
  double worst = 0.0;
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + h;
    const double up = eval(probe);
    probe[i] = x[i] - h;
    const double down = eval(probe);
    probe[i] = x[i];
    const double numeric = (up - down) / (2.0 * h);
    worst = std::max(worst, std::fabs(analytic[i] - numeric) / (std::fabs(numeric) + 1e-8));
  }
  return worst;
}

}  // namespace qrcal::ad
