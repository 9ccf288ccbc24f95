#pragma once

// Minimal reverse-mode automatic differentiation over dense float64 tensors.
//
// A Tape owns every node created while evaluating an expression. Nodes are
// appended in evaluation order, so the append order is already a topological
// order and the backward sweep simply walks the tape in reverse. A Tape is not
// thread-safe; use one tape per thread.

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace qrcal::ad {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);

/// Dense row-major array of doubles. Rank 0 (scalar), 1 and 2 are the only
/// ranks the ops below understand.
class Tensor {
 public:
  Tensor() : data_(1, 0.0) {}
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double v) { return Tensor({}, std::vector<double>{v}); }
  static Tensor vector(std::vector<double> v);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> v);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  // For rank 2 only.
  std::size_t rows() const { return shape_.at(0); }
  std::size_t cols() const { return shape_.at(1); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  const std::vector<double>& values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  const double& operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  const double& at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

  /// Value of a single-element tensor.
  double item() const;
  bool all_finite() const;

 private:
  Shape shape_;
  std::vector<double> data_;
};

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid as long as the tape is.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t size() const { return value().size(); }
  bool requires_grad() const;
  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Local gradient rule. `inputs` are the parents' values, `grads[k]` is the
/// gradient buffer of parent k or nullptr when that parent does not need one.
/// Rules must accumulate (+=) into the buffers.
using BackwardFn = std::function<void(const Tensor& grad_out, const Tensor& out,
                                      std::span<const Tensor* const> inputs,
                                      std::span<Tensor* const> grads)>;

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf that gradients can be taken with respect to.
  Var variable(Tensor value);
  /// Leaf without gradient tracking.
  Var constant(Tensor value);

  /// Records an op result. Checks that the value is finite.
  Var record(const char* op, Tensor value, std::span<const Var> parents,
             BackwardFn backward);
  Var record(const char* op, Tensor value, std::initializer_list<Var> parents,
             BackwardFn backward) {
    return record(op, std::move(value), std::span<const Var>(parents.begin(), parents.size()),
                  std::move(backward));
  }

  /// d output / d wrt for every entry of `wrt`. The output must hold a
  /// single element and every wrt node must be a variable (or depend on one).
  std::vector<Tensor> gradients(Var output, std::span<const Var> wrt) const;
  std::vector<Tensor> gradients(Var output, std::initializer_list<Var> wrt) const {
    return gradients(output, std::span<const Var>(wrt.begin(), wrt.size()));
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  friend class Var;
  struct Node {
    Tensor value;
    std::vector<std::size_t> parents;
    BackwardFn backward;
    bool requires_grad = false;
  };
  std::deque<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Primitive ops. Binary elementwise ops broadcast rank <= 2 operands in the
// numpy sense (size-1 dimensions stretch).

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
/// Errors if any divisor is zero.
Var div(Var a, Var b);
Var add(Var a, double b);
Var mul(Var a, double b);
Var matmul(Var a, Var b);
Var sum(Var a);
Var mean(Var a);
Var exp(Var a);
/// Errors if any argument is nonpositive.
Var log(Var a);
Var neg(Var a);
Var abs(Var a);
Var tanh(Var a);
Var relu(Var a);
Var softplus(Var a);
Var clamp(Var a, double lo, double hi);
/// Row-wise softmax of a rank-2 tensor.
Var softmax_rows(Var a);
/// For a vector s of length n, the n x n matrix |s_j - s_k|.
Var pairwise_abs_diff(Var s);
/// Standard normal CDF; the gradient is the exact normal density.
Var std_normal_cdf(Var a);
/// Column j of a rank-2 tensor as a vector.
Var column(Var a, std::size_t j);
/// Rows [begin, end) of a rank-2 tensor, or elements of a vector.
Var slice(Var a, std::size_t begin, std::size_t end);
/// Single element as a scalar.
Var index(Var a, std::size_t i);
/// Concatenates vectors, or rank-2 tensors along rows (axis 0) or columns (axis 1).
Var concat(std::span<const Var> parts, std::size_t axis = 0);
Var reshape(Var a, Shape shape);
/// Inverted dropout: a * mask / (1 - rate). The mask holds 0/1 entries and
/// is sampled by the caller.
Var dropout(Var a, const Tensor& mask, double rate);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }
inline Var operator-(Var a) { return neg(a); }
inline Var operator+(Var a, double b) { return add(a, b); }
inline Var operator+(double a, Var b) { return add(b, a); }
inline Var operator-(Var a, double b) { return add(a, -b); }
inline Var operator-(double a, Var b) { return add(neg(b), a); }
inline Var operator*(Var a, double b) { return mul(a, b); }
inline Var operator*(double a, Var b) { return mul(b, a); }

/// Standard normal CDF and density on plain doubles.
double normal_cdf(double z);
double normal_pdf(double z);

/// Compares the tape gradient of a scalar function against central
/// differences with step h. Returns max_i |ad_i - fd_i| / (|fd_i| + 1e-8).
double finite_diff_check(const std::function<Var(Var)>& f, const Tensor& x, double h);

}  // namespace qrcal::ad
