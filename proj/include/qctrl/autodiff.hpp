#pragma once

// Reverse-mode automatic differentiation on a linear tape of dense matrices.
//
// Values are Eigen::MatrixXd. Batched quantities keep one trajectory per
// column, so a state batch is (2D x b) and a per-trajectory scalar is (1 x b).
// Nodes are appended in evaluation order, which is therefore a topological
// order; backward() walks the tape in reverse.

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

namespace qctrl::ad {

using Matrix = Eigen::MatrixXd;

class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class Tape;

/// Handle to a tape node.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  bool requires_grad() const;
};

class Tape {
 public:
  /// Accumulates parent adjoints given this node's adjoint.
  using Backward = std::function<void(Tape&, const Matrix& adjoint)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  Var parameter(Matrix value);

  /// Appends an op node. If no parent requires a gradient the result is a
  /// constant and `fn` is dropped.
  Var record(Matrix value, std::initializer_list<Var> parents, Backward fn);

  const Matrix& value(Var v) const { return nodes_[check(v)].value; }
  bool requires_grad(Var v) const { return nodes_[check(v)].requires_grad; }

  /// Adds `g` to the adjoint of `v` (no-op for constants).
  void accumulate(Var v, const Matrix& g);

  /// Reverse sweep from a 1x1 loss. Clears adjoints from any previous sweep.
  void backward(Var loss);
  /// Reverse sweep from an arbitrary node with an explicit seed adjoint.
  void backward(Var output, const Matrix& seed);

  /// Adjoint of `v` after backward(); zeros if `v` is not on any path.
  Matrix grad(Var v) const;

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Backward fn;
    bool requires_grad = false;
  };

  int check(Var v) const {
    if (v.tape != this || v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size()) {
      throw UsageError("Var does not belong to this tape");
    }
    return v.id;
  }
  void sweep(int from);

  std::vector<Node> nodes_;
  std::vector<Matrix> adjoints_;
};

/// One gradient tensor per parameter tensor.
using GradientSet = std::vector<Matrix>;

// Linear algebra.
Var matmul(Var a, Var b);
/// W x + bias, bias (out x 1) broadcast over columns.
Var affine(Var weight, Var bias, Var x);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double c);
Var cwise_mul(Var a, Var b);
/// Multiplies column j of `x` by r(0, j); `r` is 1 x cols.
Var scale_cols(Var x, Var r);
/// Row k of `x` as a 1 x cols node.
Var row(Var x, Eigen::Index k);
/// Column-wise dot products: 1 x cols.
Var dot_cols(Var a, Var b);
/// Full contraction sum(a .* b): 1 x 1.
Var dot(Var a, Var b);

// Elementwise nonlinearities.
/// max(x, 0); derivative at exactly 0 is 0.
Var relu(Var x);
Var square(Var x);
/// |x|; derivative at exactly 0 is 0.
Var abs(Var x);
Var sqrt(Var x);
/// 1 / x elementwise.
Var reciprocal(Var x);

// Reductions.
Var sum(Var x);
/// Sum over rows: 1 x cols.
Var col_sum(Var x);
/// Euclidean norm of each column: 1 x cols; derivative 0 for a zero column.
Var col_norm(Var x);
Var mean(Var x);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator-(Var a) { return scale(a, -1.0); }
inline Var operator*(double s, Var a) { return scale(a, s); }

/// Builds a scalar objective on `tape` from parameter nodes.
using Objective = std::function<Var(Tape& tape, std::span<const Var> params)>;

/// Evaluates `f` and its tape gradient at `params`.
double value_and_grad(const Objective& f, std::span<const Matrix> params, GradientSet& grads);

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
  std::size_t worst_tensor = 0;
  Eigen::Index worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

/// Compares tape gradients with central differences (f(x+e) - f(x-e)) / 2e.
/// Relative error uses the denominator max(|analytic|, |numeric|, 1e-12).
/// `max_coords` == 0 checks every coordinate; otherwise a seeded random
/// subset of that size (at least 50) is checked.
GradCheckReport grad_check(const Objective& f, std::span<const Matrix> params, double eps,
                           std::size_t max_coords = 0, std::uint64_t seed = 0);

using PreciseMatrix = Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic>;
/// The same objective evaluated value-only in extended precision.
using PreciseObjective = std::function<long double(std::span<const PreciseMatrix> params)>;

/// As above, but the differences are taken on `reference` in long double
/// (central differences at eps and eps/2 combined by one Richardson step),
/// which lowers both the rounding and the truncation floor.
GradCheckReport grad_check(const Objective& f, const PreciseObjective& reference, std::span<const Matrix> params,
                           double eps, std::size_t max_coords = 0, std::uint64_t seed = 0);

}  // namespace qctrl::ad
