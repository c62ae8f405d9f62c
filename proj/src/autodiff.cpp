#include "qctrl/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

namespace qctrl::ad {

const Matrix& Var::value() const {
  if (tape == nullptr) throw UsageError("Var is not attached to a tape");
  return tape->value(*this);
}

bool Var::requires_grad() const { return tape != nullptr && tape->requires_grad(*this); }

Var Tape::constant(Matrix value) {
  nodes_.push_back({std::move(value), nullptr, false});
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::parameter(Matrix value) {
  nodes_.push_back({std::move(value), nullptr, true});
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::record(Matrix value, std::initializer_list<Var> parents, Backward fn) {
  bool needs = false;
  for (const Var& p : parents) needs = needs || requires_grad(p);
  nodes_.push_back({std::move(value), needs ? std::move(fn) : nullptr, needs});
  return {this, static_cast<int>(nodes_.size()) - 1};
}

void Tape::accumulate(Var v, const Matrix& g) {
  const int id = check(v);
  if (!nodes_[id].requires_grad) return;
  Matrix& a = adjoints_[id];
  if (a.size() == 0) {
    a = g;
  } else {
    a += g;
  }
}

void Tape::backward(Var loss) {
  const Matrix& v = value(loss);
  if (v.rows() != 1 || v.cols() != 1) {
    throw UsageError("backward: loss must be a scalar, got " + std::to_string(v.rows()) + "x" +
                     std::to_string(v.cols()));
  }
  backward(loss, Matrix::Ones(1, 1));
}

void Tape::backward(Var output, const Matrix& seed) {
  const int id = check(output);
  if (seed.rows() != nodes_[id].value.rows() || seed.cols() != nodes_[id].value.cols()) {
    throw UsageError("backward: seed shape does not match output");
  }
  adjoints_.assign(nodes_.size(), Matrix());
  if (!nodes_[id].requires_grad) return;
  adjoints_[id] = seed;
  sweep(id);
}

void Tape::sweep(int from) {
  for (int i = from; i >= 0; --i) {
    Node& n = nodes_[i];
    if (!n.requires_grad || !n.fn || adjoints_[i].size() == 0) continue;
    n.fn(*this, adjoints_[i]);
  }
}

Matrix Tape::grad(Var v) const {
  const int id = check(v);
  if (static_cast<std::size_t>(id) < adjoints_.size() && adjoints_[id].size() != 0) return adjoints_[id];
  return Matrix::Zero(nodes_[id].value.rows(), nodes_[id].value.cols());
}

namespace {

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw UsageError(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                     std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  }
}

Tape& tape_of(Var a, Var b) {
  if (a.tape == nullptr || a.tape != b.tape) throw UsageError("operands live on different tapes");
  return *a.tape;
}

}  // namespace

Var matmul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.cols() != bv.rows()) throw UsageError("matmul: inner dimensions differ");
  Matrix out;
  out.noalias() = av * bv;
  return t.record(std::move(out), {a, b}, [a, b](Tape& tp, const Matrix& g) {
    if (tp.requires_grad(a)) tp.accumulate(a, g * tp.value(b).transpose());
    if (tp.requires_grad(b)) tp.accumulate(b, tp.value(a).transpose() * g);
  });
}

Var affine(Var weight, Var bias, Var x) {
  Tape& t = tape_of(weight, x);
  tape_of(weight, bias);
  const Matrix& w = weight.value();
  const Matrix& xv = x.value();
  const Matrix& bv = bias.value();
  if (w.cols() != xv.rows() || bv.rows() != w.rows() || bv.cols() != 1) {
    throw UsageError("affine: weight " + std::to_string(w.rows()) + "x" + std::to_string(w.cols()) +
                     " incompatible with input of " + std::to_string(xv.rows()) + " rows");
  }
  Matrix out(w.rows(), xv.cols());
  out.noalias() = w * xv;
  out.colwise() += bv.col(0);
  return t.record(std::move(out), {weight, bias, x}, [weight, bias, x](Tape& tp, const Matrix& g) {
    if (tp.requires_grad(weight)) tp.accumulate(weight, g * tp.value(x).transpose());
    if (tp.requires_grad(bias)) tp.accumulate(bias, g.rowwise().sum());
    if (tp.requires_grad(x)) tp.accumulate(x, tp.value(weight).transpose() * g);
  });
}

Var add(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require_same_shape(a.value(), b.value(), "add");
  return t.record(a.value() + b.value(), {a, b}, [a, b](Tape& tp, const Matrix& g) {
    tp.accumulate(a, g);
    tp.accumulate(b, g);
  });
}

Var sub(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require_same_shape(a.value(), b.value(), "sub");
  return t.record(a.value() - b.value(), {a, b}, [a, b](Tape& tp, const Matrix& g) {
    tp.accumulate(a, g);
    tp.accumulate(b, -g);
  });
}

Var scale(Var a, double s) {
  return a.tape->record(s * a.value(), {a}, [a, s](Tape& tp, const Matrix& g) { tp.accumulate(a, s * g); });
}

Var add_scalar(Var a, double c) {
  return a.tape->record(a.value().array() + c, {a}, [a](Tape& tp, const Matrix& g) { tp.accumulate(a, g); });
}

Var cwise_mul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require_same_shape(a.value(), b.value(), "cwise_mul");
  return t.record(a.value().cwiseProduct(b.value()), {a, b}, [a, b](Tape& tp, const Matrix& g) {
    if (tp.requires_grad(a)) tp.accumulate(a, g.cwiseProduct(tp.value(b)));
    if (tp.requires_grad(b)) tp.accumulate(b, g.cwiseProduct(tp.value(a)));
  });
}

Var scale_cols(Var x, Var r) {
  Tape& t = tape_of(x, r);
  const Matrix& xv = x.value();
  const Matrix& rv = r.value();
  if (rv.rows() != 1 || rv.cols() != xv.cols()) throw UsageError("scale_cols: scale must be 1 x cols");
  Matrix out = xv.array().rowwise() * rv.row(0).array();
  return t.record(std::move(out), {x, r}, [x, r](Tape& tp, const Matrix& g) {
    if (tp.requires_grad(x)) tp.accumulate(x, g.array().rowwise() * tp.value(r).row(0).array());
    if (tp.requires_grad(r)) tp.accumulate(r, g.cwiseProduct(tp.value(x)).colwise().sum());
  });
}

Var row(Var x, Eigen::Index k) {
  const Matrix& xv = x.value();
  if (k < 0 || k >= xv.rows()) throw UsageError("row: index out of range");
  return x.tape->record(xv.row(k), {x}, [x, k](Tape& tp, const Matrix& g) {
    Matrix full = Matrix::Zero(tp.value(x).rows(), tp.value(x).cols());
    full.row(k) = g;
    tp.accumulate(x, full);
  });
}

Var dot_cols(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require_same_shape(a.value(), b.value(), "dot_cols");
  Matrix out = a.value().cwiseProduct(b.value()).colwise().sum();
  return t.record(std::move(out), {a, b}, [a, b](Tape& tp, const Matrix& g) {
    if (tp.requires_grad(a)) tp.accumulate(a, tp.value(b).array().rowwise() * g.row(0).array());
    if (tp.requires_grad(b)) tp.accumulate(b, tp.value(a).array().rowwise() * g.row(0).array());
  });
}

Var dot(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require_same_shape(a.value(), b.value(), "dot");
  Matrix out(1, 1);
  out(0, 0) = a.value().cwiseProduct(b.value()).sum();
  return t.record(std::move(out), {a, b}, [a, b](Tape& tp, const Matrix& g) {
    if (tp.requires_grad(a)) tp.accumulate(a, g(0, 0) * tp.value(b));
    if (tp.requires_grad(b)) tp.accumulate(b, g(0, 0) * tp.value(a));
  });
}

Var relu(Var x) {
  Tape& t = *x.tape;
  const Var self{&t, static_cast<int>(t.size())};
  return t.record(x.value().cwiseMax(0.0), {x}, [x, self](Tape& tp, const Matrix& g) {
    tp.accumulate(x, (tp.value(self).array() > 0.0).select(g.array(), 0.0).matrix());
  });
}

Var square(Var x) {
  return x.tape->record(x.value().array().square(), {x}, [x](Tape& tp, const Matrix& g) {
    tp.accumulate(x, 2.0 * g.cwiseProduct(tp.value(x)));
  });
}

Var abs(Var x) {
  return x.tape->record(x.value().cwiseAbs(), {x}, [x](Tape& tp, const Matrix& g) {
    // sign() is 0 at 0, which pins the subgradient choice.
    tp.accumulate(x, g.cwiseProduct(tp.value(x).cwiseSign()));
  });
}

Var sqrt(Var x) {
  Tape& t = *x.tape;
  const Var self{&t, static_cast<int>(t.size())};
  return t.record(x.value().cwiseSqrt(), {x}, [x, self](Tape& tp, const Matrix& g) {
    tp.accumulate(x, (0.5 * g.array() / tp.value(self).array()).matrix());
  });
}

Var reciprocal(Var x) {
  Tape& t = *x.tape;
  const Var self{&t, static_cast<int>(t.size())};
  return t.record(x.value().cwiseInverse(), {x}, [x, self](Tape& tp, const Matrix& g) {
    tp.accumulate(x, (-g.array() * tp.value(self).array().square()).matrix());
  });
}

Var sum(Var x) {
  Matrix out(1, 1);
  out(0, 0) = x.value().sum();
  return x.tape->record(std::move(out), {x}, [x](Tape& tp, const Matrix& g) {
    tp.accumulate(x, Matrix::Constant(tp.value(x).rows(), tp.value(x).cols(), g(0, 0)));
  });
}

Var col_sum(Var x) {
  return x.tape->record(x.value().colwise().sum(), {x}, [x](Tape& tp, const Matrix& g) {
    const Matrix& xv = tp.value(x);
    tp.accumulate(x, g.replicate(xv.rows(), 1));
  });
}

Var col_norm(Var x) {
  Tape& t = *x.tape;
  const Var self{&t, static_cast<int>(t.size())};
  return t.record(x.value().colwise().norm(), {x}, [x, self](Tape& tp, const Matrix& g) {
    const Matrix& xv = tp.value(x);
    const Matrix& out = tp.value(self);
    Matrix gx(xv.rows(), xv.cols());
    for (Eigen::Index j = 0; j < xv.cols(); ++j) {
      const double n = out(0, j);
      if (n > 0.0) {
        gx.col(j) = (g(0, j) / n) * xv.col(j);
      } else {
        gx.col(j).setZero();
      }
    }
    tp.accumulate(x, gx);
  });
}

Var mean(Var x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().size())); }

double value_and_grad(const Objective& f, std::span<const Matrix> params, GradientSet& grads) {
  Tape tape;
  std::vector<Var> vars;
  vars.reserve(params.size());
  for (const Matrix& p : params) vars.push_back(tape.parameter(p));
  Var loss = f(tape, vars);
  tape.backward(loss);
  grads.clear();
  grads.reserve(vars.size());
  for (const Var& v : vars) grads.push_back(tape.grad(v));
  return loss.value()(0, 0);
}

namespace {

double evaluate(const Objective& f, std::span<const Matrix> params) {
  Tape tape;
  std::vector<Var> vars;
  vars.reserve(params.size());
  for (const Matrix& p : params) vars.push_back(tape.constant(p));
  return f(tape, vars).value()(0, 0);
}

}  // namespace

namespace {

template <class Numeric>
GradCheckReport compare(const Objective& f, std::span<const Matrix> params, double eps, std::size_t max_coords,
                        std::uint64_t seed, Numeric numeric_at) {
  if (!(eps >= 1e-7 && eps <= 1e-3)) throw UsageError("grad_check: eps must lie in [1e-7, 1e-3]");
  GradientSet analytic;
  value_and_grad(f, params, analytic);

  std::vector<std::pair<std::size_t, Eigen::Index>> coords;
  for (std::size_t t = 0; t < params.size(); ++t) {
    for (Eigen::Index i = 0; i < params[t].size(); ++i) coords.emplace_back(t, i);
  }
  if (max_coords != 0 && coords.size() > std::max<std::size_t>(max_coords, 50)) {
    std::mt19937_64 rng(seed);
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(std::max<std::size_t>(max_coords, 50));
    std::sort(coords.begin(), coords.end());
  }

  GradCheckReport report;
  for (const auto& [t, i] : coords) {
    const double numeric = numeric_at(t, i);
    const double a = analytic[t].data()[i];
    const double denom = std::max({std::abs(a), std::abs(numeric), 1e-12});
    const double rel = std::abs(a - numeric) / denom;
    if (report.coordinates == 0 || rel > report.max_rel_error) {
      report.max_rel_error = rel;
      report.worst_tensor = t;
      report.worst_index = i;
      report.worst_analytic = a;
      report.worst_numeric = numeric;
    }
    ++report.coordinates;
  }
  return report;
}

}  // namespace

GradCheckReport grad_check(const Objective& f, std::span<const Matrix> params, double eps, std::size_t max_coords,
                           std::uint64_t seed) {
  std::vector<Matrix> work(params.begin(), params.end());
  return compare(f, params, eps, max_coords, seed, [&](std::size_t t, Eigen::Index i) {
    double& x = work[t].data()[i];
    const double x0 = x;
    x = x0 + eps;
    const double fp = evaluate(f, work);
    x = x0 - eps;
    const double fm = evaluate(f, work);
    x = x0;
    return (fp - fm) / (2.0 * eps);
  });
}

GradCheckReport grad_check(const Objective& f, const PreciseObjective& reference, std::span<const Matrix> params,
                           double eps, std::size_t max_coords, std::uint64_t seed) {
  std::vector<PreciseMatrix> work;
  for (const auto& p : params) work.push_back(p.cast<long double>());
  const long double h = eps;
  return compare(f, params, eps, max_coords, seed, [&](std::size_t t, Eigen::Index i) {
    long double& x = work[t].data()[i];
    const long double x0 = x;
    const auto central = [&](long double step) {
      x = x0 + step;
      const long double fp = reference(work);
      x = x0 - step;
      const long double fm = reference(work);
      x = x0;
      return (fp - fm) / (2 * step);
    };
    // One Richardson step removes the O(h^2) truncation term.
    return static_cast<double>((4 * central(h / 2) - central(h)) / 3);
  });
}

}  // namespace qctrl::ad
