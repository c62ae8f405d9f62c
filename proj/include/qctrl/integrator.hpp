#pragma once

#include "qctrl/autodiff.hpp"
#include "qctrl/realspace.hpp"

#include <stdexcept>
#include <string>

namespace qctrl {

/// N control intervals of N_sub Heun substeps of size dt each.
struct StepSpec {
  int n_steps = 1;
  int n_sub = 1;
  double dt = 0.01;

  void validate() const {
    if (n_steps < 1 || n_sub < 1 || !(dt > 0.0)) {
      throw ConfigError("StepSpec: require N >= 1, N_sub >= 1, dt > 0");
    }
  }
  double interval() const { return n_sub * dt; }
  double horizon() const { return n_steps * interval(); }
};

/// Maximum tolerated |1 - ||psi||| over a whole trajectory.
inline constexpr double kMaxNormDrift = 1e-4;

/// A trajectory produced a NaN or Inf.
class NonFiniteError : public std::runtime_error {
 public:
  NonFiniteError(const std::string& what, std::vector<Eigen::Index> columns = {})
      : std::runtime_error(what), columns_(std::move(columns)) {}
  /// Offending batch columns, when known.
  const std::vector<Eigen::Index>& columns() const { return columns_; }

 private:
  std::vector<Eigen::Index> columns_;
};

/// One Heun step y + dt/2 (k1 + k2), k1 = f(y), k2 = f(y + dt k1).
///
/// `Y` is any type closed under `+` and scalar `*` (double, Eigen vectors).
template <typename Deriv, typename Y, typename Scalar>
Y heun_step(Deriv&& deriv, const Y& y, Scalar dt) {
  const Y k1 = deriv(y);
  const Y y1 = y + dt * k1;
  const Y k2 = deriv(y1);
  return y + (dt / Scalar(2)) * (k1 + k2);
}

/// Heun step of the realified Schrodinger equation under a fixed Hamiltonian.
template <typename Scalar>
RealState<Scalar> heun_step(const RealHamiltonian<Scalar>& h, const RealState<Scalar>& s, Scalar dt) {
  const Mat<Scalar> g = h.generator();
  const Vec<Scalar> y = heun_step([&g](const Vec<Scalar>& x) -> Vec<Scalar> { return g * x; }, s.stacked(), dt);
  return RealState<Scalar>::from_stacked(y);
}

/// Holds H_0 + sum_k u_k H_k for u fixed and applies n_sub Heun substeps.
/// The state is not renormalized.
template <typename Scalar, typename Derived>
RealState<Scalar> evolve_interval(const ControlSystem<Scalar>& system, const RealState<Scalar>& s,
                                  const Eigen::MatrixBase<Derived>& u, int n_sub, Scalar dt) {
  if (s.dim() != system.dim()) throw ConfigError("evolve_interval: state dimension mismatch");
  const Mat<Scalar> g = assemble(system, u).generator();
  const auto deriv = [&g](const Vec<Scalar>& x) -> Vec<Scalar> { return g * x; };
  Vec<Scalar> y = s.stacked();
  for (int j = 0; j < n_sub; ++j) y = heun_step(deriv, y, dt);
  if (!y.allFinite()) throw NonFiniteError("evolve_interval: non-finite state");
  return RealState<Scalar>::from_stacked(y);
}

/// Realified generators G_0, G_k of a control system, for batched stepping.
///
/// A batch is a (2D x b) matrix of stacked states with one trajectory per
/// column and a (K x b) matrix of controls. The batched derivative is
/// G_0 S + sum_k (G_k S) diag(u_k).
class BatchGenerator {
 public:
  explicit BatchGenerator(const System& system);

  Eigen::Index state_rows() const { return drift_.rows(); }
  Eigen::Index num_controls() const { return static_cast<Eigen::Index>(controls_.size()); }

  Eigen::MatrixXd apply(const Eigen::MatrixXd& s, const Eigen::MatrixXd& u) const;
  Eigen::MatrixXd apply_transpose(const Eigen::MatrixXd& w, const Eigen::MatrixXd& u) const;
  const Eigen::MatrixXd& drift() const { return drift_; }
  const Eigen::MatrixXd& control(Eigen::Index k) const { return controls_[static_cast<std::size_t>(k)]; }

  /// n_sub Heun substeps of every column under its own control vector.
  Eigen::MatrixXd evolve(const Eigen::MatrixXd& s, const Eigen::MatrixXd& u, int n_sub, double dt) const;

 private:
  Eigen::MatrixXd drift_;
  std::vector<Eigen::MatrixXd> controls_;
  Eigen::MatrixXd drift_t_;
  std::vector<Eigen::MatrixXd> controls_t_;
};

/// Columns of `m` that contain a NaN or Inf.
std::vector<Eigen::Index> non_finite_columns(const Eigen::MatrixXd& m);

namespace ad {

/// Tape op: n_sub Heun substeps of a state batch under piecewise-constant
/// controls, differentiable with respect to both `states` and `controls`.
///
/// Only the interval input is stored; the backward pass recomputes the
/// substeps and propagates adjoints through each of them analytically.
/// Throws NonFiniteError naming the offending columns.
Var heun_interval(const BatchGenerator& gen, Var states, Var controls, int n_sub, double dt);

/// The same map composed from primitive tape ops. Used as a reference for
/// the fused op.
Var heun_interval_unfused(const BatchGenerator& gen, Var states, Var controls, int n_sub, double dt);

}  // namespace ad
}  // namespace qctrl
