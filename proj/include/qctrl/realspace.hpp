#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <stdexcept>
#include <string>
#include <vector>

namespace qctrl {

/// Thrown for inconsistent dimensions or invalid system/agent setups.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

/// A pure state stored as split real and imaginary coefficient vectors.
///
/// Construction normalizes the state whenever its norm deviates from one by
/// more than 1e-12. Use `raw` to keep an unnormalized vector (integrator
/// output, where norm drift is monitored rather than hidden).
template <typename Scalar>
class RealState {
 public:
  RealState() = default;

  RealState(Vec<Scalar> re, Vec<Scalar> im) : re_(std::move(re)), im_(std::move(im)) {
    if (re_.size() != im_.size() || re_.size() == 0) {
      throw ConfigError("RealState: real and imaginary parts must have equal, positive length");
    }
    const Scalar n = norm();
    if (!(n > Scalar(0)) || !std::isfinite(static_cast<double>(n))) {
      throw ConfigError("RealState: state has zero or non-finite norm");
    }
    if (std::abs(n - Scalar(1)) > Scalar(1e-12)) {
      re_ /= n;
      im_ /= n;
    }
  }

  static RealState raw(Vec<Scalar> re, Vec<Scalar> im) {
    RealState s;
    s.re_ = std::move(re);
    s.im_ = std::move(im);
    return s;
  }

  /// Basis state |index> of a D-dimensional space.
  static RealState basis(Eigen::Index dim, Eigen::Index index) {
    Vec<Scalar> re = Vec<Scalar>::Zero(dim);
    re(index) = Scalar(1);
    return RealState(std::move(re), Vec<Scalar>::Zero(dim));
  }

  static RealState from_complex(const Eigen::Matrix<std::complex<Scalar>, Eigen::Dynamic, 1>& c) {
    return RealState(c.real(), c.imag());
  }

  /// Stacked [re; im] vector of length 2D, the layout used by the generator.
  static RealState from_stacked(const Vec<Scalar>& stacked) {
    const Eigen::Index d = stacked.size() / 2;
    return raw(stacked.head(d), stacked.tail(d));
  }

  Vec<Scalar> stacked() const {
    Vec<Scalar> out(2 * dim());
    out << re_, im_;
    return out;
  }

  Eigen::Matrix<std::complex<Scalar>, Eigen::Dynamic, 1> to_complex() const {
    Eigen::Matrix<std::complex<Scalar>, Eigen::Dynamic, 1> c(dim());
    c.real() = re_;
    c.imag() = im_;
    return c;
  }

  const Vec<Scalar>& re() const { return re_; }
  const Vec<Scalar>& im() const { return im_; }
  Eigen::Index dim() const { return re_.size(); }
  Scalar norm() const { return std::sqrt(re_.squaredNorm() + im_.squaredNorm()); }

 private:
  Vec<Scalar> re_;
  Vec<Scalar> im_;
};

/// Hermitian operator H = h_re + i h_im with h_re symmetric and h_im antisymmetric.
template <typename Scalar>
struct RealHamiltonian {
  Mat<Scalar> h_re;
  Mat<Scalar> h_im;

  static RealHamiltonian zero(Eigen::Index dim) {
    return {Mat<Scalar>::Zero(dim, dim), Mat<Scalar>::Zero(dim, dim)};
  }

  static RealHamiltonian from_complex(const Eigen::Matrix<std::complex<Scalar>, Eigen::Dynamic, Eigen::Dynamic>& h) {
    return {h.real(), h.imag()};
  }

  Eigen::Index dim() const { return h_re.rows(); }

  bool is_hermitian(Scalar tol = Scalar(1e-12)) const {
    if (h_re.rows() != h_re.cols() || h_im.rows() != h_im.cols() || h_re.rows() != h_im.rows()) return false;
    return (h_re - h_re.transpose()).cwiseAbs().maxCoeff() <= tol &&
           (h_im + h_im.transpose()).cwiseAbs().maxCoeff() <= tol;
  }

  Eigen::Matrix<std::complex<Scalar>, Eigen::Dynamic, Eigen::Dynamic> to_complex() const {
    Eigen::Matrix<std::complex<Scalar>, Eigen::Dynamic, Eigen::Dynamic> h(dim(), dim());
    h.real() = h_re;
    h.imag() = h_im;
    return h;
  }

  /// The 2D x 2D real generator [[h_im, h_re], [-h_re, h_im]] of d/dt [re; im].
  Mat<Scalar> generator() const {
    const Eigen::Index d = dim();
    Mat<Scalar> g(2 * d, 2 * d);
    g.topLeftCorner(d, d) = h_im;
    g.topRightCorner(d, d) = h_re;
    g.bottomLeftCorner(d, d) = -h_re;
    g.bottomRightCorner(d, d) = h_im;
    return g;
  }

  RealHamiltonian& operator+=(const RealHamiltonian& o) {
    h_re += o.h_re;
    h_im += o.h_im;
    return *this;
  }
};

template <typename Scalar>
RealHamiltonian<Scalar> operator*(Scalar a, const RealHamiltonian<Scalar>& h) {
  return {a * h.h_re, a * h.h_im};
}

template <typename Scalar>
RealHamiltonian<Scalar> operator+(RealHamiltonian<Scalar> a, const RealHamiltonian<Scalar>& b) {
  a += b;
  return a;
}

/// Drift H_0 plus K control operators H_k.
template <typename Scalar>
class ControlSystem {
 public:
  ControlSystem(RealHamiltonian<Scalar> drift, std::vector<RealHamiltonian<Scalar>> controls)
      : drift_(std::move(drift)), controls_(std::move(controls)) {
    if (controls_.empty()) throw ConfigError("ControlSystem: at least one control operator is required");
    check(drift_, "drift");
    for (std::size_t k = 0; k < controls_.size(); ++k) check(controls_[k], "control " + std::to_string(k));
  }

  const RealHamiltonian<Scalar>& drift() const { return drift_; }
  const std::vector<RealHamiltonian<Scalar>>& controls() const { return controls_; }
  Eigen::Index dim() const { return drift_.dim(); }
  Eigen::Index num_controls() const { return static_cast<Eigen::Index>(controls_.size()); }

 private:
  void check(const RealHamiltonian<Scalar>& h, const std::string& what) const {
    if (h.h_re.rows() != drift_.dim() || h.h_re.cols() != drift_.dim() || h.h_im.rows() != drift_.dim() ||
        h.h_im.cols() != drift_.dim()) {
      throw ConfigError("ControlSystem: " + what + " has mismatched dimension");
    }
    if (!h.is_hermitian()) throw ConfigError("ControlSystem: " + what + " is not Hermitian");
  }

  RealHamiltonian<Scalar> drift_;
  std::vector<RealHamiltonian<Scalar>> controls_;
};

/// H_0 + sum_k u_k H_k.
template <typename Scalar, typename Derived>
RealHamiltonian<Scalar> assemble(const ControlSystem<Scalar>& system, const Eigen::MatrixBase<Derived>& u) {
  if (u.size() != system.num_controls()) {
    throw ConfigError("assemble: control vector has length " + std::to_string(u.size()) + ", system expects " +
                      std::to_string(system.num_controls()));
  }
  RealHamiltonian<Scalar> h = system.drift();
  for (Eigen::Index k = 0; k < u.size(); ++k) {
    h.h_re.noalias() += u(k) * system.controls()[k].h_re;
    h.h_im.noalias() += u(k) * system.controls()[k].h_im;
  }
  return h;
}

/// Realification of -iH psi: (h_im re + h_re im, -h_re re + h_im im).
template <typename Scalar>
RealState<Scalar> generator_apply(const RealHamiltonian<Scalar>& h, const RealState<Scalar>& s) {
  if (h.dim() != s.dim()) throw ConfigError("generator_apply: dimension mismatch");
  Vec<Scalar> re = h.h_im * s.re() + h.h_re * s.im();
  Vec<Scalar> im = -(h.h_re * s.re()) + h.h_im * s.im();
  return RealState<Scalar>::raw(std::move(re), std::move(im));
}

/// |<s|target>|^2 / (|s|^2 |target|^2); the plain overlap for unit-norm inputs.
template <typename Scalar>
Scalar fidelity(const RealState<Scalar>& s, const RealState<Scalar>& target) {
  if (s.dim() != target.dim()) throw ConfigError("fidelity: dimension mismatch");
  const Scalar a = s.re().dot(target.re()) + s.im().dot(target.im());
  const Scalar b = s.re().dot(target.im()) - s.im().dot(target.re());
  const Scalar ns = s.re().squaredNorm() + s.im().squaredNorm();
  const Scalar nt = target.re().squaredNorm() + target.im().squaredNorm();
  return (a * a + b * b) / (ns * nt);
}

using State = RealState<double>;
using Hamiltonian = RealHamiltonian<double>;
using System = ControlSystem<double>;
using ControlVector = Eigen::VectorXd;

}  // namespace qctrl
