#include "qctrl/integrator.hpp"

namespace qctrl {

BatchGenerator::BatchGenerator(const System& system) : drift_(system.drift().generator()) {
  drift_t_ = drift_.transpose();
  for (const Hamiltonian& h : system.controls()) {
    controls_.push_back(h.generator());
    controls_t_.push_back(controls_.back().transpose());
  }
}

Eigen::MatrixXd BatchGenerator::apply(const Eigen::MatrixXd& s, const Eigen::MatrixXd& u) const {
  Eigen::MatrixXd out(s.rows(), s.cols());
  out.noalias() = drift_ * s;
  Eigen::MatrixXd tmp(s.rows(), s.cols());
  for (std::size_t k = 0; k < controls_.size(); ++k) {
    tmp.noalias() = controls_[k] * s;
    out.array() += tmp.array().rowwise() * u.row(static_cast<Eigen::Index>(k)).array();
  }
  return out;
}

Eigen::MatrixXd BatchGenerator::apply_transpose(const Eigen::MatrixXd& w, const Eigen::MatrixXd& u) const {
  Eigen::MatrixXd out(w.rows(), w.cols());
  out.noalias() = drift_t_ * w;
  Eigen::MatrixXd tmp(w.rows(), w.cols());
  for (std::size_t k = 0; k < controls_t_.size(); ++k) {
    tmp.noalias() = controls_t_[k] * w;
    out.array() += tmp.array().rowwise() * u.row(static_cast<Eigen::Index>(k)).array();
  }
  return out;
}

Eigen::MatrixXd BatchGenerator::evolve(const Eigen::MatrixXd& s, const Eigen::MatrixXd& u, int n_sub,
                                       double dt) const {
  Eigen::MatrixXd y = s;
  for (int j = 0; j < n_sub; ++j) {
    const Eigen::MatrixXd k1 = apply(y, u);
    const Eigen::MatrixXd k2 = apply(y + dt * k1, u);
    y += (0.5 * dt) * (k1 + k2);
  }
  return y;
}

std::vector<Eigen::Index> non_finite_columns(const Eigen::MatrixXd& m) {
  std::vector<Eigen::Index> bad;
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    if (!m.col(j).allFinite()) bad.push_back(j);
  }
  return bad;
}

namespace ad {

Var heun_interval(const BatchGenerator& gen, Var states, Var controls, int n_sub, double dt) {
  const Matrix& s0 = states.value();
  const Matrix& u = controls.value();
  if (s0.rows() != gen.state_rows() || u.rows() != gen.num_controls() || u.cols() != s0.cols()) {
    throw UsageError("heun_interval: batch shapes do not match the generator");
  }
  Matrix out = gen.evolve(s0, u, n_sub, dt);
  if (!out.allFinite()) {
    auto bad = non_finite_columns(out);
    const std::string msg = "heun_interval: non-finite state in " + std::to_string(bad.size()) + " column(s)";
    throw NonFiniteError(msg, std::move(bad));
  }
  return states.tape->record(std::move(out), {states, controls}, [&gen, states, controls, n_sub, dt](
                                                                        Tape& tp, const Matrix& g) {
    const Matrix& u = tp.value(controls);
    const Eigen::Index nk = u.rows();
    std::vector<Matrix> ys;
    ys.reserve(static_cast<std::size_t>(n_sub) + 1);
    ys.push_back(tp.value(states));
    for (int j = 0; j < n_sub; ++j) ys.push_back(gen.evolve(ys.back(), u, 1, dt));

    const bool want_u = tp.requires_grad(controls);
    Matrix w = g;
    Matrix ubar = Matrix::Zero(u.rows(), u.cols());
    Matrix gs(w.rows(), w.cols());
    for (int j = n_sub - 1; j >= 0; --j) {
      const Matrix& s = ys[static_cast<std::size_t>(j)];
      // Forward quantities of this substep.
      const Matrix k1 = gen.apply(s, u);
      const Matrix y = s + dt * k1;
      // Adjoints: s' = s + dt/2 (k1 + k2), k2 = A y, y = s + dt k1, k1 = A s.
      const Matrix half = (0.5 * dt) * w;
      const Matrix ybar = gen.apply_transpose(half, u);
      const Matrix k1bar = half + dt * ybar;
      if (want_u) {
        for (Eigen::Index k = 0; k < nk; ++k) {
          gs.noalias() = gen.control(k) * y;
          ubar.row(k) += half.cwiseProduct(gs).colwise().sum();
          gs.noalias() = gen.control(k) * s;
          ubar.row(k) += k1bar.cwiseProduct(gs).colwise().sum();
        }
      }
      w += ybar + gen.apply_transpose(k1bar, u);
    }
    tp.accumulate(states, w);
    if (want_u) tp.accumulate(controls, ubar);
  });
}

Var heun_interval_unfused(const BatchGenerator& gen, Var states, Var controls, int n_sub, double dt) {
  Tape& t = *states.tape;
  const Var g0 = t.constant(gen.drift());
  std::vector<Var> gk;
  std::vector<Var> uk;
  for (Eigen::Index k = 0; k < gen.num_controls(); ++k) {
    gk.push_back(t.constant(gen.control(k)));
    uk.push_back(row(controls, k));
  }
  const auto deriv = [&](Var x) {
    Var out = matmul(g0, x);
    for (std::size_t k = 0; k < gk.size(); ++k) out = out + scale_cols(matmul(gk[k], x), uk[k]);
    return out;
  };
  Var y = states;
  for (int j = 0; j < n_sub; ++j) y = heun_step(deriv, y, dt);
  return y;
}

}  // namespace ad
}  // namespace qctrl
