#include "qctrl/losses.hpp"

#include <cmath>
#include <string>

namespace qctrl {

void LossWeights::validate() const {
  if (c_F < 0 || c_FN < 0 || c_amp < 0 || c_amp_sq < 0) throw ConfigError("loss weights must be non-negative");
  if (c_F == 0 && c_FN == 0 && c_amp == 0 && c_amp_sq == 0) {
    throw ConfigError("at least one loss coefficient must be positive");
  }
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("discount gamma must lie in (0, 1]");
}

void check_fidelity(double f) {
  if (!(f >= -1e-9 && f <= 1.0 + 1e-9)) {
    throw IntegratorDriftError("fidelity " + std::to_string(f) + " outside [0, 1]");
  }
}

double loss_F(std::span<const double> fidelities, double gamma) {
  double total = 0.0;
  double g = 1.0;
  for (double f : fidelities) {
    check_fidelity(f);
    g *= gamma;
    total += g * (1.0 - f);
  }
  return total;
}

double loss_FN(double final_fidelity) {
  check_fidelity(final_fidelity);
  return 1.0 - final_fidelity;
}

double loss_amp(const Eigen::MatrixXd& actions, bool squared) {
  if (actions.size() == 0) return 0.0;
  return squared ? actions.colwise().squaredNorm().sum() : actions.colwise().norm().sum();
}

double total_loss(const LossWeights& w, const LossParts& p) {
  return w.c_F * p.F + w.c_FN * p.FN + w.c_amp * p.amp + w.c_amp_sq * p.amp_sq;
}

ad::Var fidelity_rows(ad::Var states, const State& target) {
  const Eigen::Index d = target.dim();
  if (states.rows() != 2 * d) throw ConfigError("fidelity_rows: state batch does not match target dimension");
  // Rows give Re<t|s> and Im<t|s> for stacked s = [re; im]; divided by |s|^2.
  Eigen::MatrixXd c(2, 2 * d);
  c.row(0) << target.re().transpose(), target.im().transpose();
  c.row(1) << -target.im().transpose(), target.re().transpose();
  ad::Tape& t = *states.tape;
  const ad::Var overlap = ad::col_sum(ad::square(ad::matmul(t.constant(std::move(c)), states)));
  return ad::cwise_mul(overlap, ad::reciprocal(ad::col_sum(ad::square(states))));
}

TapedLoss taped_loss(std::span<const ad::Var> fidelity_rows, std::span<const ad::Var> actions, const LossWeights& w) {
  if (fidelity_rows.empty() || fidelity_rows.size() != actions.size()) {
    throw ConfigError("taped_loss: need one fidelity row and one action batch per step");
  }
  for (const auto& f : fidelity_rows) {
    const Eigen::MatrixXd& v = f.value();
    for (Eigen::Index j = 0; j < v.size(); ++j) check_fidelity(v(j));
  }
  ad::Tape& t = *fidelity_rows.front().tape;
  const Eigen::Index b = fidelity_rows.front().cols();

  ad::Var lf = t.constant(Eigen::MatrixXd::Zero(1, b));
  double g = 1.0;
  for (const auto& f : fidelity_rows) {
    g *= w.gamma;
    lf = lf + ad::scale(ad::add_scalar(-f, 1.0), g);
  }
  const ad::Var lfn = ad::add_scalar(-fidelity_rows.back(), 1.0);

  ad::Var amp = t.constant(Eigen::MatrixXd::Zero(1, b));
  ad::Var amp_sq = t.constant(Eigen::MatrixXd::Zero(1, b));
  for (const auto& u : actions) {
    amp = amp + ad::col_norm(u);
    amp_sq = amp_sq + ad::col_sum(ad::square(u));
  }

  ad::Var total = ad::scale(lf, w.c_F);
  if (w.c_FN != 0.0) total = total + ad::scale(lfn, w.c_FN);
  if (w.c_amp != 0.0) total = total + ad::scale(amp, w.c_amp);
  if (w.c_amp_sq != 0.0) total = total + ad::scale(amp_sq, w.c_amp_sq);
  return {total, lf, lfn, amp, amp_sq};
}

Eigen::RowVectorXd batch_fidelity(const Eigen::MatrixXd& s, const State& target) {
  const Eigen::Index d = target.dim();
  const Eigen::RowVectorXd a = target.re().transpose() * s.topRows(d) + target.im().transpose() * s.bottomRows(d);
  const Eigen::RowVectorXd b = target.re().transpose() * s.bottomRows(d) - target.im().transpose() * s.topRows(d);
  return (a.cwiseAbs2() + b.cwiseAbs2()).cwiseQuotient(s.colwise().squaredNorm());
}

}  // namespace qctrl
