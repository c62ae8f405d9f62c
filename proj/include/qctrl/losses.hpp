#pragma once

#include "qctrl/autodiff.hpp"
#include "qctrl/integrator.hpp"
#include "qctrl/realspace.hpp"

#include <span>
#include <stdexcept>
#include <vector>

namespace qctrl {

/// Coefficients of L = c_F L_F + c_FN L_FN + c_amp L_amp + c_amp_sq L'_amp.
struct LossWeights {
  double c_F = 0.0;
  double c_FN = 0.0;
  double c_amp = 0.0;
  double c_amp_sq = 0.0;
  double gamma = 1.0;

  void validate() const;
};

struct LossParts {
  double F = 0.0;
  double FN = 0.0;
  double amp = 0.0;
  double amp_sq = 0.0;
};

/// A fidelity outside [-1e-9, 1 + 1e-9]: the integrator has broken down.
class IntegratorDriftError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void check_fidelity(double f);

/// sum_{i=1}^{N} gamma^i (1 - F_i); fidelities[0] is F_1.
double loss_F(std::span<const double> fidelities, double gamma);
/// 1 - F_N.
double loss_FN(double final_fidelity);
/// sum_i ||u_i||, or sum_i ||u_i||^2 when `squared`; one column per step.
double loss_amp(const Eigen::MatrixXd& actions, bool squared);
double total_loss(const LossWeights& w, const LossParts& parts);

/// Per-trajectory losses of a batch, each a (1 x b) tape node.
struct TapedLoss {
  ad::Var total;
  ad::Var F;
  ad::Var FN;
  ad::Var amp;
  ad::Var amp_sq;
};

/// Value-only fidelity |<t|s>|^2 / |s|^2 of every column of a (2D x b) state batch.
Eigen::RowVectorXd batch_fidelity(const Eigen::MatrixXd& states, const State& target);

/// Fidelity |<t|s>|^2 / |s|^2 of every column of a (2D x b) state batch: (1 x b).
/// Dividing by the norm keeps integrator norm drift from being rewarded.
ad::Var fidelity_rows(ad::Var states, const State& target);

/// Builds all loss terms from per-step fidelity rows F_1..F_N and action
/// batches u_0..u_{N-1}.
TapedLoss taped_loss(std::span<const ad::Var> fidelity_rows, std::span<const ad::Var> actions,
                     const LossWeights& w);

}  // namespace qctrl
