#pragma once

// Value-only rollout loss in an arbitrary scalar type, written directly from
// the model equations without the tape, the batch generator or the agent's
// double-precision forward pass. Evaluated in long double it serves as the
// finite-difference oracle for tape gradients.

#include "qctrl/agent.hpp"
#include "qctrl/integrator.hpp"
#include "qctrl/losses.hpp"

#include <cmath>
#include <span>
#include <vector>

namespace qctrl::reference {

template <class S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;

template <class S>
Mat<S> dense(const std::vector<LayerSpec>& layers, std::span<const Mat<S>> params, std::size_t first, Mat<S> x) {
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const Mat<S>& w = params[first + 2 * l];
    const Mat<S>& b = params[first + 2 * l + 1];
    Mat<S> y = w * x;
    for (Eigen::Index j = 0; j < y.cols(); ++j) y.col(j) += b.col(0);
    if (layers[l].activation == Activation::ReLU) y = y.cwiseMax(S(0));
    x = std::move(y);
  }
  return x;
}

template <class S>
Mat<S> forward(const Architecture& arch, std::span<const Mat<S>> params, const Mat<S>& states, const Mat<S>& prev) {
  const std::size_t fa0 = 2 * arch.state_net.size();
  const std::size_t fc0 = fa0 + 2 * arch.action_net.size();
  Mat<S> h = dense<S>(arch.state_net, params, 0, states) + dense<S>(arch.action_net, params, fa0, prev);
  return dense<S>(arch.combine_net, params, fc0, std::move(h));
}

/// Batch-mean total loss of rolling out every column of `initial`.
template <class S>
S batch_loss(const Architecture& arch, std::span<const Mat<S>> params, const System& system,
             const Eigen::MatrixXd& initial, const StepSpec& spec, const State& target, const LossWeights& w) {
  const Eigen::Index b = initial.cols();
  const Eigen::Index d = system.dim();
  const Eigen::Index k = system.num_controls();
  const Mat<S> g0 = system.drift().generator().template cast<S>();
  std::vector<Mat<S>> gk;
  for (const auto& h : system.controls()) gk.push_back(h.generator().template cast<S>());
  const Eigen::Matrix<S, Eigen::Dynamic, 1> t_re = target.re().template cast<S>();
  const Eigen::Matrix<S, Eigen::Dynamic, 1> t_im = target.im().template cast<S>();

  Mat<S> states = initial.template cast<S>();
  Mat<S> prev = Mat<S>::Zero(k, b);
  const S dt = static_cast<S>(spec.dt);
  S total = 0;
  S discount = 1;
  for (int i = 0; i < spec.n_steps; ++i) {
    const Mat<S> u = forward<S>(arch, params, states, prev);
    discount *= static_cast<S>(w.gamma);
    for (Eigen::Index j = 0; j < b; ++j) {
      Mat<S> a = g0;
      for (Eigen::Index c = 0; c < k; ++c) a += u(c, j) * gk[static_cast<std::size_t>(c)];
      Eigen::Matrix<S, Eigen::Dynamic, 1> y = states.col(j);
      for (int n = 0; n < spec.n_sub; ++n) {
        const Eigen::Matrix<S, Eigen::Dynamic, 1> k1 = a * y;
        const Eigen::Matrix<S, Eigen::Dynamic, 1> k2 = a * (y + dt * k1);
        y += dt / 2 * (k1 + k2);
      }
      states.col(j) = y;
      const S re = t_re.dot(y.head(d)) + t_im.dot(y.tail(d));
      const S im = t_re.dot(y.tail(d)) - t_im.dot(y.head(d));
      const S f = (re * re + im * im) / y.squaredNorm();
      const S norm = u.col(j).norm();
      total += static_cast<S>(w.c_F) * discount * (1 - f) + static_cast<S>(w.c_amp) * norm +
               static_cast<S>(w.c_amp_sq) * norm * norm;
      if (i + 1 == spec.n_steps) total += static_cast<S>(w.c_FN) * (1 - f);
    }
    prev = u;
  }
  return total / static_cast<S>(b);
}

}  // namespace qctrl::reference
