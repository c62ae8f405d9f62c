#pragma once

// The control agent: a state-aware network f_s, an action-aware network f_a
// and a combination network f_c producing u_i = f_c(f_s(psi_i) + f_a(u_{i-1})).

#include "qctrl/autodiff.hpp"
#include "qctrl/realspace.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace qctrl {

enum class Activation { ReLU, None };

struct LayerSpec {
  Eigen::Index in_features = 0;
  Eigen::Index out_features = 0;
  Activation activation = Activation::ReLU;

  bool operator==(const LayerSpec&) const = default;
};

struct Architecture {
  std::vector<LayerSpec> state_net;    // f_s
  std::vector<LayerSpec> action_net;   // f_a
  std::vector<LayerSpec> combine_net;  // f_c

  /// Chains consecutive widths, e.g. {4, 256, 256, 128}. Every layer gets a
  /// ReLU except the last layer of the combination network.
  static Architecture from_widths(const std::vector<Eigen::Index>& state_widths,
                                  const std::vector<Eigen::Index>& action_widths,
                                  const std::vector<Eigen::Index>& combine_widths);

  /// Throws ConfigError on broken chaining or a nonlinear output layer.
  void validate() const;
  /// Additionally checks the boundary widths 2D and K.
  void validate_for(Eigen::Index dim, Eigen::Index num_controls) const;

  Eigen::Index state_input() const { return state_net.front().in_features; }
  Eigen::Index num_controls() const { return combine_net.back().out_features; }
  Eigen::Index feature_width() const { return state_net.back().out_features; }

  /// Compact form "4x256,256x256,256x128|1x128,128x128|128x64,64x32,32x1".
  std::string to_string() const;
  static Architecture parse(const std::string& text);

  bool operator==(const Architecture&) const = default;
};

/// Weights and biases, ordered f_s, f_a, f_c and within each subnetwork
/// layer by layer as (weight, bias). Weights are (out x in), biases (out x 1).
struct AgentParams {
  Architecture arch;
  std::vector<Eigen::MatrixXd> tensors;

  std::size_t size() const { return tensors.size(); }
  /// "fs.0.weight", "fs.0.bias", "fa.1.weight", ...
  std::vector<std::string> names() const;
  std::size_t num_scalars() const;
};

AgentParams init_params(const Architecture& arch, std::uint64_t seed);
AgentParams zero_params(const Architecture& arch);

/// Zero control vector used as u_{-1}.
inline ControlVector first_step_action(Eigen::Index num_controls) { return ControlVector::Zero(num_controls); }

/// Value-only forward pass of a batch: states (2D x b), previous actions (K x b).
Eigen::MatrixXd forward(const AgentParams& params, const Eigen::MatrixXd& states, const Eigen::MatrixXd& prev);
ControlVector forward(const AgentParams& params, const State& state, const ControlVector& prev);

/// The agent with its parameters registered on a tape.
class TapedAgent {
 public:
  /// Registers every tensor of `params` as a tape parameter.
  TapedAgent(ad::Tape& tape, const AgentParams& params);
  /// Wraps parameter nodes already on `tape`, in AgentParams order.
  TapedAgent(ad::Tape& tape, Architecture arch, std::vector<ad::Var> vars);

  ad::Var operator()(ad::Var states, ad::Var prev) const;
  const std::vector<ad::Var>& vars() const { return vars_; }
  /// Gradients of the last backward sweep, one per tensor.
  ad::GradientSet gradients() const;

 private:
  ad::Var run(std::size_t first, const std::vector<LayerSpec>& layers, ad::Var x) const;

  ad::Tape* tape_;
  Architecture arch_;
  std::vector<ad::Var> vars_;
};

}  // namespace qctrl
