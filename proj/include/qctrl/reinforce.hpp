#pragma once

// Vanilla policy-gradient (REINFORCE) baseline. The policy is a Gaussian whose
// mean is the agent network; gradients never pass through the simulator.

#include "qctrl/trainer.hpp"

#include <cstdint>
#include <vector>

namespace qctrl {

struct GaussianPolicy {
  AgentParams mean;
  double variance = 0.04;

  void validate() const;
};

/// -1/2 ((u - mu)^2 / var + log(2 pi var)).
double log_prob(double u, double mu, double variance);
/// Sum over the K independent control components.
double log_prob(const ControlVector& u, const ControlVector& mu, double variance);

/// Rewards-to-go R_0..R_N of one trajectory.
///
/// `fidelities` holds F(t_0)..F(t_N) (N+1 values, F(t_0) of the initial
/// state); `actions` holds u(t_0)..u(t_{N-1}), with u(t_N) taken as zero.
/// R_n = sum_{n'=n}^{N} [c_F F_{n'} - c'_amp |u_n|^2 - c_amp |u_n| + [n'=N] c_FN F_N].
Eigen::VectorXd rewards_to_go(const std::vector<double>& fidelities, const std::vector<ControlVector>& actions,
                              const LossWeights& weights);

/// Standardizes all entries of `rewards` jointly (pooled over batch and time).
/// Constant input yields zeros and sets `*degenerate`.
Eigen::MatrixXd normalize_rewards(const Eigen::MatrixXd& rewards, bool* degenerate = nullptr);

/// Flattened (state, previous action, sampled action, normalized reward)
/// samples, one column per policy decision.
struct PolicySamples {
  Eigen::MatrixXd states;   // 2D x n
  Eigen::MatrixXd prev;     // K x n
  Eigen::MatrixXd actions;  // K x n
  Eigen::RowVectorXd rewards;

  Eigen::Index size() const { return states.cols(); }
};

/// (1 / normalizer) sum_j grad log pi(actions_j | states_j, prev_j) * rewards_j.
/// Columns are processed in fixed chunks and reduced in order.
ad::GradientSet policy_gradient(const GaussianPolicy& policy, const PolicySamples& samples, double normalizer,
                                Eigen::Index chunk = 4096, int threads = 1);

/// Sampled rollouts of one epoch.
struct PolicyRollout {
  PolicySamples samples;        // R_0..R_{N-1} normalized jointly
  Eigen::MatrixXd rewards;      // (N+1) x b raw rewards-to-go of surviving trajectories
  Eigen::MatrixXd final_state;  // 2D x b
  LossParts parts;              // batch-mean DP loss parts of the sampled trajectories
  double mean_final_infidelity = 0.0;
  int survivors = 0;
  int aborted = 0;
};

/// Rolls out every column of `initial` with actions drawn from the policy.
/// Noise for trajectory j comes from the stream (seed, policy, epoch, j) and
/// is drawn step by step.
PolicyRollout sample_policy_rollouts(const GaussianPolicy& policy, const BatchGenerator& gen,
                                     const Eigen::MatrixXd& initial, const StepSpec& spec, const State& target,
                                     const LossWeights& weights, std::uint64_t seed, std::uint64_t epoch);

struct ReinforceConfig {
  TrainConfig train;
  double variance = 0.04;

  /// `train` with the baseline's batch of 1024 and learning rate 2.5e-4.
  static ReinforceConfig defaults(TrainConfig base);
  void validate() const;
};

/// One policy-gradient epoch: sample, estimate grad J, ascend with Adam.
/// The record's loss_total holds the batch-mean R_0.
EpochRecord pg_epoch(GaussianPolicy& policy, AdamState& adam, const Task& task, const BatchGenerator& gen,
                     const ReinforceConfig& config, int epoch);

TrainResult train_reinforce(const ReinforceConfig& config,
                            const std::function<void(const EpochRecord&)>& on_epoch = {});

void write_reinforce_history_csv(std::ostream& os, const std::vector<EpochRecord>& history,
                                 const std::string& banner);

}  // namespace qctrl
