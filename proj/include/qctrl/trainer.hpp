#pragma once

#include "qctrl/agent.hpp"
#include "qctrl/autodiff.hpp"
#include "qctrl/integrator.hpp"
#include "qctrl/losses.hpp"
#include "qctrl/systems.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <stdexcept>
#include <vector>

namespace qctrl {

/// One rollout: N+1 states, N actions, fidelities F(t_1)..F(t_N).
struct Trajectory {
  std::vector<State> states;
  std::vector<ControlVector> actions;
  std::vector<double> fidelities;
  double final_norm_drift = 0.0;
};

struct RolloutResult {
  Trajectory trajectory;
  LossParts parts;
  double loss = 0.0;
};

/// Value-only rollout of a single trajectory, starting from u_{-1} = 0.
RolloutResult rollout(const System& system, const AgentParams& params, const State& initial, const StepSpec& spec,
                      const State& target, const LossWeights& weights);

/// Value-only rollout of many trajectories at once.
std::vector<Trajectory> rollout_batch(const System& system, const AgentParams& params,
                                      const std::vector<State>& initial, const StepSpec& spec, const State& target);

/// Taped rollout of a (2D x b) batch. Per-trajectory losses are (1 x b).
struct TapedRollout {
  TapedLoss loss;
  Eigen::MatrixXd final_fidelity;  // 1 x b
  double max_norm_drift = 0.0;
};

/// Throws NonFiniteError naming the aborted columns.
TapedRollout rollout_taped(ad::Tape& tape, const TapedAgent& agent, const BatchGenerator& gen,
                           const Eigen::MatrixXd& initial, const StepSpec& spec, const State& target,
                           const LossWeights& weights);

/// Stacks states into a (2D x b) batch.
Eigen::MatrixXd stack_states(const std::vector<State>& states);

struct AdamState {
  std::vector<Eigen::MatrixXd> m;
  std::vector<Eigen::MatrixXd> v;
  long t = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState for_params(const AgentParams& params, double lr);
};

/// One bias-corrected Adam update. A non-finite gradient skips the update
/// (parameters and state untouched) and returns false.
bool adam_step(AgentParams& params, const ad::GradientSet& grads, AdamState& state);

/// Rescales `grads` in place so their global L2 norm is at most `max_norm`.
void clip_gradients(ad::GradientSet& grads, double max_norm);

class TrainingFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  TaskSpec task;
  LossWeights weights;
  Architecture arch;
  int batch = 256;
  int epochs = 400;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  int eval_size = 512;
  int threads = 1;
  /// Trajectories per tape. Fixed independently of `threads`, so results do
  /// not depend on the worker count.
  int chunk = 64;
  /// Global gradient-norm clip; 0 disables clipping.
  double clip_norm = 0.0;

  void validate() const;
};

/// Batch-mean gradient and loss statistics of one set of initial states.
struct BatchGradient {
  ad::GradientSet grads;
  LossParts parts;
  double loss = 0.0;
  double mean_final_infidelity = 0.0;
  double max_norm_drift = 0.0;
  int aborted = 0;
};

/// Rolls out all `initial` columns in chunks (in parallel when threads > 1),
/// reduces per-chunk gradients in chunk order and divides by the number of
/// surviving trajectories. Aborted trajectories are dropped and counted.
BatchGradient batch_gradient(const BatchGenerator& gen, const AgentParams& params, const Eigen::MatrixXd& initial,
                             const StepSpec& spec, const State& target, const LossWeights& weights, int chunk,
                             int threads);

struct EpochRecord {
  int epoch = 0;
  double loss_total = 0.0;
  double loss_F = 0.0;
  double loss_FN = 0.0;
  double loss_amp = 0.0;
  double loss_amp_sq = 0.0;
  double mean_final_infidelity = 0.0;
  int aborted = 0;
  bool skipped = false;
};

struct TrainResult {
  AgentParams params;
  std::vector<EpochRecord> history;
};

/// Initial agent parameters for a config (deterministic in the seed).
AgentParams initial_params(const TrainConfig& config);

/// Fresh initial states for trajectory indices [0, count) of an epoch.
std::vector<State> sample_epoch(const Task& task, std::uint64_t seed, std::uint64_t tag, std::uint64_t epoch,
                                int count);

TrainResult train(const TrainConfig& config, const std::function<void(const EpochRecord&)>& on_epoch = {});

/// Test-set statistics. Steps run i = 1..N; actions are u(t_{i-1}), the
/// control held over the interval ending at t_i.
struct EvalReport {
  Eigen::VectorXd fid_mean;   // N
  Eigen::VectorXd fid_std;    // N
  Eigen::MatrixXd u_mean;     // K x N
  Eigen::MatrixXd u_std;      // K x N
  Eigen::VectorXd unorm_mean; // N, mean over the test set of ||u||
  Eigen::VectorXd final_fidelities;
  double final_mean = 0.0;
  double final_std = 0.0;
  double max_norm_drift = 0.0;
};

/// Throws IntegratorDriftError if any trajectory drifts beyond kMaxNormDrift.
EvalReport evaluate(const AgentParams& params, const System& system, const std::vector<State>& test_states,
                    const StepSpec& spec, const State& target);

std::vector<State> make_test_set(const Task& task, int size, std::uint64_t seed);

void write_history_csv(std::ostream& os, const std::vector<EpochRecord>& history, const std::string& banner);
void write_eval_csv(std::ostream& os, const EvalReport& report, const StepSpec& spec, const std::string& banner);

}  // namespace qctrl
