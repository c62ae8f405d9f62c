#include "qctrl/reinforce.hpp"

#include "qctrl/rng.hpp"

#include <cmath>
#include <exception>
#include <iomanip>
#include <iostream>
#include <numbers>
#include <ostream>
#include <thread>

namespace qctrl {

void GaussianPolicy::validate() const {
  if (!(variance > 0.0) || !std::isfinite(variance)) throw ConfigError("policy: variance must be positive");
  mean.arch.validate();
}

double log_prob(double u, double mu, double variance) {
  if (!(variance > 0.0)) throw ConfigError("log_prob: variance must be positive");
  const double d = u - mu;
  return -0.5 * (d * d / variance + std::log(2.0 * std::numbers::pi * variance));
}

double log_prob(const ControlVector& u, const ControlVector& mu, double variance) {
  if (u.size() != mu.size()) throw ConfigError("log_prob: action and mean sizes differ");
  double lp = 0.0;
  for (Eigen::Index k = 0; k < u.size(); ++k) lp += log_prob(u(k), mu(k), variance);
  return lp;
}

Eigen::VectorXd rewards_to_go(const std::vector<double>& fidelities, const std::vector<ControlVector>& actions,
                              const LossWeights& w) {
  if (fidelities.empty() || actions.size() + 1 != fidelities.size()) {
    throw ConfigError("rewards_to_go: expected N+1 fidelities for N actions");
  }
  const auto n_steps = static_cast<Eigen::Index>(actions.size());
  Eigen::VectorXd r(n_steps + 1);
  double suffix = 0.0;
  for (Eigen::Index n = n_steps; n >= 0; --n) {
    suffix += fidelities[static_cast<std::size_t>(n)];
    double penalty = 0.0;
    if (n < n_steps) {
      const double norm = actions[static_cast<std::size_t>(n)].norm();
      penalty = w.c_amp_sq * norm * norm + w.c_amp * norm;
    }
    r(n) = w.c_F * suffix + w.c_FN * fidelities.back() - static_cast<double>(n_steps - n + 1) * penalty;
  }
  return r;
}

Eigen::MatrixXd normalize_rewards(const Eigen::MatrixXd& rewards, bool* degenerate) {
  if (degenerate != nullptr) *degenerate = false;
  if (rewards.size() == 0) return rewards;
  const double mean = rewards.mean();
  const double var = (rewards.array() - mean).square().mean();
  const double sd = std::sqrt(var);
  if (!(sd > 1e-12 * std::max(1.0, std::abs(mean)))) {
    std::cerr << "warning: rewards-to-go have zero variance; normalized rewards set to zero\n";
    if (degenerate != nullptr) *degenerate = true;
    return Eigen::MatrixXd::Zero(rewards.rows(), rewards.cols());
  }
  return (rewards.array() - mean) / sd;
}

ad::GradientSet policy_gradient(const GaussianPolicy& policy, const PolicySamples& samples, double normalizer,
                                Eigen::Index chunk, int threads) {
  policy.validate();
  if (!(normalizer > 0.0)) throw ConfigError("policy_gradient: normalizer must be positive");
  if (chunk < 1) throw ConfigError("policy_gradient: chunk must be >= 1");
  const Eigen::Index n = samples.size();
  if (samples.prev.cols() != n || samples.actions.cols() != n || samples.rewards.size() != n) {
    throw ConfigError("policy_gradient: sample arrays disagree in length");
  }
  const Eigen::Index n_chunks = (n + chunk - 1) / chunk;
  std::vector<ad::GradientSet> partial(static_cast<std::size_t>(n_chunks));
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n_chunks));

  const auto work = [&](Eigen::Index c) {
    try {
      const Eigen::Index j0 = c * chunk;
      const Eigen::Index m = std::min(chunk, n - j0);
      ad::Tape tape;
      const TapedAgent agent(tape, policy.mean);
      const ad::Var mu = agent(tape.constant(samples.states.middleCols(j0, m)),
                               tape.constant(samples.prev.middleCols(j0, m)));
      // d/dmu log pi = (u - mu) / var, weighted by the normalized reward.
      Eigen::MatrixXd seed = (samples.actions.middleCols(j0, m) - mu.value()) / policy.variance;
      seed.array().rowwise() *= samples.rewards.segment(j0, m).array();
      tape.backward(mu, seed);
      partial[static_cast<std::size_t>(c)] = agent.gradients();
    } catch (...) {
      errors[static_cast<std::size_t>(c)] = std::current_exception();
    }
  };
  const int workers = static_cast<int>(std::min<Eigen::Index>(threads, n_chunks));
  if (workers <= 1) {
    for (Eigen::Index c = 0; c < n_chunks; ++c) work(c);
  } else {
    std::vector<std::jthread> pool;
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (Eigen::Index c = w; c < n_chunks; c += workers) work(c);
      });
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  ad::GradientSet out;
  for (const auto& t : policy.mean.tensors) out.push_back(Eigen::MatrixXd::Zero(t.rows(), t.cols()));
  for (const auto& g : partial) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += g[i];
  }
  for (auto& g : out) g /= normalizer;
  return out;
}

PolicyRollout sample_policy_rollouts(const GaussianPolicy& policy, const BatchGenerator& gen,
                                     const Eigen::MatrixXd& initial, const StepSpec& spec, const State& target,
                                     const LossWeights& weights, std::uint64_t seed, std::uint64_t epoch) {
  policy.validate();
  spec.validate();
  const Eigen::Index b = initial.cols();
  const Eigen::Index k = gen.num_controls();
  const int n_steps = spec.n_steps;
  const double sigma = std::sqrt(policy.variance);

  std::vector<std::mt19937_64> rngs;
  rngs.reserve(static_cast<std::size_t>(b));
  for (Eigen::Index j = 0; j < b; ++j) rngs.push_back(stream(seed, kPolicyStream, epoch, static_cast<std::uint64_t>(j)));
  std::normal_distribution<double> normal(0.0, 1.0);

  Eigen::MatrixXd states(initial.rows(), b * n_steps);
  Eigen::MatrixXd prev(k, b * n_steps);
  Eigen::MatrixXd actions(k, b * n_steps);
  Eigen::MatrixXd fid(n_steps + 1, b);
  std::vector<bool> dead(static_cast<std::size_t>(b), false);

  Eigen::MatrixXd s = initial;
  Eigen::MatrixXd u_prev = Eigen::MatrixXd::Zero(k, b);
  fid.row(0) = batch_fidelity(s, target);
  for (int i = 0; i < n_steps; ++i) {
    Eigen::MatrixXd u = forward(policy.mean, s, u_prev);
    for (Eigen::Index j = 0; j < b; ++j) {
      for (Eigen::Index c = 0; c < k; ++c) u(c, j) += sigma * normal(rngs[static_cast<std::size_t>(j)]);
    }
    states.middleCols(i * b, b) = s;
    prev.middleCols(i * b, b) = u_prev;
    actions.middleCols(i * b, b) = u;
    s = gen.evolve(s, u, spec.n_sub, spec.dt);
    fid.row(i + 1) = batch_fidelity(s, target);
    for (Eigen::Index j = 0; j < b; ++j) {
      const double f = fid(i + 1, j);
      if (!u.col(j).allFinite() || !s.col(j).allFinite() || !(f >= -1e-9 && f <= 1.0 + 1e-9)) {
        if (!dead[static_cast<std::size_t>(j)]) {
          std::cerr << "warning: epoch " << epoch << ": trajectory " << j << " aborted at step " << i << "\n";
        }
        dead[static_cast<std::size_t>(j)] = true;
        s.col(j) = initial.col(j);
        u.col(j).setZero();
      }
    }
    u_prev = u;
  }

  PolicyRollout out;
  std::vector<Eigen::Index> alive;
  for (Eigen::Index j = 0; j < b; ++j) {
    if (!dead[static_cast<std::size_t>(j)]) alive.push_back(j);
  }
  out.survivors = static_cast<int>(alive.size());
  out.aborted = static_cast<int>(b) - out.survivors;
  out.rewards.resize(n_steps + 1, out.survivors);
  out.final_state = s(Eigen::all, alive);

  std::vector<double> f(static_cast<std::size_t>(n_steps + 1));
  std::vector<ControlVector> acts(static_cast<std::size_t>(n_steps));
  Eigen::MatrixXd act_block(k, n_steps);
  for (std::size_t a = 0; a < alive.size(); ++a) {
    const Eigen::Index j = alive[a];
    for (int i = 0; i <= n_steps; ++i) f[static_cast<std::size_t>(i)] = fid(i, j);
    for (int i = 0; i < n_steps; ++i) {
      acts[static_cast<std::size_t>(i)] = actions.col(i * b + j);
      act_block.col(i) = acts[static_cast<std::size_t>(i)];
    }
    out.rewards.col(static_cast<Eigen::Index>(a)) = rewards_to_go(f, acts, weights);
    out.parts.F += loss_F(std::span<const double>(f).subspan(1), weights.gamma);
    out.parts.FN += loss_FN(f.back());
    out.parts.amp += loss_amp(act_block, false);
    out.parts.amp_sq += loss_amp(act_block, true);
    out.mean_final_infidelity += 1.0 - f.back();
  }
  if (out.survivors > 0) {
    const double inv = 1.0 / out.survivors;
    out.parts.F *= inv;
    out.parts.FN *= inv;
    out.parts.amp *= inv;
    out.parts.amp_sq *= inv;
    out.mean_final_infidelity *= inv;
  }

  const Eigen::MatrixXd r_hat = normalize_rewards(out.rewards.topRows(n_steps));
  const Eigen::Index n = static_cast<Eigen::Index>(alive.size()) * n_steps;
  out.samples.states.resize(initial.rows(), n);
  out.samples.prev.resize(k, n);
  out.samples.actions.resize(k, n);
  out.samples.rewards.resize(n);
  Eigen::Index col = 0;
  for (std::size_t a = 0; a < alive.size(); ++a) {
    for (int i = 0; i < n_steps; ++i, ++col) {
      const Eigen::Index src = i * b + alive[a];
      out.samples.states.col(col) = states.col(src);
      out.samples.prev.col(col) = prev.col(src);
      out.samples.actions.col(col) = actions.col(src);
      out.samples.rewards(col) = r_hat(i, static_cast<Eigen::Index>(a));
    }
  }
  return out;
}

ReinforceConfig ReinforceConfig::defaults(TrainConfig base) {
  base.batch = 1024;
  base.lr = 2.5e-4;
  return {std::move(base), 0.04};
}

void ReinforceConfig::validate() const {
  train.validate();
  if (!(variance > 0.0)) throw ConfigError("reinforce: variance must be positive");
}

EpochRecord pg_epoch(GaussianPolicy& policy, AdamState& adam, const Task& task, const BatchGenerator& gen,
                     const ReinforceConfig& config, int epoch) {
  const TrainConfig& tc = config.train;
  const StepSpec& spec = task.steps();
  const auto initial =
      stack_states(sample_epoch(task, tc.seed, kTrainStream, static_cast<std::uint64_t>(epoch), tc.batch));
  const PolicyRollout ro = sample_policy_rollouts(policy, gen, initial, spec, task.target(), tc.weights, tc.seed,
                                                  static_cast<std::uint64_t>(epoch));
  if (ro.aborted > tc.batch / 100) {
    throw TrainingFailure("epoch " + std::to_string(epoch) + ": " + std::to_string(ro.aborted) + " of " +
                          std::to_string(tc.batch) + " trajectories aborted");
  }
  EpochRecord rec{epoch, ro.rewards.row(0).mean(), ro.parts.F, ro.parts.FN, ro.parts.amp, ro.parts.amp_sq,
                  ro.mean_final_infidelity, ro.aborted, false};
  ad::GradientSet g = policy_gradient(policy, ro.samples, static_cast<double>(ro.survivors),
                                      static_cast<Eigen::Index>(tc.chunk) * spec.n_steps, tc.threads);
  // Adam minimizes, the policy ascends J.
  for (auto& t : g) t = -t;
  clip_gradients(g, tc.clip_norm);
  if (!adam_step(policy.mean, g, adam)) {
    rec.skipped = true;
    std::cerr << "warning: epoch " << epoch << ": non-finite policy gradient, update skipped\n";
  }
  return rec;
}

TrainResult train_reinforce(const ReinforceConfig& config, const std::function<void(const EpochRecord&)>& on_epoch) {
  config.validate();
  const Task task(config.train.task);
  config.train.arch.validate_for(task.dim(), task.num_controls());
  const BatchGenerator gen(task.system());
  GaussianPolicy policy{initial_params(config.train), config.variance};
  AdamState adam = AdamState::for_params(policy.mean, config.train.lr);
  const int max_skipped = std::max(1, config.train.epochs / 100);
  int skipped = 0;
  std::vector<EpochRecord> history;
  for (int epoch = 1; epoch <= config.train.epochs; ++epoch) {
    const EpochRecord rec = pg_epoch(policy, adam, task, gen, config, epoch);
    if (rec.skipped && ++skipped > max_skipped) {
      throw TrainingFailure("too many skipped updates (" + std::to_string(skipped) + ")");
    }
    history.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return {std::move(policy.mean), std::move(history)};
}

void write_reinforce_history_csv(std::ostream& os, const std::vector<EpochRecord>& history,
                                 const std::string& banner) {
  if (!banner.empty()) os << "# " << banner << "\n";
  os << "epoch,mean_reward,loss_F,loss_FN,loss_amp,loss_amp_sq,mean_final_infidelity\n";
  os << std::setprecision(17);
  for (const auto& r : history) {
    os << r.epoch << ',' << r.loss_total << ',' << r.loss_F << ',' << r.loss_FN << ',' << r.loss_amp << ','
       << r.loss_amp_sq << ',' << r.mean_final_infidelity << '\n';
  }
}

}  // namespace qctrl
