#include "qctrl/trainer.hpp"

#include "qctrl/rng.hpp"

#include <cmath>
#include <exception>
#include <iomanip>
#include <iostream>
#include <ostream>
#include <sstream>
#include <thread>

namespace qctrl {

Eigen::MatrixXd stack_states(const std::vector<State>& states) {
  if (states.empty()) return {};
  Eigen::MatrixXd s(2 * states.front().dim(), static_cast<Eigen::Index>(states.size()));
  for (std::size_t j = 0; j < states.size(); ++j) s.col(static_cast<Eigen::Index>(j)) = states[j].stacked();
  return s;
}

RolloutResult rollout(const System& system, const AgentParams& params, const State& initial, const StepSpec& spec,
                      const State& target, const LossWeights& weights) {
  RolloutResult r;
  r.trajectory = rollout_batch(system, params, {initial}, spec, target).front();
  const Trajectory& t = r.trajectory;
  r.parts.F = loss_F(t.fidelities, weights.gamma);
  r.parts.FN = loss_FN(t.fidelities.back());
  Eigen::MatrixXd actions(system.num_controls(), spec.n_steps);
  for (int i = 0; i < spec.n_steps; ++i) actions.col(i) = t.actions[static_cast<std::size_t>(i)];
  r.parts.amp = loss_amp(actions, false);
  r.parts.amp_sq = loss_amp(actions, true);
  r.loss = total_loss(weights, r.parts);
  return r;
}

std::vector<Trajectory> rollout_batch(const System& system, const AgentParams& params,
                                      const std::vector<State>& initial, const StepSpec& spec, const State& target) {
  spec.validate();
  params.arch.validate_for(system.dim(), system.num_controls());
  const BatchGenerator gen(system);
  const auto b = static_cast<Eigen::Index>(initial.size());
  Eigen::MatrixXd s = stack_states(initial);
  Eigen::MatrixXd u = Eigen::MatrixXd::Zero(system.num_controls(), b);
  std::vector<Trajectory> out(initial.size());
  for (Eigen::Index j = 0; j < b; ++j) out[static_cast<std::size_t>(j)].states.push_back(initial[static_cast<std::size_t>(j)]);
  for (int i = 0; i < spec.n_steps; ++i) {
    u = forward(params, s, u);
    s = gen.evolve(s, u, spec.n_sub, spec.dt);
    if (!s.allFinite()) throw NonFiniteError("rollout: non-finite state at step " + std::to_string(i), non_finite_columns(s));
    const Eigen::RowVectorXd f = batch_fidelity(s, target);
    for (Eigen::Index j = 0; j < b; ++j) {
      Trajectory& t = out[static_cast<std::size_t>(j)];
      t.actions.push_back(u.col(j));
      t.states.push_back(State::from_stacked(s.col(j)));
      t.fidelities.push_back(f(j));
    }
  }
  for (Eigen::Index j = 0; j < b; ++j) {
    out[static_cast<std::size_t>(j)].final_norm_drift = std::abs(s.col(j).norm() - 1.0);
  }
  return out;
}

TapedRollout rollout_taped(ad::Tape& tape, const TapedAgent& agent, const BatchGenerator& gen,
                           const Eigen::MatrixXd& initial, const StepSpec& spec, const State& target,
                           const LossWeights& weights) {
  const Eigen::Index b = initial.cols();
  ad::Var s = tape.constant(initial);
  ad::Var u = tape.constant(Eigen::MatrixXd::Zero(gen.num_controls(), b));
  std::vector<ad::Var> fids;
  std::vector<ad::Var> acts;
  fids.reserve(static_cast<std::size_t>(spec.n_steps));
  acts.reserve(static_cast<std::size_t>(spec.n_steps));
  for (int i = 0; i < spec.n_steps; ++i) {
    u = agent(s, u);
    if (!u.value().allFinite()) {
      throw NonFiniteError("non-finite action at step " + std::to_string(i), non_finite_columns(u.value()));
    }
    s = ad::heun_interval(gen, s, u, spec.n_sub, spec.dt);
    const ad::Var f = fidelity_rows(s, target);
    const Eigen::RowVectorXd drift = (s.value().colwise().norm().array() - 1.0).abs();
    std::vector<Eigen::Index> bad;
    for (Eigen::Index j = 0; j < b; ++j) {
      const double fj = f.value()(0, j);
      if (!(fj >= -1e-9 && fj <= 1.0 + 1e-9)) bad.push_back(j);
    }
    if (!bad.empty()) {
      std::ostringstream msg;
      msg << "integrator drift at step " << i << " (norm deviation " << drift(bad.front()) << ", fidelity "
          << f.value()(0, bad.front()) << ")";
      throw NonFiniteError(msg.str(), std::move(bad));
    }
    fids.push_back(f);
    acts.push_back(u);
  }
  TapedRollout r{taped_loss(fids, acts, weights), fids.back().value(), 0.0};
  r.max_norm_drift = (s.value().colwise().norm().array() - 1.0).abs().maxCoeff();
  return r;
}

AdamState AdamState::for_params(const AgentParams& params, double lr) {
  AdamState st;
  st.lr = lr;
  for (const auto& t : params.tensors) {
    st.m.push_back(Eigen::MatrixXd::Zero(t.rows(), t.cols()));
    st.v.push_back(Eigen::MatrixXd::Zero(t.rows(), t.cols()));
  }
  return st;
}

bool adam_step(AgentParams& params, const ad::GradientSet& grads, AdamState& st) {
  if (grads.size() != params.tensors.size() || st.m.size() != params.tensors.size()) {
    throw ConfigError("adam_step: gradient set does not match parameters");
  }
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (grads[i].rows() != params.tensors[i].rows() || grads[i].cols() != params.tensors[i].cols()) {
      throw ConfigError("adam_step: gradient shape mismatch for tensor " + std::to_string(i));
    }
    if (!grads[i].allFinite()) return false;
  }
  ++st.t;
  const double c1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.t));
  const double c2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.t));
  for (std::size_t i = 0; i < grads.size(); ++i) {
    st.m[i] = st.beta1 * st.m[i] + (1.0 - st.beta1) * grads[i];
    st.v[i] = st.beta2 * st.v[i] + (1.0 - st.beta2) * grads[i].cwiseAbs2();
    params.tensors[i].array() -=
        st.lr * (st.m[i].array() / c1) / ((st.v[i].array() / c2).sqrt() + st.eps);
  }
  return true;
}

void clip_gradients(ad::GradientSet& grads, double max_norm) {
  if (!(max_norm > 0.0)) return;
  double sq = 0.0;
  for (const auto& g : grads) sq += g.squaredNorm();
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    for (auto& g : grads) g *= max_norm / norm;
  }
}

void TrainConfig::validate() const {
  task.validate();
  weights.validate();
  arch.validate();
  if (batch < 1) throw ConfigError("train: batch must be >= 1");
  if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
  if (!(lr > 0)) throw ConfigError("train: learning rate must be positive");
  if (eval_size < 1) throw ConfigError("train: eval_size must be >= 1");
  if (threads < 1) throw ConfigError("train: threads must be >= 1");
  if (chunk < 1) throw ConfigError("train: chunk must be >= 1");
  if (clip_norm < 0) throw ConfigError("train: clip_norm must be >= 0");
}

namespace {

struct ChunkResult {
  ad::GradientSet grads;
  LossParts parts;
  double loss = 0.0;
  double final_infidelity = 0.0;
  double max_norm_drift = 0.0;
  int survivors = 0;
  int aborted = 0;
};

ChunkResult run_chunk(const BatchGenerator& gen, const AgentParams& params, const Eigen::MatrixXd& initial,
                      const StepSpec& spec, const State& target, const LossWeights& weights) {
  std::vector<Eigen::Index> cols(static_cast<std::size_t>(initial.cols()));
  for (std::size_t j = 0; j < cols.size(); ++j) cols[j] = static_cast<Eigen::Index>(j);
  ChunkResult out;
  while (!cols.empty()) {
    try {
      ad::Tape tape;
      const TapedAgent agent(tape, params);
      const TapedRollout r = rollout_taped(tape, agent, gen, initial(Eigen::all, cols), spec, target, weights);
      tape.backward(ad::sum(r.loss.total));
      out.grads = agent.gradients();
      out.loss = r.loss.total.value().sum();
      out.parts = {r.loss.F.value().sum(), r.loss.FN.value().sum(), r.loss.amp.value().sum(),
                   r.loss.amp_sq.value().sum()};
      out.final_infidelity = (1.0 - r.final_fidelity.array()).sum();
      out.max_norm_drift = r.max_norm_drift;
      out.survivors = static_cast<int>(cols.size());
      return out;
    } catch (const NonFiniteError& e) {
      if (e.columns().empty()) throw;
      std::cerr << "warning: " << e.columns().size() << " trajectory(ies) aborted: " << e.what() << "\n";
      std::vector<Eigen::Index> keep;
      std::size_t next_bad = 0;
      for (std::size_t j = 0; j < cols.size(); ++j) {
        if (next_bad < e.columns().size() && e.columns()[next_bad] == static_cast<Eigen::Index>(j)) {
          ++next_bad;
          ++out.aborted;
        } else {
          keep.push_back(cols[j]);
        }
      }
      cols = std::move(keep);
    }
  }
  for (const auto& t : params.tensors) out.grads.push_back(Eigen::MatrixXd::Zero(t.rows(), t.cols()));
  return out;
}

}  // namespace

BatchGradient batch_gradient(const BatchGenerator& gen, const AgentParams& params, const Eigen::MatrixXd& initial,
                             const StepSpec& spec, const State& target, const LossWeights& weights, int chunk,
                             int threads) {
  const Eigen::Index b = initial.cols();
  const Eigen::Index n_chunks = (b + chunk - 1) / chunk;
  std::vector<ChunkResult> results(static_cast<std::size_t>(n_chunks));
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n_chunks));

  const auto work = [&](Eigen::Index c) {
    try {
      const Eigen::Index j0 = c * chunk;
      const Eigen::Index n = std::min<Eigen::Index>(chunk, b - j0);
      results[static_cast<std::size_t>(c)] = run_chunk(gen, params, initial.middleCols(j0, n), spec, target, weights);
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

  BatchGradient out;
  int survivors = 0;
  for (const ChunkResult& r : results) {
    if (out.grads.empty()) {
      out.grads = r.grads;
    } else {
      for (std::size_t i = 0; i < out.grads.size(); ++i) out.grads[i] += r.grads[i];
    }
    out.loss += r.loss;
    out.parts.F += r.parts.F;
    out.parts.FN += r.parts.FN;
    out.parts.amp += r.parts.amp;
    out.parts.amp_sq += r.parts.amp_sq;
    out.mean_final_infidelity += r.final_infidelity;
    out.max_norm_drift = std::max(out.max_norm_drift, r.max_norm_drift);
    survivors += r.survivors;
    out.aborted += r.aborted;
  }
  if (survivors > 0) {
    const double inv = 1.0 / survivors;
    for (auto& g : out.grads) g *= inv;
    out.loss *= inv;
    out.parts.F *= inv;
    out.parts.FN *= inv;
    out.parts.amp *= inv;
    out.parts.amp_sq *= inv;
    out.mean_final_infidelity *= inv;
  }
  return out;
}

AgentParams initial_params(const TrainConfig& config) {
  return init_params(config.arch, mix64(config.seed ^ (kInitStream << 56)));
}

std::vector<State> sample_epoch(const Task& task, std::uint64_t seed, std::uint64_t tag, std::uint64_t epoch,
                                int count) {
  std::vector<State> states;
  states.reserve(static_cast<std::size_t>(count));
  for (int j = 0; j < count; ++j) {
    auto rng = stream(seed, tag, epoch, static_cast<std::uint64_t>(j));
    states.push_back(task.sample_initial(rng));
  }
  return states;
}

TrainResult train(const TrainConfig& config, const std::function<void(const EpochRecord&)>& on_epoch) {
  config.validate();
  const Task task(config.task);
  config.arch.validate_for(task.dim(), task.num_controls());
  const BatchGenerator gen(task.system());

  TrainResult result{initial_params(config), {}};
  AdamState adam = AdamState::for_params(result.params, config.lr);
  const int max_aborted = config.batch / 100;
  const int max_skipped = std::max(1, config.epochs / 100);
  int skipped = 0;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto initial =
        stack_states(sample_epoch(task, config.seed, kTrainStream, static_cast<std::uint64_t>(epoch), config.batch));
    BatchGradient bg = batch_gradient(gen, result.params, initial, task.steps(), task.target(), config.weights,
                                      config.chunk, config.threads);
    if (bg.aborted > max_aborted) {
      throw TrainingFailure("epoch " + std::to_string(epoch) + ": " + std::to_string(bg.aborted) + " of " +
                            std::to_string(config.batch) + " trajectories aborted (budget " +
                            std::to_string(max_aborted) + ")");
    }
    clip_gradients(bg.grads, config.clip_norm);
    EpochRecord rec{epoch, bg.loss, bg.parts.F, bg.parts.FN, bg.parts.amp, bg.parts.amp_sq,
                    bg.mean_final_infidelity, bg.aborted, false};
    if (!adam_step(result.params, bg.grads, adam)) {
      rec.skipped = true;
      std::cerr << "warning: epoch " << epoch << ": non-finite gradient, update skipped\n";
      if (++skipped > max_skipped) {
        throw TrainingFailure("too many skipped updates (" + std::to_string(skipped) + ")");
      }
    }
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return result;
}

EvalReport evaluate(const AgentParams& params, const System& system, const std::vector<State>& test_states,
                    const StepSpec& spec, const State& target) {
  spec.validate();
  params.arch.validate_for(system.dim(), system.num_controls());
  if (test_states.empty()) throw ConfigError("evaluate: empty test set");
  const BatchGenerator gen(system);
  const auto n = static_cast<Eigen::Index>(test_states.size());
  const Eigen::Index k = system.num_controls();
  Eigen::MatrixXd s = stack_states(test_states);
  Eigen::MatrixXd u = Eigen::MatrixXd::Zero(k, n);

  EvalReport r;
  r.fid_mean.resize(spec.n_steps);
  r.fid_std.resize(spec.n_steps);
  r.u_mean.resize(k, spec.n_steps);
  r.u_std.resize(k, spec.n_steps);
  r.unorm_mean.resize(spec.n_steps);
  Eigen::RowVectorXd f;
  for (int i = 0; i < spec.n_steps; ++i) {
    u = forward(params, s, u);
    s = gen.evolve(s, u, spec.n_sub, spec.dt);
    if (!s.allFinite()) throw NonFiniteError("evaluate: non-finite state at step " + std::to_string(i), non_finite_columns(s));
    f = batch_fidelity(s, target);
    r.fid_mean(i) = f.mean();
    r.fid_std(i) = std::sqrt((f.array() - r.fid_mean(i)).square().mean());
    r.u_mean.col(i) = u.rowwise().mean();
    r.u_std.col(i) = ((u.colwise() - r.u_mean.col(i)).array().square().rowwise().mean()).sqrt();
    r.unorm_mean(i) = u.colwise().norm().mean();
  }
  r.final_fidelities = f.transpose();
  r.final_mean = r.fid_mean(spec.n_steps - 1);
  r.final_std = r.fid_std(spec.n_steps - 1);
  r.max_norm_drift = (s.colwise().norm().array() - 1.0).abs().maxCoeff();
  if (r.max_norm_drift > kMaxNormDrift) {
    throw IntegratorDriftError("evaluate: norm drift " + std::to_string(r.max_norm_drift) + " exceeds " +
                               std::to_string(kMaxNormDrift));
  }
  return r;
}

std::vector<State> make_test_set(const Task& task, int size, std::uint64_t seed) {
  return sample_epoch(task, seed, kEvalStream, 0, size);
}

void write_history_csv(std::ostream& os, const std::vector<EpochRecord>& history, const std::string& banner) {
  if (!banner.empty()) os << "# " << banner << "\n";
  os << "epoch,loss_total,loss_F,loss_FN,loss_amp,loss_amp_sq,mean_final_infidelity\n";
  os << std::setprecision(17);
  for (const auto& r : history) {
    os << r.epoch << ',' << r.loss_total << ',' << r.loss_F << ',' << r.loss_FN << ',' << r.loss_amp << ','
       << r.loss_amp_sq << ',' << r.mean_final_infidelity << '\n';
  }
}

void write_eval_csv(std::ostream& os, const EvalReport& report, const StepSpec& spec, const std::string& banner) {
  if (!banner.empty()) os << "# " << banner << "\n";
  os << "step,t,fid_mean,fid_std";
  for (Eigen::Index k = 0; k < report.u_mean.rows(); ++k) os << ",u" << k + 1 << "_mean,u" << k + 1 << "_std";
  os << '\n' << std::setprecision(17);
  for (Eigen::Index i = 0; i < report.fid_mean.size(); ++i) {
    os << i + 1 << ',' << static_cast<double>(i + 1) * spec.interval() << ',' << report.fid_mean(i) << ','
       << report.fid_std(i);
    for (Eigen::Index k = 0; k < report.u_mean.rows(); ++k) os << ',' << report.u_mean(k, i) << ',' << report.u_std(k, i);
    os << '\n';
  }
}

}  // namespace qctrl
