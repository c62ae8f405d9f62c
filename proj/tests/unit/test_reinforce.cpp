#include "qctrl/reinforce.hpp"
#include "qctrl/rng.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

using namespace qctrl;

namespace {

TrainConfig tiny_qubit() {
  TrainConfig c;
  c.task.kind = TaskKind::Qubit;
  c.task.steps = {20, 5, 0.05};
  c.weights = {0.05, 1.0, 0.0, 1e-4, 1.0};
  c.arch = Architecture::parse("4x32,32x16|1x16|16x8,8x1");
  c.batch = 64;
  c.epochs = 5;
  c.lr = 3e-3;
  c.eval_size = 16;
  c.chunk = 8;
  return c;
}

Eigen::MatrixXd random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

// (1 / n) sum_j r_j log pi(u_j | s_j, prev_j), evaluated directly.
double surrogate(const AgentParams& p, const PolicySamples& s, double variance, double normalizer) {
  const Eigen::MatrixXd mu = forward(p, s.states, s.prev);
  double total = 0.0;
  for (Eigen::Index j = 0; j < s.size(); ++j) {
    total += s.rewards(j) * log_prob(ControlVector(s.actions.col(j)), ControlVector(mu.col(j)), variance);
  }
  return total / normalizer;
}

PolicySamples random_samples(Eigen::Index n, std::mt19937_64& rng) {
  PolicySamples s;
  s.states = random_matrix(4, n, rng);
  s.prev = random_matrix(1, n, rng);
  s.actions = random_matrix(1, n, rng);
  s.rewards = random_matrix(1, n, rng).row(0);
  return s;
}

}  // namespace

TEST_CASE("log_prob") {
  CHECK(log_prob(0.3, 0.3, 0.04) == doctest::Approx(0.69049).epsilon(1e-5));
  CHECK(log_prob(0.3, 0.3, 0.04) == doctest::Approx(-0.5 * std::log(2 * std::numbers::pi * 0.04)));
  CHECK(log_prob(1.0 + 0.2, 1.0, 0.04) == doctest::Approx(log_prob(1.0 - 0.2, 1.0, 0.04)).epsilon(1e-15));
  CHECK(log_prob(1.2, 1.0, 0.04) == doctest::Approx(0.69049 - 0.5).epsilon(1e-5));
  const double h = 1e-6;
  CHECK(std::abs(log_prob(0.5, 0.5 + h, 0.04) - log_prob(0.5, 0.5 - h, 0.04)) < 1e-12);
  ControlVector u(2), mu(2);
  u << 0.1, -0.4;
  mu << 0.0, 0.2;
  CHECK(log_prob(u, mu, 0.04) == doctest::Approx(log_prob(0.1, 0.0, 0.04) + log_prob(-0.4, 0.2, 0.04)));
  CHECK_THROWS_AS(log_prob(0.0, 0.0, 0.0), ConfigError);
  CHECK_THROWS_AS(log_prob(u, ControlVector::Zero(3), 0.04), ConfigError);
}

TEST_CASE("rewards_to_go") {
  const std::vector<double> f{0.1, 0.2, 0.5, 0.9};
  std::vector<ControlVector> u(3, ControlVector::Zero(1));

  SUBCASE("suffix sums of fidelity") {
    const Eigen::VectorXd r = rewards_to_go(f, u, {1, 0, 0, 0, 1});
    REQUIRE(r.size() == 4);
    CHECK(r(3) == doctest::Approx(0.9));
    CHECK(r(2) == doctest::Approx(0.5 + 0.9));
    CHECK(r(1) == doctest::Approx(0.2 + 0.5 + 0.9));
    CHECK(r(0) == doctest::Approx(0.1 + 0.2 + 0.5 + 0.9));
  }
  SUBCASE("zero fidelities and actions") {
    const std::vector<double> z(4, 0.0);
    CHECK(rewards_to_go(z, u, {1, 2, 3, 4, 1}).norm() == 0.0);
  }
  SUBCASE("final-fidelity term enters once per suffix") {
    const Eigen::VectorXd r = rewards_to_go(f, u, {0, 2, 0, 0, 1});
    for (Eigen::Index n = 0; n < 4; ++n) CHECK(r(n) == doctest::Approx(1.8));
  }
  SUBCASE("action penalties use u_n for every term of the suffix") {
    u[0] << 2.0;
    u[2] << -1.0;
    const Eigen::VectorXd r = rewards_to_go(f, u, {0, 0, 0.5, 0.1, 1});
    CHECK(r(3) == 0.0);
    CHECK(r(2) == doctest::Approx(-2 * (0.1 * 1 + 0.5 * 1)));
    CHECK(r(1) == 0.0);
    CHECK(r(0) == doctest::Approx(-4 * (0.1 * 4 + 0.5 * 2)));
  }
  SUBCASE("size mismatch") {
    CHECK_THROWS_AS(rewards_to_go(f, std::vector<ControlVector>(4, ControlVector::Zero(1)), {1, 0, 0, 0, 1}),
                    ConfigError);
  }
}

TEST_CASE("normalize_rewards") {
  std::mt19937_64 rng(5);
  const Eigen::MatrixXd r = random_matrix(7, 9, rng);
  bool degenerate = true;
  const Eigen::MatrixXd n = normalize_rewards(r, &degenerate);
  CHECK_FALSE(degenerate);
  CHECK(std::abs(n.mean()) < 1e-12);
  CHECK(std::sqrt(n.array().square().mean()) == doctest::Approx(1.0).epsilon(1e-12));
  const Eigen::MatrixXd shifted = normalize_rewards((3.5 * r.array() - 2.0).matrix());
  CHECK((shifted - n).cwiseAbs().maxCoeff() < 1e-12);
  const Eigen::MatrixXd flat = normalize_rewards(Eigen::MatrixXd::Constant(3, 4, 2.5), &degenerate);
  CHECK(degenerate);
  CHECK(flat.norm() == 0.0);
}

TEST_CASE("policy_gradient matches finite differences of the surrogate") {
  std::mt19937_64 rng(17);
  const Architecture arch = Architecture::parse("4x6,6x5|1x5|5x4,4x1");
  const GaussianPolicy policy{init_params(arch, 3), 0.04};
  const PolicySamples s = random_samples(23, rng);
  const ad::GradientSet g = policy_gradient(policy, s, 23.0, 5, 1);
  REQUIRE(g.size() == policy.mean.size());

  const double eps = 1e-6;
  double worst = 0.0;
  for (std::size_t k = 0; k < policy.mean.size(); ++k) {
    for (Eigen::Index i = 0; i < policy.mean.tensors[k].size(); ++i) {
      AgentParams plus = policy.mean, minus = policy.mean;
      plus.tensors[k].data()[i] += eps;
      minus.tensors[k].data()[i] -= eps;
      const double numeric =
          (surrogate(plus, s, 0.04, 23.0) - surrogate(minus, s, 0.04, 23.0)) / (2 * eps);
      const double a = g[k].data()[i];
      worst = std::max(worst, std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8}));
    }
  }
  CHECK(worst < 1e-5);

  const ad::GradientSet threaded = policy_gradient(policy, s, 23.0, 5, 3);
  for (std::size_t k = 0; k < g.size(); ++k) CHECK(threaded[k] == g[k]);

  PolicySamples zero = s;
  zero.rewards.setZero();
  for (const auto& t : policy_gradient(policy, zero, 23.0)) CHECK(t.norm() == 0.0);

  PolicySamples bad = s;
  bad.actions = bad.actions.leftCols(3).eval();
  CHECK_THROWS_AS(policy_gradient(policy, bad, 1.0), ConfigError);
  CHECK_THROWS_AS(policy_gradient(policy, s, 0.0), ConfigError);
}

TEST_CASE("two-trajectory estimator moves the mean toward rewarded actions") {
  const Architecture arch = Architecture::parse("4x3|1x3|3x1");
  const GaussianPolicy policy{zero_params(arch), 0.04};
  PolicySamples s;
  s.states = Eigen::MatrixXd::Zero(4, 2);
  s.prev = Eigen::MatrixXd::Zero(1, 2);
  s.actions.resize(1, 2);
  s.actions << 0.1, -0.1;
  s.rewards.resize(2);
  s.rewards << 1.0, -1.0;
  const ad::GradientSet g = policy_gradient(policy, s, 2.0);
  // d/dmu: (1/2) [ (0.1/0.04)(1) + (-0.1/0.04)(-1) ] = 2.5 on the output bias.
  CHECK(g.back()(0, 0) == doctest::Approx(2.5).epsilon(1e-14));
  s.rewards << -1.0, 1.0;
  CHECK(policy_gradient(policy, s, 2.0).back()(0, 0) == doctest::Approx(-2.5).epsilon(1e-14));
}

TEST_CASE("estimator sign on a two-step bandit") {
  // Reward per step -(u - 1)^2; at mu = 0 the true gradient of J in mu is positive.
  const Architecture arch = Architecture::parse("4x3|1x3|3x1");
  const GaussianPolicy policy{zero_params(arch), 0.04};
  const Eigen::Index b = 1024;
  std::mt19937_64 rng(2024);
  std::normal_distribution<double> noise(0.0, 0.2);
  int correct = 0;
  const int batches = 100;
  for (int trial = 0; trial < batches; ++trial) {
    Eigen::MatrixXd rewards(2, b);
    PolicySamples s;
    s.states = Eigen::MatrixXd::Zero(4, 2 * b);
    s.prev = Eigen::MatrixXd::Zero(1, 2 * b);
    s.actions.resize(1, 2 * b);
    for (Eigen::Index j = 0; j < b; ++j) {
      const double u0 = noise(rng);
      const double u1 = noise(rng);
      s.actions(0, 2 * j) = u0;
      s.actions(0, 2 * j + 1) = u1;
      const double r0 = -(u0 - 1) * (u0 - 1);
      const double r1 = -(u1 - 1) * (u1 - 1);
      rewards(0, j) = r0 + r1;
      rewards(1, j) = r1;
    }
    const Eigen::MatrixXd hat = normalize_rewards(rewards);
    s.rewards.resize(2 * b);
    for (Eigen::Index j = 0; j < b; ++j) {
      s.rewards(2 * j) = hat(0, j);
      s.rewards(2 * j + 1) = hat(1, j);
    }
    if (policy_gradient(policy, s, static_cast<double>(b)).back()(0, 0) > 0) ++correct;
  }
  CHECK(correct >= 95);
}

TEST_CASE("sampled rollouts") {
  const TrainConfig c = tiny_qubit();
  const Task task(c.task);
  const BatchGenerator gen(task.system());
  const GaussianPolicy policy{init_params(c.arch, 7), 0.04};
  const Eigen::MatrixXd initial = stack_states(sample_epoch(task, 1, kTrainStream, 1, 6));
  const StepSpec& spec = task.steps();

  const PolicyRollout a = sample_policy_rollouts(policy, gen, initial, spec, task.target(), c.weights, 1, 1);
  const PolicyRollout b = sample_policy_rollouts(policy, gen, initial, spec, task.target(), c.weights, 1, 1);
  const PolicyRollout other = sample_policy_rollouts(policy, gen, initial, spec, task.target(), c.weights, 1, 2);
  CHECK(a.survivors == 6);
  CHECK(a.aborted == 0);
  CHECK(a.samples.size() == 6 * spec.n_steps);
  CHECK(a.samples.actions == b.samples.actions);
  CHECK(a.rewards == b.rewards);
  CHECK(a.samples.actions != other.samples.actions);

  // Trajectory j occupies columns j * N .. j * N + N - 1.
  const int n = spec.n_steps;
  for (Eigen::Index j = 0; j < 6; ++j) {
    CHECK((a.samples.states.col(j * n) - initial.col(j)).norm() == 0.0);
    CHECK(a.samples.prev.col(j * n).norm() == 0.0);
    std::vector<double> f{fidelity(State::from_stacked(initial.col(j)), task.target())};
    std::vector<ControlVector> acts;
    Eigen::VectorXd state = initial.col(j);
    for (int i = 0; i < n; ++i) {
      const Eigen::Index col = j * n + i;
      CHECK((a.samples.states.col(col) - state).norm() < 1e-13);
      if (i > 0) CHECK(a.samples.prev.col(col) == a.samples.actions.col(col - 1));
      acts.push_back(a.samples.actions.col(col));
      state = evolve_interval(task.system(), State::from_stacked(state), acts.back(), spec.n_sub, spec.dt).stacked();
      f.push_back(fidelity(State::from_stacked(state), task.target()));
    }
    CHECK((a.final_state.col(j) - state).norm() < 1e-12);
    CHECK((a.rewards.col(j) - rewards_to_go(f, acts, c.weights)).norm() < 1e-10);
  }
  // Sampled noise has the policy's spread.
  const Eigen::MatrixXd mu = forward(policy.mean, a.samples.states, a.samples.prev);
  const Eigen::ArrayXd z = (a.samples.actions - mu).row(0).array();
  CHECK(std::sqrt(z.square().mean()) == doctest::Approx(0.2).epsilon(0.2));

  const Eigen::MatrixXd hat = normalize_rewards(a.rewards.topRows(n));
  for (Eigen::Index j = 0; j < 6; ++j) {
    for (int i = 0; i < n; ++i) CHECK(a.samples.rewards(j * n + i) == doctest::Approx(hat(i, j)).epsilon(1e-12));
  }
}

TEST_CASE("train_reinforce") {
  ReinforceConfig rc{tiny_qubit(), 0.04};
  const ReinforceConfig d = ReinforceConfig::defaults(tiny_qubit());
  CHECK(d.train.batch == 1024);
  CHECK(d.train.lr == 2.5e-4);
  CHECK(d.variance == 0.04);

  int calls = 0;
  const TrainResult a = train_reinforce(rc, [&](const EpochRecord&) { ++calls; });
  CHECK(calls == rc.train.epochs);
  REQUIRE(a.history.size() == 5);
  for (const auto& r : a.history) {
    CHECK(std::isfinite(r.loss_total));
    CHECK(r.aborted == 0);
    CHECK(r.mean_final_infidelity >= 0.0);
    CHECK(r.mean_final_infidelity <= 1.0);
  }
  rc.train.threads = 3;
  const TrainResult b = train_reinforce(rc);
  for (std::size_t i = 0; i < a.params.size(); ++i) CHECK(a.params.tensors[i] == b.params.tensors[i]);

  std::ostringstream os;
  write_reinforce_history_csv(os, a.history, "banner");
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  CHECK(line == "# banner");
  std::getline(is, line);
  CHECK(line == "epoch,mean_reward,loss_F,loss_FN,loss_amp,loss_amp_sq,mean_final_infidelity");

  rc.variance = 0.0;
  CHECK_THROWS_AS(train_reinforce(rc), ConfigError);
}
