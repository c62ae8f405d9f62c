#include "qctrl/agent.hpp"
#include "qctrl/checkpoint.hpp"
#include "qctrl/config.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

using namespace qctrl;

namespace {

Architecture small_arch() { return Architecture::from_widths({4, 7, 5}, {1, 3, 5}, {5, 6, 1}); }

// Independent forward pass written from the network definition.
Eigen::VectorXd manual_forward(const AgentParams& p, const Eigen::VectorXd& s, const Eigen::VectorXd& u) {
  std::size_t t = 0;
  const auto run = [&](const std::vector<LayerSpec>& layers, Eigen::VectorXd x) {
    for (const LayerSpec& l : layers) {
      x = p.tensors[t] * x + p.tensors[t + 1].col(0);
      t += 2;
      if (l.activation == Activation::ReLU) x = x.cwiseMax(0.0);
    }
    return x;
  };
  const Eigen::VectorXd hs = run(p.arch.state_net, s);
  const Eigen::VectorXd ha = run(p.arch.action_net, u);
  return run(p.arch.combine_net, hs + ha);
}

}  // namespace

TEST_CASE("architecture parsing and validation") {
  const Architecture q = preset_config("qubit-multi-loss").train.arch;
  REQUIRE(q.state_net.size() == 3);
  CHECK(q.state_net[0] == LayerSpec{4, 256, Activation::ReLU});
  CHECK(q.state_net[1] == LayerSpec{256, 256, Activation::ReLU});
  CHECK(q.state_net[2] == LayerSpec{256, 128, Activation::ReLU});
  CHECK(q.combine_net.back().activation == Activation::None);
  CHECK(Architecture::parse(q.to_string()) == q);

  const Architecture cat = preset_config("parametron-cat").train.arch;
  CHECK(cat.state_input() == 32);
  CHECK_NOTHROW(cat.validate_for(16, 1));
  const Architecture ghz = preset_config("ghz-m3").train.arch;
  CHECK(ghz.action_net.front().in_features == 6);
  CHECK_NOTHROW(ghz.validate_for(8, 6));
  CHECK_THROWS_AS(ghz.validate_for(8, 4), ConfigError);

  CHECK_THROWS_AS(Architecture::parse("4x8,9x2|1x2|2x1"), ConfigError);
  CHECK_THROWS_AS(Architecture::parse("4x8|1x4|8x1"), ConfigError);
  CHECK_THROWS_AS(Architecture::parse("garbage"), ConfigError);
  CHECK_THROWS_AS(Architecture::parse("4x8|1x8"), ConfigError);
}

TEST_CASE("init_params") {
  const Architecture a = small_arch();
  const AgentParams p = init_params(a, 42);
  const AgentParams q = init_params(a, 42);
  const AgentParams r = init_params(a, 43);
  REQUIRE(p.size() == 12);
  bool differs = false;
  for (std::size_t i = 0; i < p.size(); ++i) {
    CHECK(p.tensors[i] == q.tensors[i]);
    differs = differs || p.tensors[i] != r.tensors[i];
  }
  CHECK(differs);
  std::size_t t = 0;
  for (const auto* net : {&a.state_net, &a.action_net, &a.combine_net}) {
    for (const LayerSpec& l : *net) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(l.in_features));
      CHECK(p.tensors[t].rows() == l.out_features);
      CHECK(p.tensors[t].cols() == l.in_features);
      CHECK(p.tensors[t].cwiseAbs().maxCoeff() <= bound);
      CHECK(p.tensors[t + 1].cols() == 1);
      CHECK(p.tensors[t + 1].cwiseAbs().maxCoeff() <= bound);
      t += 2;
    }
  }
  CHECK(p.num_scalars() == 4 * 7 + 7 + 7 * 5 + 5 + 3 + 3 + 3 * 5 + 5 + 5 * 6 + 6 + 6 + 1);
  const auto names = p.names();
  CHECK(names.front() == "fs.0.weight");
  CHECK(names[1] == "fs.0.bias");
  CHECK(names[4] == "fa.0.weight");
  CHECK(names.back() == "fc.1.bias");
}

TEST_CASE("forward") {
  const AgentParams p = init_params(small_arch(), 3);
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n;
  Eigen::MatrixXd s(4, 6), u(1, 6);
  for (Eigen::Index i = 0; i < s.size(); ++i) s.data()[i] = n(rng);
  for (Eigen::Index i = 0; i < u.size(); ++i) u.data()[i] = n(rng);
  const Eigen::MatrixXd out = forward(p, s, u);
  for (Eigen::Index j = 0; j < 6; ++j) {
    CHECK((out.col(j) - manual_forward(p, s.col(j), u.col(j))).norm() < 1e-14);
    const State st = State::from_stacked(s.col(j));
    CHECK((forward(p, st, u.col(j)) - out.col(j)).norm() < 1e-14);
  }

  const AgentParams z = zero_params(small_arch());
  CHECK(forward(z, s, u).norm() == 0.0);

  CHECK(first_step_action(1) == Eigen::VectorXd::Zero(1));
  CHECK(first_step_action(12).size() == 12);
  CHECK(first_step_action(12).norm() == 0.0);

  CHECK_THROWS(forward(p, Eigen::MatrixXd::Zero(6, 2), Eigen::MatrixXd::Zero(1, 2)));
  CHECK_THROWS(forward(p, Eigen::MatrixXd::Zero(4, 2), Eigen::MatrixXd::Zero(2, 2)));
}

TEST_CASE("taped agent matches the value path and finite differences") {
  const AgentParams p = init_params(small_arch(), 11);
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n;
  Eigen::MatrixXd s(4, 5), u(1, 5), w(1, 5);
  for (Eigen::Index i = 0; i < s.size(); ++i) s.data()[i] = n(rng);
  for (Eigen::Index i = 0; i < u.size(); ++i) u.data()[i] = n(rng);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = n(rng);

  const auto objective = [&](const AgentParams& q) { return forward(q, s, u).cwiseProduct(w).sum(); };

  ad::Tape t;
  const TapedAgent agent(t, p);
  const ad::Var out = agent(t.constant(s), t.constant(u));
  CHECK((out.value() - forward(p, s, u)).norm() < 1e-14);
  t.backward(ad::dot(out, t.constant(w)));
  const ad::GradientSet g = agent.gradients();
  REQUIRE(g.size() == p.size());

  const double eps = 1e-6;
  double worst = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    for (Eigen::Index i = 0; i < p.tensors[k].size(); ++i) {
      AgentParams plus = p, minus = p;
      plus.tensors[k].data()[i] += eps;
      minus.tensors[k].data()[i] -= eps;
      const double numeric = (objective(plus) - objective(minus)) / (2 * eps);
      const double a = g[k].data()[i];
      worst = std::max(worst, std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-12}));
    }
  }
  CHECK(worst < 1e-6);

  ad::Tape t2;
  std::vector<ad::Var> vars;
  for (const auto& m : p.tensors) vars.push_back(t2.parameter(m));
  const TapedAgent wrapped(t2, p.arch, vars);
  CHECK((wrapped(t2.constant(s), t2.constant(u)).value() - out.value()).norm() == 0.0);
  vars.pop_back();
  CHECK_THROWS_AS(TapedAgent(t2, p.arch, vars), ConfigError);
}

TEST_CASE("checkpoint round trip") {
  const AgentParams p = init_params(preset_config("ghz-m3").train.arch, 5);
  const auto path = std::filesystem::temp_directory_path() / "qctrl_test_agent.ckpt";
  save_checkpoint(path, p, {"0123456789abcdef", 5});
  const LoadedCheckpoint c = load_checkpoint(path);
  CHECK(c.meta.config_hash == "0123456789abcdef");
  CHECK(c.meta.seed == 5);
  CHECK(c.params.arch == p.arch);
  REQUIRE(c.params.size() == p.size());
  for (std::size_t i = 0; i < p.size(); ++i) CHECK(c.params.tensors[i] == p.tensors[i]);

  {
    std::ifstream in(path, std::ios::binary);
    char magic[8];
    in.read(magic, 8);
    CHECK(std::string(magic, 8) == "QCTRLCK1");
  }
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << "not a checkpoint";
  }
  CHECK_THROWS(load_checkpoint(path));
  std::filesystem::remove(path);
  CHECK_THROWS(load_checkpoint(path));
}
