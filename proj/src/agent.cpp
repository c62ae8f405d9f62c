#include "qctrl/agent.hpp"

#include <cmath>
#include <random>
#include <sstream>

namespace qctrl {

namespace {

std::vector<LayerSpec> chain(const std::vector<Eigen::Index>& widths, bool linear_output) {
  if (widths.size() < 2) throw ConfigError("architecture: each subnetwork needs at least one layer");
  std::vector<LayerSpec> layers;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    const bool last = i + 2 == widths.size();
    layers.push_back({widths[i], widths[i + 1], last && linear_output ? Activation::None : Activation::ReLU});
  }
  return layers;
}

void check_chain(const std::vector<LayerSpec>& layers, const char* name) {
  if (layers.empty()) throw ConfigError(std::string("architecture: ") + name + " has no layers");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].in_features <= 0 || layers[i].out_features <= 0) {
      throw ConfigError(std::string("architecture: ") + name + " layer " + std::to_string(i) + " has non-positive size");
    }
    if (i > 0 && layers[i].in_features != layers[i - 1].out_features) {
      throw ConfigError(std::string("architecture: ") + name + " layer " + std::to_string(i) + " expects " +
                        std::to_string(layers[i].in_features) + " inputs but previous layer emits " +
                        std::to_string(layers[i - 1].out_features));
    }
  }
}

std::string subnet_string(const std::vector<LayerSpec>& layers) {
  std::ostringstream os;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (i) os << ',';
    os << layers[i].in_features << 'x' << layers[i].out_features;
  }
  return os.str();
}

std::vector<Eigen::Index> parse_widths(const std::string& text) {
  std::vector<Eigen::Index> widths;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto x = item.find('x');
    if (x == std::string::npos) throw ConfigError("architecture: layer '" + item + "' is not of the form INxOUT");
    const Eigen::Index in = std::stol(item.substr(0, x));
    const Eigen::Index out = std::stol(item.substr(x + 1));
    if (!widths.empty() && widths.back() != in) {
      throw ConfigError("architecture: layer '" + item + "' does not chain with the previous layer");
    }
    if (widths.empty()) widths.push_back(in);
    widths.push_back(out);
  }
  return widths;
}

Eigen::MatrixXd run_dense(const AgentParams& p, std::size_t first, const std::vector<LayerSpec>& layers,
                          Eigen::MatrixXd x) {
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const Eigen::MatrixXd& w = p.tensors[first + 2 * l];
    const Eigen::MatrixXd& b = p.tensors[first + 2 * l + 1];
    Eigen::MatrixXd y(w.rows(), x.cols());
    y.noalias() = w * x;
    y.colwise() += b.col(0);
    if (layers[l].activation == Activation::ReLU) y = y.cwiseMax(0.0);
    x = std::move(y);
  }
  return x;
}

}  // namespace

Architecture Architecture::from_widths(const std::vector<Eigen::Index>& state_widths,
                                       const std::vector<Eigen::Index>& action_widths,
                                       const std::vector<Eigen::Index>& combine_widths) {
  Architecture a{chain(state_widths, false), chain(action_widths, false), chain(combine_widths, true)};
  a.validate();
  return a;
}

void Architecture::validate() const {
  check_chain(state_net, "f_s");
  check_chain(action_net, "f_a");
  check_chain(combine_net, "f_c");
  if (state_net.back().out_features != action_net.back().out_features) {
    throw ConfigError("architecture: f_s and f_a output widths differ (" + std::to_string(state_net.back().out_features) +
                      " vs " + std::to_string(action_net.back().out_features) + ")");
  }
  if (combine_net.front().in_features != state_net.back().out_features) {
    throw ConfigError("architecture: f_c input width does not match the f_s/f_a feature width");
  }
  if (combine_net.back().activation != Activation::None) {
    throw ConfigError("architecture: the output layer of f_c must be linear");
  }
  if (action_net.front().in_features != combine_net.back().out_features) {
    throw ConfigError("architecture: f_a input width must equal the number of controls emitted by f_c");
  }
}

void Architecture::validate_for(Eigen::Index dim, Eigen::Index num_controls) const {
  validate();
  if (state_input() != 2 * dim) {
    throw ConfigError("architecture: f_s input is " + std::to_string(state_input()) + ", expected 2D = " +
                      std::to_string(2 * dim));
  }
  if (this->num_controls() != num_controls) {
    throw ConfigError("architecture: f_c output is " + std::to_string(this->num_controls()) + ", expected K = " +
                      std::to_string(num_controls));
  }
}

std::string Architecture::to_string() const {
  return subnet_string(state_net) + "|" + subnet_string(action_net) + "|" + subnet_string(combine_net);
}

Architecture Architecture::parse(const std::string& text) {
  const auto p1 = text.find('|');
  const auto p2 = p1 == std::string::npos ? std::string::npos : text.find('|', p1 + 1);
  if (p2 == std::string::npos) throw ConfigError("architecture: expected three '|'-separated subnetworks");
  return from_widths(parse_widths(text.substr(0, p1)), parse_widths(text.substr(p1 + 1, p2 - p1 - 1)),
                     parse_widths(text.substr(p2 + 1)));
}

std::vector<std::string> AgentParams::names() const {
  std::vector<std::string> out;
  const auto add = [&out](const char* prefix, std::size_t n) {
    for (std::size_t l = 0; l < n; ++l) {
      out.push_back(std::string(prefix) + "." + std::to_string(l) + ".weight");
      out.push_back(std::string(prefix) + "." + std::to_string(l) + ".bias");
    }
  };
  add("fs", arch.state_net.size());
  add("fa", arch.action_net.size());
  add("fc", arch.combine_net.size());
  return out;
}

std::size_t AgentParams::num_scalars() const {
  std::size_t n = 0;
  for (const auto& t : tensors) n += static_cast<std::size_t>(t.size());
  return n;
}

AgentParams init_params(const Architecture& arch, std::uint64_t seed) {
  arch.validate();
  AgentParams p{arch, {}};
  std::mt19937_64 rng(seed);
  for (const auto* net : {&arch.state_net, &arch.action_net, &arch.combine_net}) {
    for (const LayerSpec& l : *net) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(l.in_features));
      std::uniform_real_distribution<double> dist(-bound, bound);
      Eigen::MatrixXd w(l.out_features, l.in_features);
      for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = dist(rng);
      Eigen::MatrixXd b(l.out_features, 1);
      for (Eigen::Index i = 0; i < b.size(); ++i) b.data()[i] = dist(rng);
      p.tensors.push_back(std::move(w));
      p.tensors.push_back(std::move(b));
    }
  }
  return p;
}

AgentParams zero_params(const Architecture& arch) {
  arch.validate();
  AgentParams p{arch, {}};
  for (const auto* net : {&arch.state_net, &arch.action_net, &arch.combine_net}) {
    for (const LayerSpec& l : *net) {
      p.tensors.push_back(Eigen::MatrixXd::Zero(l.out_features, l.in_features));
      p.tensors.push_back(Eigen::MatrixXd::Zero(l.out_features, 1));
    }
  }
  return p;
}

Eigen::MatrixXd forward(const AgentParams& params, const Eigen::MatrixXd& states, const Eigen::MatrixXd& prev) {
  const Architecture& a = params.arch;
  if (states.rows() != a.state_input() || prev.rows() != a.num_controls() || states.cols() != prev.cols()) {
    throw ConfigError("agent forward: input shapes do not match the architecture");
  }
  const std::size_t fa0 = 2 * a.state_net.size();
  const std::size_t fc0 = fa0 + 2 * a.action_net.size();
  Eigen::MatrixXd h = run_dense(params, 0, a.state_net, states);
  h += run_dense(params, fa0, a.action_net, prev);
  return run_dense(params, fc0, a.combine_net, std::move(h));
}

ControlVector forward(const AgentParams& params, const State& state, const ControlVector& prev) {
  return forward(params, Eigen::MatrixXd(state.stacked()), Eigen::MatrixXd(prev)).col(0);
}

TapedAgent::TapedAgent(ad::Tape& tape, const AgentParams& params) : tape_(&tape), arch_(params.arch) {
  vars_.reserve(params.tensors.size());
  for (const auto& t : params.tensors) vars_.push_back(tape.parameter(t));
}

TapedAgent::TapedAgent(ad::Tape& tape, Architecture arch, std::vector<ad::Var> vars)
    : tape_(&tape), arch_(std::move(arch)), vars_(std::move(vars)) {
  const std::size_t expected = 2 * (arch_.state_net.size() + arch_.action_net.size() + arch_.combine_net.size());
  if (vars_.size() != expected) throw ConfigError("TapedAgent: expected " + std::to_string(expected) + " tensors");
}

ad::Var TapedAgent::run(std::size_t first, const std::vector<LayerSpec>& layers, ad::Var x) const {
  for (std::size_t l = 0; l < layers.size(); ++l) {
    x = ad::affine(vars_[first + 2 * l], vars_[first + 2 * l + 1], x);
    if (layers[l].activation == Activation::ReLU) x = ad::relu(x);
  }
  return x;
}

ad::Var TapedAgent::operator()(ad::Var states, ad::Var prev) const {
  const std::size_t fa0 = 2 * arch_.state_net.size();
  const std::size_t fc0 = fa0 + 2 * arch_.action_net.size();
  return run(fc0, arch_.combine_net, run(0, arch_.state_net, states) + run(fa0, arch_.action_net, prev));
}

ad::GradientSet TapedAgent::gradients() const {
  ad::GradientSet g;
  g.reserve(vars_.size());
  for (const auto& v : vars_) g.push_back(tape_->grad(v));
  return g;
}

}  // namespace qctrl
