#include "qctrl/systems.hpp"

#include <unsupported/Eigen/KroneckerProduct>

#include <cmath>
#include <iostream>
#include <numbers>

namespace qctrl {

namespace {

using CMat = Eigen::MatrixXcd;
using cd = std::complex<double>;

CMat pauli_x() {
  CMat m(2, 2);
  m << 0, 1, 1, 0;
  return m;
}

CMat pauli_y() {
  CMat m(2, 2);
  m << 0, cd(0, -1), cd(0, 1), 0;
  return m;
}

CMat pauli_z() {
  CMat m(2, 2);
  m << 1, 0, 0, -1;
  return m;
}

/// `op` on site `i` of an M-site chain; site 0 is the leftmost tensor factor.
CMat site_operator(const CMat& op, int i, int num_sites) {
  CMat out = CMat::Identity(1, 1);
  for (int s = 0; s < num_sites; ++s) {
    const CMat factor = s == i ? op : CMat::Identity(2, 2);
    CMat next = Eigen::kroneckerProduct(out, factor).eval();
    out = std::move(next);
  }
  return out;
}

CMat annihilation(int dim) {
  CMat a = CMat::Zero(dim, dim);
  for (int n = 1; n < dim; ++n) a(n - 1, n) = std::sqrt(static_cast<double>(n));
  return a;
}

}  // namespace

System build_qubit(double omega) {
  if (!(omega > 0.0)) throw ConfigError("qubit: omega must be positive");
  return System(Hamiltonian::from_complex(0.5 * omega * pauli_z()), {Hamiltonian::from_complex(pauli_x())});
}

System build_spin_chain(int num_sites, double coupling) {
  if (num_sites < 2 || num_sites > 6) {
    throw ConfigError("spin chain: M = " + std::to_string(num_sites) + " outside the supported range 2..6");
  }
  if (!(coupling > 0.0)) throw ConfigError("spin chain: J must be positive");
  const int dim = 1 << num_sites;
  CMat drift = CMat::Zero(dim, dim);
  for (int i = 0; i + 1 < num_sites; ++i) {
    drift += coupling * site_operator(pauli_z(), i, num_sites) * site_operator(pauli_z(), i + 1, num_sites);
  }
  std::vector<Hamiltonian> controls;
  for (int i = 0; i < num_sites; ++i) {
    controls.push_back(Hamiltonian::from_complex(site_operator(pauli_x(), i, num_sites)));
    controls.push_back(Hamiltonian::from_complex(site_operator(pauli_y(), i, num_sites)));
  }
  return System(Hamiltonian::from_complex(drift), std::move(controls));
}

System build_parametron(double kerr, double two_photon, int dim, bool two_quadratures) {
  if (dim < 8) throw ConfigError("parametron: Fock cutoff D must be at least 8");
  const CMat a = annihilation(dim);
  const CMat ad = a.adjoint();
  const CMat drift = kerr * (ad * ad * a * a) + two_photon * (ad * ad + a * a);
  std::vector<Hamiltonian> controls{Hamiltonian::from_complex(a + ad)};
  if (two_quadratures) controls.push_back(Hamiltonian::from_complex(cd(0, 1) * (a - ad)));
  return System(Hamiltonian::from_complex(drift), std::move(controls));
}

State bloch_state(double theta, double phi) {
  Eigen::VectorXd re(2), im(2);
  re << std::cos(theta / 2), std::sin(theta / 2) * std::cos(phi);
  im << 0.0, std::sin(theta / 2) * std::sin(phi);
  return State(re, im);
}

State sample_bloch_uniform(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> cos_theta(-1.0, 1.0);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  const double c = cos_theta(rng);
  const double phi = phase(rng);
  return bloch_state(std::acos(c), phi);
}

State neel_state(int num_sites, int which) {
  int index = 0;
  for (int i = 0; i < num_sites; ++i) {
    const bool down = ((i + which) % 2) == 1;
    if (down) index |= 1 << (num_sites - 1 - i);
  }
  return State::basis(Eigen::Index{1} << num_sites, index);
}

State sample_neel_noisy(int num_sites, double p, std::mt19937_64& rng, FlipNoise mode) {
  if (!(p >= 0.0 && p < 1.0)) throw ConfigError("flip probability must lie in [0, 1)");
  std::bernoulli_distribution coin(0.5);
  std::bernoulli_distribution flip(p);
  const State base = neel_state(num_sites, coin(rng) ? 1 : 0);
  Eigen::Index index = 0;
  base.re().cwiseAbs().maxCoeff(&index);
  if (mode == FlipNoise::PerSite) {
    for (int i = 0; i < num_sites; ++i) {
      if (flip(rng)) index ^= Eigen::Index{1} << (num_sites - 1 - i);
    }
  } else if (flip(rng)) {
    std::uniform_int_distribution<int> site(0, num_sites - 1);
    index ^= Eigen::Index{1} << (num_sites - 1 - site(rng));
  }
  return State::basis(base.dim(), index);
}

Eigen::VectorXd noisy_vacuum_coefficients(int dim, double xi, std::mt19937_64& rng) {
  if (xi < 0.0) throw ConfigError("noise half-width xi must be non-negative");
  Eigen::VectorXd c = Eigen::VectorXd::Zero(dim);
  c(0) = 1.0;
  if (xi == 0.0) return c;
  std::uniform_real_distribution<double> noise(-xi, xi);
  for (int n = 0; n < dim; ++n) c(n) += std::exp(-n / 3.0) * noise(rng);
  return c;
}

State sample_noisy_vacuum(int dim, double xi, std::mt19937_64& rng) {
  return State(noisy_vacuum_coefficients(dim, xi, rng), Eigen::VectorXd::Zero(dim));
}

State ghz_state(int num_sites) {
  if (num_sites < 2) throw ConfigError("GHZ state needs at least two sites");
  const Eigen::Index dim = Eigen::Index{1} << num_sites;
  Eigen::VectorXd re = Eigen::VectorXd::Zero(dim);
  re(0) = re(dim - 1) = 1.0 / std::sqrt(2.0);
  return State(re, Eigen::VectorXd::Zero(dim));
}

State cat_state(double alpha, int dim, double* tail_probability) {
  // Log-space coherent amplitudes; odd terms of |alpha> + |-alpha> cancel.
  const auto log_amp = [alpha](int n) {
    return -0.5 * alpha * alpha + n * std::log(std::abs(alpha)) - 0.5 * std::lgamma(n + 1.0);
  };
  Eigen::VectorXd re = Eigen::VectorXd::Zero(dim);
  for (int n = 0; n < dim; n += 2) re(n) = alpha == 0.0 ? (n == 0 ? 1.0 : 0.0) : 2.0 * std::exp(log_amp(n));
  double tail = 0.0;
  double total = re.squaredNorm();
  if (alpha != 0.0) {
    for (int n = dim + (dim % 2); n < dim + 400; n += 2) tail += 4.0 * std::exp(2.0 * log_amp(n));
    total += tail;
    tail /= total;
  }
  if (tail_probability != nullptr) *tail_probability = tail;
  if (tail > 1e-6) {
    static bool warned = false;
    if (!warned) {
      std::cerr << "warning: cat state alpha=" << alpha << " loses probability " << tail
                << " to the Fock cutoff D=" << dim << "\n";
      warned = true;
    }
  }
  return State(re, Eigen::VectorXd::Zero(dim));
}

namespace {

Eigen::SelfAdjointEigenSolver<CMat> solve_drift(const System& system) {
  Eigen::SelfAdjointEigenSolver<CMat> es(system.drift().to_complex());
  if (es.info() != Eigen::Success) throw std::runtime_error("drift eigensolver failed");
  return es;
}

}  // namespace

State drift_eigenstate(const System& system, int k) {
  if (k < 0 || k >= system.dim()) throw ConfigError("drift_eigenstate: index out of range");
  const auto es = solve_drift(system);
  Eigen::VectorXcd v = es.eigenvectors().col(k);
  Eigen::Index imax = 0;
  v.cwiseAbs().maxCoeff(&imax);
  v *= std::conj(v(imax)) / std::abs(v(imax));
  return State::from_complex(v);
}

Eigen::VectorXd drift_spectrum(const System& system) { return solve_drift(system).eigenvalues(); }

double mean_photon_number(const State& s) {
  const Eigen::VectorXd n = Eigen::VectorXd::LinSpaced(s.dim(), 0.0, static_cast<double>(s.dim() - 1));
  return n.dot(s.re().cwiseAbs2() + s.im().cwiseAbs2());
}

std::string to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::Qubit: return "qubit";
    case TaskKind::SpinChain: return "spin_chain";
    case TaskKind::Parametron: return "parametron";
  }
  return "?";
}

TaskKind parse_task_kind(const std::string& text) {
  if (text == "qubit") return TaskKind::Qubit;
  if (text == "spin_chain") return TaskKind::SpinChain;
  if (text == "parametron") return TaskKind::Parametron;
  throw ConfigError("unknown task kind '" + text + "' (expected qubit, spin_chain or parametron)");
}

void TaskSpec::validate() const {
  steps.validate();
  switch (kind) {
    case TaskKind::Qubit:
      if (!(omega > 0)) throw ConfigError("task: omega must be positive");
      break;
    case TaskKind::SpinChain:
      if (!(coupling > 0)) throw ConfigError("task: J must be positive");
      if (num_sites < 2 || num_sites > 6) throw ConfigError("task: M must lie in 2..6");
      if (!(flip_probability >= 0 && flip_probability < 1)) throw ConfigError("task: flip probability in [0, 1)");
      break;
    case TaskKind::Parametron:
      if (!(kerr > 0)) throw ConfigError("task: U must be positive");
      if (fock_dim < 8) throw ConfigError("task: D must be at least 8");
      if (xi < 0) throw ConfigError("task: xi must be non-negative");
      break;
  }
}

namespace {

System build(const TaskSpec& s) {
  s.validate();
  switch (s.kind) {
    case TaskKind::Qubit: return build_qubit(s.omega);
    case TaskKind::SpinChain: return build_spin_chain(s.num_sites, s.coupling);
    case TaskKind::Parametron: return build_parametron(s.kerr, s.two_photon, s.fock_dim, s.two_quadratures);
  }
  throw ConfigError("unknown task kind");
}

State make_target(const TaskSpec& s) {
  switch (s.kind) {
    case TaskKind::Qubit: return State::basis(2, 0);
    case TaskKind::SpinChain: return ghz_state(s.num_sites);
    case TaskKind::Parametron: return cat_state(s.alpha, s.fock_dim);
  }
  throw ConfigError("unknown task kind");
}

}  // namespace

Task::Task(TaskSpec spec) : spec_(std::move(spec)), system_(build(spec_)), target_(make_target(spec_)) {}

State Task::sample_initial(std::mt19937_64& rng) const {
  switch (spec_.kind) {
    case TaskKind::Qubit: return sample_bloch_uniform(rng);
    case TaskKind::SpinChain: return sample_neel_noisy(spec_.num_sites, spec_.flip_probability, rng, spec_.flip_mode);
    case TaskKind::Parametron: return sample_noisy_vacuum(spec_.fock_dim, spec_.xi, rng);
  }
  throw ConfigError("unknown task kind");
}

}  // namespace qctrl
