#pragma once

// Physical systems: a driven qubit, an Ising spin chain with local x/y drives,
// and a Kerr parametric oscillator in a truncated Fock basis. Plus their
// targets and noisy initial-state samplers.

#include "qctrl/integrator.hpp"
#include "qctrl/realspace.hpp"

#include <random>
#include <string>

namespace qctrl {

/// H = omega/2 sigma_z + u_x sigma_x on basis (|up>, |down>).
System build_qubit(double omega);

/// H = J sum_{i<M} sz_i sz_{i+1} + sum_i (ux_i sx_i + uy_i sy_i), open chain.
/// Basis index bits: site 0 is the most significant bit, bit 1 means down, so
/// index 0 is all-up and index 2^M - 1 all-down. Controls are ordered
/// (sx_0, sy_0, sx_1, sy_1, ...).
System build_spin_chain(int num_sites, double coupling);

/// H = U a+a+aa + G (a+a+ + aa) + u (a + a+) truncated to D Fock states.
/// With `two_quadratures` a second control i(a - a+) is added.
System build_parametron(double kerr, double two_photon, int dim, bool two_quadratures = false);

/// cos(theta/2)|up> + sin(theta/2) e^{i phi}|down>.
State bloch_state(double theta, double phi);
/// cos(theta) uniform in [-1, 1], phi uniform in [0, 2 pi).
State sample_bloch_uniform(std::mt19937_64& rng);

/// Neel state; `which` = 0 starts up (|up down up ...>), 1 starts down.
State neel_state(int num_sites, int which);

enum class FlipNoise {
  PerSite,    // every site flips independently with probability p
  SingleSite  // with probability p exactly one uniformly chosen site flips
};

/// One of the two Neel states (probability 1/2 each) with spin-flip noise.
State sample_neel_noisy(int num_sites, double p, std::mt19937_64& rng, FlipNoise mode = FlipNoise::PerSite);

/// Unnormalized coefficients |0> + sum_n e^{-n/3} xi_n |n>, xi_n ~ U[-xi, xi].
Eigen::VectorXd noisy_vacuum_coefficients(int dim, double xi, std::mt19937_64& rng);
/// The normalized noisy vacuum.
State sample_noisy_vacuum(int dim, double xi, std::mt19937_64& rng);

State ghz_state(int num_sites);

/// (|alpha> + |-alpha>)/sqrt(2) for real alpha, renormalized in D Fock states.
/// `tail_probability` receives the coherent-state weight beyond the cutoff.
State cat_state(double alpha, int dim, double* tail_probability = nullptr);

/// k-th eigenvector of the drift Hamiltonian in ascending eigenvalue order,
/// phase-fixed so its largest-magnitude coefficient is real and positive.
State drift_eigenstate(const System& system, int k);
/// Drift eigenvalues in ascending order.
Eigen::VectorXd drift_spectrum(const System& system);

/// <psi| a+a |psi> in the Fock basis.
double mean_photon_number(const State& s);

enum class TaskKind { Qubit, SpinChain, Parametron };

std::string to_string(TaskKind kind);
TaskKind parse_task_kind(const std::string& text);

/// Physical parameters, horizon and noise model of one control task.
struct TaskSpec {
  TaskKind kind = TaskKind::Qubit;
  double omega = 1.0;           // qubit frequency
  int num_sites = 3;            // spin chain M
  double coupling = 1.0;        // spin chain J
  double kerr = 1.0;            // parametron U
  double two_photon = -4.0;     // parametron G
  int fock_dim = 16;            // parametron D
  double xi = 0.4;              // parametron noise half-width
  double alpha = 2.0;           // cat-state amplitude
  double flip_probability = 0.1;
  FlipNoise flip_mode = FlipNoise::PerSite;
  bool two_quadratures = false;
  StepSpec steps;

  void validate() const;
};

/// A built task: system, target and initial-state sampler.
class Task {
 public:
  explicit Task(TaskSpec spec);

  const TaskSpec& spec() const { return spec_; }
  const System& system() const { return system_; }
  const State& target() const { return target_; }
  const StepSpec& steps() const { return spec_.steps; }
  Eigen::Index dim() const { return system_.dim(); }
  Eigen::Index num_controls() const { return system_.num_controls(); }

  State sample_initial(std::mt19937_64& rng) const;

 private:
  TaskSpec spec_;
  System system_;
  State target_;
};

}  // namespace qctrl
