#include "qctrl/cli.hpp"

#include "qctrl/checkpoint.hpp"
#include "qctrl/reference.hpp"
#include "qctrl/rng.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>

namespace qctrl::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string banner(const RunConfig& rc) {
  return "config_hash=" + config_hash(rc) + " seed=" + std::to_string(rc.train.seed);
}

json base_summary(const std::string& command, const RunConfig* rc) {
  json j;
  j["command"] = command;
  if (rc != nullptr) {
    j["config_hash"] = config_hash(*rc);
    j["seed"] = rc->train.seed;
    j["preset"] = rc->preset;
    j["mode"] = to_string(rc->mode);
    j["task"] = to_string(rc->train.task.kind);
  }
  return j;
}

void write_summary(const fs::path& dir, const json& j) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  std::ofstream f(dir / "summary.json");
  if (!f) {
    std::cerr << "error: cannot write " << (dir / "summary.json").string() << "\n";
    return;
  }
  f << j.dump(2) << "\n";
}

fs::path out_dir(const Options& opts) { return opts.out ? fs::path(*opts.out) : fs::path("out"); }

json eval_json(const EvalReport& r) {
  return {{"test_size", r.final_fidelities.size()},
          {"mean_final_fidelity", r.final_mean},
          {"std_final_fidelity", r.final_std},
          {"max_norm_drift", r.max_norm_drift}};
}

/// Runs `body`, converting exceptions into an exit status and an error summary.
int guarded(const std::string& command, const Options& opts, const std::function<int(json&)>& body) {
  json summary = base_summary(command, nullptr);
  int status = kOk;
  try {
    status = body(summary);
    summary["status"] = status == kOk ? "ok" : "failed";
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    summary["status"] = "error";
    summary["error"] = e.what();
    status = kUsageError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    summary["status"] = "error";
    summary["error"] = e.what();
    status = kRuntimeError;
  }
  fs::path dir = out_dir(opts);
  if (summary.contains("out")) dir = summary["out"].get<std::string>();
  write_summary(dir, summary);
  return status;
}

RunConfig prepared(const Options& opts, json& summary) {
  RunConfig rc = resolve_config(opts);
  rc.validate();
  summary.update(base_summary(summary["command"], &rc));
  summary["out"] = rc.out;
  fs::create_directories(rc.out);
  return rc;
}

}  // namespace

RunConfig resolve_config(const Options& opts) {
  if (!opts.config_path.empty() && !opts.preset.empty()) {
    throw ConfigError("give either --config or --preset, not both");
  }
  if (opts.config_path.empty() && opts.preset.empty()) throw ConfigError("one of --config or --preset is required");
  RunConfig rc = opts.config_path.empty() ? preset_config(opts.preset) : parse_config(opts.config_path);
  if (opts.seed) rc.train.seed = *opts.seed;
  if (opts.epochs) rc.train.epochs = *opts.epochs;
  if (opts.threads) rc.train.threads = *opts.threads;
  if (opts.dt_mode) rc.dt_mode = parse_dt_mode(*opts.dt_mode);
  if (opts.mode) {
    if (*opts.mode == "dp") rc.mode = RunMode::DP;
    else if (*opts.mode == "reinforce") rc.mode = RunMode::Reinforce;
    else throw ConfigError("--mode must be dp or reinforce");
  }
  if (rc.mode == RunMode::Reinforce && opts.config_path.empty()) {
    // Presets carry the DP optimizer settings; the baseline uses its own.
    const TrainConfig base = rc.train;
    rc.train = ReinforceConfig::defaults(base).train;
  }
  if (opts.out) rc.out = *opts.out;
  if (opts.deterministic) rc.deterministic = true;
  return rc;
}

int cmd_train(const Options& opts) {
  return guarded("train", opts, [&](json& summary) {
    const RunConfig rc = prepared(opts, summary);
    const TrainConfig tc = rc.resolved_train();
    const fs::path dir = rc.out;
    const auto start = std::chrono::steady_clock::now();
    const auto progress = [&](const EpochRecord& r) {
      if (opts.log_every > 0 && (r.epoch % opts.log_every == 0 || r.epoch == 1 || r.epoch == tc.epochs)) {
        std::cerr << "epoch " << r.epoch << "/" << tc.epochs << "  loss " << r.loss_total << "  1-F(t_N) "
                  << r.mean_final_infidelity << (r.aborted ? "  aborted " + std::to_string(r.aborted) : "") << "\n";
      }
    };
    const TrainResult res = rc.mode == RunMode::DP ? train(tc, progress) : train_reinforce(rc.reinforce(), progress);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    {
      std::ofstream f(dir / "history.csv");
      if (rc.mode == RunMode::DP) write_history_csv(f, res.history, banner(rc));
      else write_reinforce_history_csv(f, res.history, banner(rc));
    }
    save_checkpoint(dir / "checkpoint.bin", res.params, {config_hash(rc), rc.train.seed});

    const Task task(tc.task);
    const EvalReport report =
        evaluate(res.params, task.system(), make_test_set(task, tc.eval_size, tc.seed), tc.task.steps, task.target());
    {
      std::ofstream f(dir / "eval.csv");
      write_eval_csv(f, report, tc.task.steps, banner(rc));
    }
    summary["epochs"] = tc.epochs;
    summary["train_seconds"] = seconds;
    summary["final_loss"] = res.history.back().loss_total;
    summary["final_train_infidelity"] = res.history.back().mean_final_infidelity;
    int aborted = 0;
    int skipped = 0;
    for (const auto& r : res.history) {
      aborted += r.aborted;
      skipped += r.skipped ? 1 : 0;
    }
    summary["aborted_trajectories"] = aborted;
    summary["skipped_updates"] = skipped;
    summary["eval"] = eval_json(report);
    std::cout << "mean final fidelity " << report.final_mean << " +- " << report.final_std << " over "
              << report.final_fidelities.size() << " test states\n";
    return kOk;
  });
}

int cmd_eval(const Options& opts) {
  return guarded("eval", opts, [&](json& summary) {
    const RunConfig rc = prepared(opts, summary);
    const TrainConfig tc = rc.resolved_train();
    const fs::path ckpt = opts.checkpoint.empty() ? fs::path(rc.out) / "checkpoint.bin" : fs::path(opts.checkpoint);
    const LoadedCheckpoint loaded = load_checkpoint(ckpt);
    if (!(loaded.params.arch == tc.arch)) {
      throw ConfigError("checkpoint architecture " + loaded.params.arch.to_string() +
                        " does not match the configured " + tc.arch.to_string());
    }
    if (loaded.meta.config_hash != config_hash(rc)) {
      std::cerr << "warning: checkpoint config hash " << loaded.meta.config_hash << " differs from "
                << config_hash(rc) << "\n";
    }
    const Task task(tc.task);
    const EvalReport report = evaluate(loaded.params, task.system(), make_test_set(task, tc.eval_size, tc.seed),
                                       tc.task.steps, task.target());
    {
      std::ofstream f(fs::path(rc.out) / "eval.csv");
      write_eval_csv(f, report, tc.task.steps, banner(rc));
    }
    summary["checkpoint"] = ckpt.string();
    summary["checkpoint_config_hash"] = loaded.meta.config_hash;
    summary["eval"] = eval_json(report);
    std::cout << "mean final fidelity " << report.final_mean << " +- " << report.final_std << " over "
              << report.final_fidelities.size() << " test states\n";
    return kOk;
  });
}

int cmd_gradcheck(const Options& opts) {
  return guarded("gradcheck", opts, [&](json& summary) {
    RunConfig rc = prepared(opts, summary);
    rc.train.task.steps.n_steps = opts.gc_steps;
    if (rc.dt_mode == DtMode::Interval) {
      rc.train.task.steps.dt *= static_cast<double>(opts.gc_substeps) / rc.train.task.steps.n_sub;
    }
    rc.train.task.steps.n_sub = opts.gc_substeps;
    const TrainConfig tc = rc.resolved_train();
    const Task task(tc.task);
    const BatchGenerator gen(task.system());
    const Eigen::MatrixXd initial = stack_states(make_test_set(task, opts.gc_batch, tc.seed));
    const AgentParams params = initial_params(tc);

    const ad::Objective f = [&](ad::Tape& tape, std::span<const ad::Var> vars) {
      const TapedAgent agent(tape, params.arch, std::vector<ad::Var>(vars.begin(), vars.end()));
      const TapedRollout r = rollout_taped(tape, agent, gen, initial, tc.task.steps, task.target(), tc.weights);
      return ad::mean(r.loss.total);
    };
    const auto start = std::chrono::steady_clock::now();
    const ad::PreciseObjective reference = [&](std::span<const ad::PreciseMatrix> p) {
      return reference::batch_loss<long double>(params.arch, p, task.system(), initial, tc.task.steps, task.target(),
                                                tc.weights);
    };
    const ad::GradCheckReport rep =
        ad::grad_check(f, reference, params.tensors, opts.gc_eps, opts.gc_coords, tc.seed);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool pass = rep.max_rel_error < opts.gc_tolerance;
    const auto names = params.names();
    summary["steps"] = tc.task.steps.n_steps;
    summary["substeps"] = tc.task.steps.n_sub;
    summary["batch"] = opts.gc_batch;
    summary["eps"] = opts.gc_eps;
    summary["coordinates"] = rep.coordinates;
    summary["max_rel_error"] = rep.max_rel_error;
    summary["tolerance"] = opts.gc_tolerance;
    summary["worst"] = {{"tensor", names[rep.worst_tensor]},
                        {"index", rep.worst_index},
                        {"analytic", rep.worst_analytic},
                        {"numeric", rep.worst_numeric}};
    summary["seconds"] = seconds;
    summary["pass"] = pass;
    std::cout << "gradcheck: " << rep.coordinates << " coordinates, max relative error " << rep.max_rel_error
              << " (worst " << names[rep.worst_tensor] << "[" << rep.worst_index << "]) -> "
              << (pass ? "PASS" : "FAIL") << "\n";
    return pass ? kOk : kCheckFailed;
  });
}

namespace {

struct Check {
  std::string name;
  double value;
  double threshold;
  bool pass;
};

void system_checks(const std::string& label, const TaskSpec& spec, std::vector<Check>& checks) {
  const Task task(spec);
  const System& sys = task.system();
  bool herm = sys.drift().is_hermitian();
  double antisym = (sys.drift().generator() + sys.drift().generator().transpose()).cwiseAbs().maxCoeff();
  for (const auto& h : sys.controls()) {
    herm = herm && h.is_hermitian();
    antisym = std::max(antisym, (h.generator() + h.generator().transpose()).cwiseAbs().maxCoeff());
  }
  checks.push_back({label + ": operators Hermitian", herm ? 1.0 : 0.0, 1.0, herm});
  checks.push_back({label + ": generator antisymmetry |G+G^T|", antisym, 1e-12, antisym <= 1e-12});

  switch (spec.kind) {
    case TaskKind::Qubit: {
      const double f = fidelity(drift_eigenstate(sys, 0), State::basis(2, 1));
      checks.push_back({label + ": ground state is |down>", f, 1.0 - 1e-12, f >= 1.0 - 1e-12});
      break;
    }
    case TaskKind::SpinChain: {
      const Eigen::VectorXd e = drift_spectrum(sys);
      const double e0 = -(spec.num_sites - 1) * spec.coupling;
      const Eigen::MatrixXcd h = sys.drift().to_complex();
      const auto energy = [&h](const State& s) {
        const Eigen::VectorXcd v = s.to_complex();
        return v.dot(h * v).real();
      };
      const double gap = std::max({std::abs(e(0) - e0), std::abs(e(1) - e0),
                                   std::abs(energy(neel_state(spec.num_sites, 0)) - e0),
                                   std::abs(energy(neel_state(spec.num_sites, 1)) - e0)});
      const bool lifted = e.size() > 2 && e(2) - e0 > 1e-9;
      checks.push_back({label + ": Neel ground-state degeneracy", gap, 1e-9, gap <= 1e-9 && lifted});

      const BatchGenerator gen(sys);
      Eigen::MatrixXd s = ghz_state(spec.num_sites).stacked();
      const Eigen::MatrixXd u = Eigen::MatrixXd::Zero(sys.num_controls(), 1);
      double dev = 0.0;
      for (int i = 0; i < spec.steps.n_steps; ++i) {
        s = gen.evolve(s, u, spec.steps.n_sub, spec.steps.dt);
        dev = std::max(dev, std::abs(batch_fidelity(s, task.target())(0) - 1.0));
      }
      checks.push_back({label + ": GHZ drift invariance max |1-F|", dev, 1e-6, dev <= 1e-6});
      break;
    }
    case TaskKind::Parametron: {
      const double f = fidelity(drift_eigenstate(sys, 1), task.target());
      checks.push_back({label + ": eigen-cat overlap F(k=1, cat)", f, 0.99, f > 0.99});
      break;
    }
  }
}

}  // namespace

int cmd_verify(const Options& opts) {
  return guarded("verify", opts, [&](json& summary) {
    std::vector<Check> checks;
    if (opts.config_path.empty() && opts.preset.empty()) {
      summary["out"] = out_dir(opts).string();
      for (const auto& name : preset_names()) {
        Options o = opts;
        o.preset = name;
        system_checks(name, resolve_config(o).resolved_task(), checks);
      }
    } else {
      const RunConfig rc = prepared(opts, summary);
      system_checks(rc.preset.empty() ? to_string(rc.train.task.kind) : rc.preset, rc.resolved_task(), checks);
    }
    bool all = true;
    json list = json::array();
    for (const auto& c : checks) {
      all = all && c.pass;
      list.push_back({{"name", c.name}, {"value", c.value}, {"threshold", c.threshold}, {"pass", c.pass}});
      std::cout << (c.pass ? "PASS  " : "FAIL  ") << c.name << " = " << c.value << " (threshold " << c.threshold
                << ")\n";
    }
    summary["checks"] = list;
    summary["pass"] = all;
    return all ? kOk : kCheckFailed;
  });
}

int run(int argc, char** argv) {
  CLI::App app{"Quantum control by backpropagation through a differentiable Schroedinger simulator"};
  app.require_subcommand(1);
  Options opts;
  std::uint64_t seed = 0;
  int epochs = 0;
  int threads = 0;
  std::string dt_mode;
  std::string mode;
  std::string out;

  const auto common = [&](CLI::App* sub) {
    auto* source = sub->add_option_group("source");
    source->add_option("--config", opts.config_path, "Config file")->check(CLI::ExistingFile);
    source->add_option("--preset", opts.preset, "Built-in preset name");
    sub->add_option("--seed", seed, "Random seed");
    sub->add_option("--threads", threads, "Worker threads")->check(CLI::PositiveNumber);
    sub->add_flag("--deterministic", opts.deterministic, "Serial, bit-reproducible execution");
    sub->add_option("--dt-mode", dt_mode, "Interpretation of dt")->check(CLI::IsMember({"substep", "interval"}));
    sub->add_option("--out", out, "Output directory");
  };

  auto* train = app.add_subcommand("train", "Train an agent; writes history.csv, checkpoint.bin, eval.csv");
  common(train);
  train->add_option("--epochs", epochs, "Override the number of epochs")->check(CLI::PositiveNumber);
  train->add_option("--mode", mode, "dp or reinforce")->check(CLI::IsMember({"dp", "reinforce"}));
  train->add_option("--log-every", opts.log_every, "Progress interval in epochs (0 = silent)");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on the test set; writes eval.csv");
  common(eval);
  eval->add_option("--checkpoint", opts.checkpoint, "Checkpoint file (default OUT/checkpoint.bin)");
  eval->add_option("--mode", mode, "dp or reinforce")->check(CLI::IsMember({"dp", "reinforce"}));

  auto* gradcheck = app.add_subcommand("gradcheck", "Compare tape gradients with finite differences");
  common(gradcheck);
  gradcheck->add_option("--steps", opts.gc_steps, "Control steps N")->check(CLI::PositiveNumber);
  gradcheck->add_option("--substeps", opts.gc_substeps, "Substeps per interval")->check(CLI::PositiveNumber);
  gradcheck->add_option("--batch", opts.gc_batch, "Initial states")->check(CLI::PositiveNumber);
  gradcheck->add_option("--coords", opts.gc_coords, "Coordinates checked (0 = all, at least 50)");
  gradcheck->add_option("--eps", opts.gc_eps, "Finite-difference step")->check(CLI::Range(1e-7, 1e-3));
  gradcheck->add_option("--tolerance", opts.gc_tolerance, "Maximum relative error");

  auto* verify = app.add_subcommand("verify", "Check physical claims about the built systems");
  common(verify);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kUsageError;
  }
  const auto given = [](CLI::App* sub, const char* name) { return sub->count(name) > 0; };
  CLI::App* sub = app.get_subcommands().front();
  if (given(sub, "--seed")) opts.seed = seed;
  if (sub == train && given(sub, "--epochs")) opts.epochs = epochs;
  if (given(sub, "--threads")) opts.threads = threads;
  if (given(sub, "--dt-mode")) opts.dt_mode = dt_mode;
  if ((sub == train || sub == eval) && given(sub, "--mode")) opts.mode = mode;
  if (given(sub, "--out")) opts.out = out;

  if (sub == train) return cmd_train(opts);
  if (sub == eval) return cmd_eval(opts);
  if (sub == gradcheck) return cmd_gradcheck(opts);
  return cmd_verify(opts);
}

int run(const std::vector<std::string>& args) {
  std::vector<std::string> copy = args;
  std::vector<char*> argv;
  for (auto& a : copy) argv.push_back(a.data());
  argv.push_back(nullptr);
  return run(static_cast<int>(copy.size()), argv.data());
}

}  // namespace qctrl::cli
