#pragma once

// Command-line front end: train, eval, gradcheck and verify subcommands.

#include "qctrl/config.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace qctrl::cli {

/// Exit statuses.
inline constexpr int kOk = 0;
inline constexpr int kCheckFailed = 1;
inline constexpr int kUsageError = 2;
inline constexpr int kRuntimeError = 3;

struct Options {
  std::string config_path;
  std::string preset;
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs;
  std::optional<int> threads;
  std::optional<std::string> dt_mode;
  std::optional<std::string> mode;
  std::optional<std::string> out;
  bool deterministic = false;
  std::string checkpoint;
  int log_every = 10;

  // gradcheck
  int gc_steps = 10;
  int gc_substeps = 5;
  int gc_batch = 4;
  std::size_t gc_coords = 500;
  double gc_eps = 1e-5;
  double gc_tolerance = 1e-5;
};

/// Config file or preset, with command-line overrides applied.
RunConfig resolve_config(const Options& opts);

int cmd_train(const Options& opts);
int cmd_eval(const Options& opts);
int cmd_gradcheck(const Options& opts);
int cmd_verify(const Options& opts);

/// Parses argv and dispatches to a subcommand.
int run(int argc, char** argv);
int run(const std::vector<std::string>& args);

}  // namespace qctrl::cli
