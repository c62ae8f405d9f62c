#pragma once

// Run configuration: a strict `[section]` / `key = value` text format and the
// built-in task presets.

#include "qctrl/reinforce.hpp"
#include "qctrl/trainer.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace qctrl {

/// A config error tied to a source line (0 when not line-specific).
class ConfigParseError : public ConfigError {
 public:
  ConfigParseError(const std::string& what, int line = 0)
      : ConfigError(line > 0 ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

enum class RunMode { DP, Reinforce };
/// How `dt` is read: the substep size (default) or the control interval,
/// in which case the substep is dt / N_sub.
enum class DtMode { Substep, Interval };

std::string to_string(RunMode m);
std::string to_string(DtMode m);
DtMode parse_dt_mode(const std::string& text);

struct RunConfig {
  TrainConfig train;
  RunMode mode = RunMode::DP;
  DtMode dt_mode = DtMode::Substep;
  bool deterministic = false;
  double variance = 0.04;
  std::string out = "out";
  std::string preset;

  /// Task spec with `dt` resolved to the substep size.
  TaskSpec resolved_task() const;
  /// `train` with the resolved task.
  TrainConfig resolved_train() const;
  ReinforceConfig reinforce() const;
  void validate() const;
};

/// Names of the built-in presets.
std::vector<std::string> preset_names();
/// Throws ConfigError for an unknown name.
RunConfig preset_config(const std::string& name);

/// Keys that must appear when no preset is named.
std::vector<std::string> required_keys();

RunConfig parse_config_text(const std::string& text);
RunConfig parse_config(const std::string& path);

/// Canonical text of every setting that affects results (seed, output
/// directory, thread count and determinism flag excluded).
std::string canonical_settings(const RunConfig& config);
/// FNV-1a 64 of canonical_settings, as 16 hex digits.
std::string config_hash(const RunConfig& config);

}  // namespace qctrl
