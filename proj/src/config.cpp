#include "qctrl/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

namespace qctrl {

std::string to_string(RunMode m) { return m == RunMode::DP ? "dp" : "reinforce"; }
std::string to_string(DtMode m) { return m == DtMode::Substep ? "substep" : "interval"; }

DtMode parse_dt_mode(const std::string& text) {
  if (text == "substep") return DtMode::Substep;
  if (text == "interval") return DtMode::Interval;
  throw ConfigError("dt mode must be 'substep' or 'interval', got '" + text + "'");
}

TaskSpec RunConfig::resolved_task() const {
  TaskSpec t = train.task;
  if (dt_mode == DtMode::Interval) t.steps.dt /= t.steps.n_sub;
  return t;
}

TrainConfig RunConfig::resolved_train() const {
  TrainConfig c = train;
  c.task = resolved_task();
  if (deterministic) c.threads = 1;
  return c;
}

ReinforceConfig RunConfig::reinforce() const { return {resolved_train(), variance}; }

void RunConfig::validate() const {
  const TrainConfig c = resolved_train();
  c.validate();
  const Task task(c.task);
  c.arch.validate_for(task.dim(), task.num_controls());
  if (!(variance > 0.0)) throw ConfigError("reinforce: variance must be positive");
  if (out.empty()) throw ConfigError("output directory must not be empty");
}

namespace {

const char* kQubitArch = "4x256,256x256,256x128|1x128,128x128|128x64,64x32,32x1";
const char* kCatArch = "32x512,512x256,256x256,256x64|1x128,128x64|64x64,64x32,32x1";
const char* kCatArchTwoQuadratures = "32x512,512x256,256x256,256x64|2x128,128x64|64x64,64x32,32x2";

RunConfig qubit_preset(const std::string& name, bool multi) {
  RunConfig r;
  r.preset = name;
  r.train.task.kind = TaskKind::Qubit;
  r.train.task.steps = {150, 20, 0.01};
  r.train.weights = multi ? LossWeights{0.57, 2.6e-3, 0.0, 3.9e-6, 1.0} : LossWeights{3.1e-4, 0.0, 0.0, 0.0, 1.0};
  r.train.lr = multi ? 3.3e-3 : 4.9e-4;
  r.train.batch = 256;
  r.train.epochs = 400;
  r.train.eval_size = 512;
  r.train.arch = Architecture::parse(kQubitArch);
  return r;
}

RunConfig ghz_preset(int m) {
  struct Column {
    int n_steps;
    double c_F, c_FN, c_amp_sq, lr;
    int batch, epochs;
    const char* arch;
  };
  static const std::map<int, Column> columns{
      {3, {30, 1.8e-4, 8.1e-6, 4.2e-5, 8.4e-4, 256, 2000, "16x512,512x32|6x16,16x32|32x32,32x6"}},
      {4, {40, 1.1e-4, 3.6e-7, 4.1e-6, 7.0e-4, 512, 2000, "32x256,256x256|8x64,64x256|256x256,256x8"}},
      {5,
       {50, 2.0e-4, 0.13, 1.7e-6, 6.0e-4, 256, 3000,
        "64x128,128x128,128x128|10x32,32x32,32x128|128x128,128x128,128x10"}},
      {6,
       {60, 3.0e-4, 0.15, 1.7e-6, 6.0e-4, 256, 4000,
        "128x256,256x256,256x256|12x64,64x64,64x256|256x256,256x256,256x12"}},
  };
  const Column& c = columns.at(m);
  RunConfig r;
  r.preset = "ghz-m" + std::to_string(m);
  r.train.task.kind = TaskKind::SpinChain;
  r.train.task.num_sites = m;
  r.train.task.coupling = 1.0;
  r.train.task.flip_probability = 0.1;
  r.train.task.steps = {c.n_steps, 20, 0.001};
  r.train.weights = {c.c_F, c.c_FN, 0.0, c.c_amp_sq, 1.0};
  r.train.lr = c.lr;
  r.train.batch = c.batch;
  r.train.epochs = c.epochs;
  r.train.eval_size = 256;
  r.train.arch = Architecture::parse(c.arch);
  return r;
}

RunConfig cat_preset() {
  RunConfig r;
  r.preset = "parametron-cat";
  r.train.task.kind = TaskKind::Parametron;
  r.train.task.kerr = 1.0;
  r.train.task.two_photon = -4.0;
  r.train.task.fock_dim = 16;
  r.train.task.xi = 0.4;
  r.train.task.alpha = 2.0;
  r.train.task.steps = {187, 200, 1e-4};
  r.train.weights = {0.8, 200.0, 0.01, 0.0, 0.999};
  r.train.lr = 4e-5;
  r.train.batch = 64;
  r.train.epochs = 3000;
  r.train.eval_size = 64;
  r.train.arch = Architecture::parse(kCatArch);
  return r;
}

// ---- parsing -------------------------------------------------------------

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& v, int line) {
  double x = 0.0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigParseError("key '" + key + "' expects a number, got '" + v + "'", line);
  }
  return x;
}

long long to_int(const std::string& key, const std::string& v, int line) {
  long long x = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigParseError("key '" + key + "' expects an integer, got '" + v + "'", line);
  }
  return x;
}

int to_int32(const std::string& key, const std::string& v, int line) {
  const long long x = to_int(key, v, line);
  if (x < -2147483647LL || x > 2147483647LL) throw ConfigParseError("key '" + key + "' out of range", line);
  return static_cast<int>(x);
}

bool to_bool(const std::string& key, const std::string& v, int line) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigParseError("key '" + key + "' expects true or false, got '" + v + "'", line);
}

using Setter = std::function<void(RunConfig&, const std::string& key, const std::string& value, int line)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table{
      {"run.mode",
       [](RunConfig& r, const std::string& k, const std::string& v, int l) {
         if (v == "dp") r.mode = RunMode::DP;
         else if (v == "reinforce") r.mode = RunMode::Reinforce;
         else throw ConfigParseError("key '" + k + "' must be dp or reinforce", l);
       }},
      {"run.seed",
       [](RunConfig& r, const std::string& k, const std::string& v, int l) {
         const long long s = to_int(k, v, l);
         if (s < 0) throw ConfigParseError("key '" + k + "' must be non-negative", l);
         r.train.seed = static_cast<std::uint64_t>(s);
       }},
      {"run.out", [](RunConfig& r, const std::string&, const std::string& v, int) { r.out = v; }},
      {"run.threads", [](RunConfig& r, const std::string& k, const std::string& v, int l) { r.train.threads = to_int32(k, v, l); }},
      {"run.deterministic", [](RunConfig& r, const std::string& k, const std::string& v, int l) { r.deterministic = to_bool(k, v, l); }},
      {"run.dt_mode",
       [](RunConfig& r, const std::string&, const std::string& v, int l) {
         try {
           r.dt_mode = parse_dt_mode(v);
         } catch (const ConfigError& e) {
           throw ConfigParseError(e.what(), l);
         }
       }},
      {"task.kind",
       [](RunConfig& r, const std::string&, const std::string& v, int l) {
         try {
           r.train.task.kind = parse_task_kind(v);
         } catch (const ConfigError& e) {
           throw ConfigParseError(e.what(), l);
         }
       }},
      {"task.steps", [](RunConfig& r, const std::string& k, const std::string& v, int l) { r.train.task.steps.n_steps = to_int32(k, v, l); }},
      {"task.substeps", [](RunConfig& r, const std::string& k, const std::string& v, int l) { r.train.task.steps.n_sub = to_int32(k, v, l); }},
      {"task.dt", [](RunConfig& r, const std::string& k, const std::string& v, int l) { r.train.task.steps.dt = to_double(k, v, l); }},
      {"task.omega", [](RunConfig& r, const std::string& k, const std::string& v, int l) { r.train.task.omega = to_double(k, v, l); }},
      {"task.num_sites", [](RunConfig& r, const std::string& k, const std::string& v, int l) { r.train.task.num_sites = to_int32(k, v, l); }},
      {"task.coupling", [](RunConfig& r, const std::string& k, const std::string& v, int l) { r.train.task.coupling = to_double(k, v, l); }},
      {"task.flip_probability", [](RunConfig& r, const std::string& k, const std::string& v, int l) { r.train.task.flip_probability = to_double(k, v, l); }},
      {"task.flip_mode",
       [](RunConfig& r, const std::string& k, const std::string& v, int l) {
         if (v == "per_site") r.train.task.flip_mode = FlipNoise::PerSite;
         else if (v == "single_site") r.train.task.flip_mode = FlipNoise::SingleSite;
         else throw ConfigParseError("key '" + k + "' must be per_site or single_site", l);
       }},
      {"task.kerr", [](RunConfig& r, const std::string& k, const std::string& v, int l) { r.train.task.kerr = to_double(k, v, l); }},
      {"task.two_photon", [](RunConfig& r, const std::string& k, const std::string& v, int l) { r.train.task.two_photon = to_double(k, v, l); }},
      {"task.fock_dim", [](RunConfig& r, const std::string& k, const std::string& v, int l) { r.train.task.fock_dim = to_int32(k, v, l); }},
      {"task.xi", [](RunConfig& r, const std::string& k, const std::string& v, int l) { r.train.task.xi = to_double(k, v, l); }},
      {"task.alpha", [](RunConfig& r, const std::string& k, const std::string& v, int l) { r.train.task.alpha = to_double(k, v, l); }},
      {"task.parametron_two_quadratures", [](RunConfig& r, const std::string& k, const std::string& v, int l) { r.train.task.two_quadratures = to_bool(k, v, l); }},
      {"loss.gamma", [](RunConfig& r, const std::string& k, const std::string& v, int l) { r.train.weights.gamma = to_double(k, v, l); }},
      {"loss.c_F", [](RunConfig& r, const std::string& k, const std::string& v, int l) { r.train.weights.c_F = to_double(k, v, l); }},
      {"loss.c_FN", [](RunConfig& r, const std::string& k, const std::string& v, int l) { r.train.weights.c_FN = to_double(k, v, l); }},
      {"loss.c_amp", [](RunConfig& r, const std::string& k, const std::string& v, int l) { r.train.weights.c_amp = to_double(k, v, l); }},
      {"loss.c_amp_sq", [](RunConfig& r, const std::string& k, const std::string& v, int l) { r.train.weights.c_amp_sq = to_double(k, v, l); }},
      {"train.batch", [](RunConfig& r, const std::string& k, const std::string& v, int l) { r.train.batch = to_int32(k, v, l); }},
      {"train.epochs", [](RunConfig& r, const std::string& k, const std::string& v, int l) { r.train.epochs = to_int32(k, v, l); }},
      {"train.lr", [](RunConfig& r, const std::string& k, const std::string& v, int l) { r.train.lr = to_double(k, v, l); }},
      {"train.eval_size", [](RunConfig& r, const std::string& k, const std::string& v, int l) { r.train.eval_size = to_int32(k, v, l); }},
      {"train.chunk", [](RunConfig& r, const std::string& k, const std::string& v, int l) { r.train.chunk = to_int32(k, v, l); }},
      {"train.clip_norm", [](RunConfig& r, const std::string& k, const std::string& v, int l) { r.train.clip_norm = to_double(k, v, l); }},
      {"train.architecture",
       [](RunConfig& r, const std::string&, const std::string& v, int l) {
         try {
           r.train.arch = Architecture::parse(v);
         } catch (const std::exception& e) {
           throw ConfigParseError(e.what(), l);
         }
       }},
      {"reinforce.variance", [](RunConfig& r, const std::string& k, const std::string& v, int l) { r.variance = to_double(k, v, l); }},
  };
  return table;
}

struct Entry {
  std::string value;
  int line;
};

}  // namespace

std::vector<std::string> preset_names() {
  return {"qubit-single-loss", "qubit-multi-loss", "ghz-m3", "ghz-m4", "ghz-m5", "ghz-m6", "parametron-cat"};
}

RunConfig preset_config(const std::string& name) {
  if (name == "qubit-single-loss") return qubit_preset(name, false);
  if (name == "qubit-multi-loss") return qubit_preset(name, true);
  if (name == "ghz-m3") return ghz_preset(3);
  if (name == "ghz-m4") return ghz_preset(4);
  if (name == "ghz-m5") return ghz_preset(5);
  if (name == "ghz-m6") return ghz_preset(6);
  if (name == "parametron-cat") return cat_preset();
  std::string known;
  for (const auto& n : preset_names()) known += (known.empty() ? "" : ", ") + n;
  throw ConfigError("unknown preset '" + name + "' (known: " + known + ")");
}

std::vector<std::string> required_keys() {
  return {"task.kind", "task.steps",   "task.substeps", "task.dt",     "loss.gamma",  "loss.c_F",
          "loss.c_FN", "loss.c_amp",   "loss.c_amp_sq", "train.batch", "train.epochs", "train.lr",
          "train.architecture"};
}

RunConfig parse_config_text(const std::string& text) {
  std::map<std::string, Entry> entries;
  std::istringstream in(text);
  std::string raw;
  std::string section;
  int line = 0;
  std::optional<Entry> preset;
  while (std::getline(in, raw)) {
    ++line;
    std::string s = raw;
    const auto hash = s.find_first_of("#;");
    if (hash != std::string::npos) s.erase(hash);
    s = trim(s);
    if (s.empty()) continue;
    if (s.front() == '[') {
      if (s.back() != ']') throw ConfigParseError("malformed section header '" + s + "'", line);
      section = trim(s.substr(1, s.size() - 2));
      static const std::set<std::string> sections{"run", "task", "loss", "train", "reinforce"};
      if (!sections.contains(section)) throw ConfigParseError("unknown section [" + section + "]", line);
      continue;
    }
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigParseError("expected 'key = value', got '" + s + "'", line);
    const std::string key = trim(s.substr(0, eq));
    const std::string value = trim(s.substr(eq + 1));
    if (key.empty()) throw ConfigParseError("missing key before '='", line);
    if (value.empty()) throw ConfigParseError("key '" + key + "' has no value", line);
    if (section.empty() && key == "preset") {
      if (preset) throw ConfigParseError("duplicate key 'preset'", line);
      preset = Entry{value, line};
      continue;
    }
    if (section.empty()) throw ConfigParseError("key '" + key + "' appears before any [section]", line);
    const std::string full = section + "." + key;
    if (!setters().contains(full)) throw ConfigParseError("unknown key '" + full + "'", line);
    if (entries.contains(full)) throw ConfigParseError("duplicate key '" + full + "'", line);
    entries.emplace(full, Entry{value, line});
  }

  RunConfig r;
  if (preset) {
    try {
      r = preset_config(preset->value);
    } catch (const ConfigError& e) {
      throw ConfigParseError(e.what(), preset->line);
    }
  } else {
    std::vector<std::string> missing;
    for (const auto& k : required_keys()) {
      if (!entries.contains(k)) missing.push_back(k);
    }
    if (!missing.empty()) {
      std::string list;
      for (const auto& k : missing) list += (list.empty() ? "" : ", ") + k;
      throw ConfigParseError("missing required keys: " + list);
    }
  }
  // Task kind first so later keys see the right defaults.
  if (const auto it = entries.find("task.kind"); it != entries.end()) {
    setters().at(it->first)(r, it->first, it->second.value, it->second.line);
  }
  for (const auto& [key, e] : entries) {
    if (key != "task.kind") setters().at(key)(r, key, e.value, e.line);
  }
  if (r.train.task.kind == TaskKind::Parametron && r.train.task.two_quadratures && !entries.contains("train.architecture") &&
      r.train.arch == Architecture::parse(kCatArch)) {
    r.train.arch = Architecture::parse(kCatArchTwoQuadratures);
  }
  return r;
}

RunConfig parse_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_config_text(ss.str());
}

std::string canonical_settings(const RunConfig& c) {
  const TaskSpec t = c.resolved_task();
  std::ostringstream os;
  os.precision(17);
  os << "mode=" << to_string(c.mode) << "\n"
     << "task.kind=" << to_string(t.kind) << "\n"
     << "task.steps=" << t.steps.n_steps << "\n"
     << "task.substeps=" << t.steps.n_sub << "\n"
     << "task.dt=" << t.steps.dt << "\n";
  switch (t.kind) {
    case TaskKind::Qubit:
      os << "task.omega=" << t.omega << "\n";
      break;
    case TaskKind::SpinChain:
      os << "task.num_sites=" << t.num_sites << "\n"
         << "task.coupling=" << t.coupling << "\n"
         << "task.flip_probability=" << t.flip_probability << "\n"
         << "task.flip_mode=" << (t.flip_mode == FlipNoise::PerSite ? "per_site" : "single_site") << "\n";
      break;
    case TaskKind::Parametron:
      os << "task.kerr=" << t.kerr << "\n"
         << "task.two_photon=" << t.two_photon << "\n"
         << "task.fock_dim=" << t.fock_dim << "\n"
         << "task.xi=" << t.xi << "\n"
         << "task.alpha=" << t.alpha << "\n"
         << "task.two_quadratures=" << t.two_quadratures << "\n";
      break;
  }
  const LossWeights& w = c.train.weights;
  os << "loss.gamma=" << w.gamma << "\nloss.c_F=" << w.c_F << "\nloss.c_FN=" << w.c_FN << "\nloss.c_amp=" << w.c_amp
     << "\nloss.c_amp_sq=" << w.c_amp_sq << "\n"
     << "train.batch=" << c.train.batch << "\ntrain.epochs=" << c.train.epochs << "\ntrain.lr=" << c.train.lr
     << "\ntrain.eval_size=" << c.train.eval_size << "\ntrain.chunk=" << c.train.chunk
     << "\ntrain.clip_norm=" << c.train.clip_norm << "\ntrain.architecture=" << c.train.arch.to_string() << "\n";
  if (c.mode == RunMode::Reinforce) os << "reinforce.variance=" << c.variance << "\n";
  return os.str();
}

std::string config_hash(const RunConfig& config) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const unsigned char ch : canonical_settings(config)) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace qctrl
