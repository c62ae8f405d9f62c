#include "qctrl/checkpoint.hpp"
#include "qctrl/cli.hpp"

#include <doctest.h>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

const char* kConfig = R"([run]
seed = 3
[task]
kind = qubit
steps = 10
substeps = 4
dt = 0.02
[loss]
gamma = 1.0
c_F = 0.5
c_FN = 0.1
c_amp = 0.0
c_amp_sq = 1e-5
[train]
batch = 8
epochs = 3
lr = 1e-3
eval_size = 5
architecture = 4x8|1x8|8x1
)";

fs::path work_dir() {
  static const fs::path dir = [] {
    const fs::path d = fs::temp_directory_path() / "qctrl_test_cli";
    fs::remove_all(d);
    fs::create_directories(d);
    std::ofstream(d / "run.ini") << kConfig;
    return d;
  }();
  return dir;
}

int run(const std::string& args) {
  const char* bin = std::getenv("QCTRL_BIN");
  REQUIRE_MESSAGE(bin != nullptr, "QCTRL_BIN must point at the qctrl executable");
  const std::string cmd = "cd '" + work_dir().string() + "' && '" + bin + "' " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::vector<std::vector<double>> read_csv(const fs::path& p, std::string* header = nullptr) {
  std::ifstream in(p);
  std::string line;
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (line[0] < '0' || line[0] > '9') {
      if (header != nullptr) *header = line;
      continue;
    }
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
    rows.push_back(row);
  }
  return rows;
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  return json::parse(in);
}

}  // namespace

TEST_CASE("train then eval reproduces the evaluation") {
  REQUIRE(run("train --config run.ini --out a") == qctrl::cli::kOk);
  const fs::path a = work_dir() / "a";
  CHECK(fs::exists(a / "checkpoint.bin"));
  std::string header;
  const auto history = read_csv(a / "history.csv", &header);
  CHECK(header == "epoch,loss_total,loss_F,loss_FN,loss_amp,loss_amp_sq,mean_final_infidelity");
  CHECK(history.size() == 3);
  const json s = read_json(a / "summary.json");
  CHECK(s["status"] == "ok");
  CHECK(s["epochs"] == 3);
  CHECK(s["config_hash"].get<std::string>().size() == 16);

  std::ifstream banner(a / "history.csv");
  std::string first;
  std::getline(banner, first);
  CHECK(first == "# config_hash=" + s["config_hash"].get<std::string>() + " seed=3");

  const auto ckpt = qctrl::load_checkpoint(a / "checkpoint.bin");
  CHECK(ckpt.meta.config_hash == s["config_hash"].get<std::string>());
  CHECK(ckpt.meta.seed == 3);

  REQUIRE(run("eval --config run.ini --out b --checkpoint a/checkpoint.bin") == qctrl::cli::kOk);
  const auto ea = read_csv(a / "eval.csv");
  const auto eb = read_csv(work_dir() / "b" / "eval.csv");
  REQUIRE(ea.size() == 10);
  REQUIRE(ea.size() == eb.size());
  double worst = 0.0;
  for (std::size_t i = 0; i < ea.size(); ++i) {
    REQUIRE(ea[i].size() == eb[i].size());
    for (std::size_t j = 0; j < ea[i].size(); ++j) worst = std::max(worst, std::abs(ea[i][j] - eb[i][j]));
  }
  CHECK(worst <= 1e-12);
  const json sb = read_json(work_dir() / "b" / "summary.json");
  CHECK(sb["eval"]["mean_final_fidelity"].get<double>() ==
        doctest::Approx(s["eval"]["mean_final_fidelity"].get<double>()).epsilon(1e-12));
}

TEST_CASE("runs are reproducible from the seed") {
  REQUIRE(run("train --config run.ini --out r1 --deterministic") == qctrl::cli::kOk);
  REQUIRE(run("train --config run.ini --out r2 --threads 2") == qctrl::cli::kOk);
  REQUIRE(run("train --config run.ini --out r3 --seed 4") == qctrl::cli::kOk);
  const auto h1 = read_csv(work_dir() / "r1" / "history.csv");
  const auto h2 = read_csv(work_dir() / "r2" / "history.csv");
  const auto h3 = read_csv(work_dir() / "r3" / "history.csv");
  CHECK(h1 == h2);
  CHECK(h1 != h3);
}

TEST_CASE("reinforce mode") {
  REQUIRE(run("train --config run.ini --out pg --mode reinforce") == qctrl::cli::kOk);
  std::string header;
  const auto h = read_csv(work_dir() / "pg" / "history.csv", &header);
  CHECK(header == "epoch,mean_reward,loss_F,loss_FN,loss_amp,loss_amp_sq,mean_final_infidelity");
  CHECK(h.size() == 3);
  CHECK(read_json(work_dir() / "pg" / "summary.json")["mode"] == "reinforce");
}

TEST_CASE("gradcheck and verify") {
  REQUIRE(run("gradcheck --config run.ini --out gc --coords 60") == qctrl::cli::kOk);
  const json g = read_json(work_dir() / "gc" / "summary.json");
  CHECK(g["coordinates"] == 60);
  CHECK(g["pass"] == true);
  CHECK(g["max_rel_error"].get<double>() < 1e-6);

  REQUIRE(run("verify --preset ghz-m3 --out v") == qctrl::cli::kOk);
  const json v = read_json(work_dir() / "v" / "summary.json");
  CHECK(v["checks"].size() == 4);
  for (const auto& c : v["checks"]) CHECK(c["pass"] == true);
}

TEST_CASE("usage and configuration errors") {
  CHECK(run("") == qctrl::cli::kUsageError);
  CHECK(run("bogus") == qctrl::cli::kUsageError);
  CHECK(run("train --preset nope --out x") == qctrl::cli::kUsageError);
  CHECK(run("train --out x") == qctrl::cli::kUsageError);
  CHECK(run("train --preset ghz-m3 --config run.ini --out x") == qctrl::cli::kUsageError);
  CHECK(run("train --config missing.ini --out x") == qctrl::cli::kUsageError);
  CHECK(run("train --config run.ini --threads 0 --out x") == qctrl::cli::kUsageError);
  CHECK(run("eval --config run.ini --out x --checkpoint nothing.bin") == qctrl::cli::kRuntimeError);
  CHECK(run("--help") == qctrl::cli::kOk);

  std::ofstream(work_dir() / "bad.ini") << "[train]\nbatch = 3\n";
  CHECK(run("train --config bad.ini --out bad") == qctrl::cli::kUsageError);
  const json s = read_json(work_dir() / "bad" / "summary.json");
  CHECK(s["status"] == "error");
  CHECK(s["error"].get<std::string>().find("missing required keys") != std::string::npos);
}
