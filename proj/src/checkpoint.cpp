#include "qctrl/checkpoint.hpp"

#include <json.hpp>

#include <bit>
#include <cstring>
#include <fstream>

namespace qctrl {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'Q', 'C', 'T', 'R', 'L', 'C', 'K', '1'};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const AgentParams& params, const CheckpointMeta& meta) {
  nlohmann::json header;
  header["format"] = 1;
  header["architecture"] = params.arch.to_string();
  header["config_hash"] = meta.config_hash;
  header["seed"] = meta.seed;
  header["tensors"] = nlohmann::json::array();
  const auto names = params.names();
  std::uint64_t offset = 0;
  for (std::size_t i = 0; i < params.tensors.size(); ++i) {
    const auto& t = params.tensors[i];
    header["tensors"].push_back({{"name", names[i]}, {"shape", {t.rows(), t.cols()}}, {"offset", offset}});
    offset += static_cast<std::uint64_t>(t.size()) * sizeof(double);
  }
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  out.write(kMagic, sizeof kMagic);
  const std::uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& t : params.tensors) {
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = t;
    out.write(reinterpret_cast<const char*>(rm.data()), static_cast<std::streamsize>(rm.size() * sizeof(double)));
  }
  if (!out) throw std::runtime_error("failed writing checkpoint " + path.string());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0) {
    throw std::runtime_error(path.string() + " is not a checkpoint (bad magic)");
  }
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw std::runtime_error("truncated checkpoint header in " + path.string());
  const auto header = nlohmann::json::parse(text);
  if (header.at("format").get<int>() != 1) throw std::runtime_error("unsupported checkpoint format");

  LoadedCheckpoint ck;
  ck.meta.config_hash = header.at("config_hash").get<std::string>();
  ck.meta.seed = header.at("seed").get<std::uint64_t>();
  ck.params = zero_params(Architecture::parse(header.at("architecture").get<std::string>()));
  const auto& tensors = header.at("tensors");
  if (tensors.size() != ck.params.tensors.size()) {
    throw std::runtime_error("checkpoint tensor count does not match its architecture");
  }
  const auto names = ck.params.names();
  const std::streamoff data_start = in.tellg();
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const auto& desc = tensors[i];
    auto& t = ck.params.tensors[i];
    const auto shape = desc.at("shape").get<std::vector<Eigen::Index>>();
    if (desc.at("name").get<std::string>() != names[i] || shape.size() != 2 || shape[0] != t.rows() ||
        shape[1] != t.cols()) {
      throw std::runtime_error("checkpoint tensor " + std::to_string(i) + " does not match the architecture");
    }
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm(t.rows(), t.cols());
    in.seekg(data_start + static_cast<std::streamoff>(desc.at("offset").get<std::uint64_t>()));
    in.read(reinterpret_cast<char*>(rm.data()), static_cast<std::streamsize>(rm.size() * sizeof(double)));
    if (!in) throw std::runtime_error("truncated checkpoint data in " + path.string());
    t = rm;
  }
  return ck;
}

}  // namespace qctrl
