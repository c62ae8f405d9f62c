#pragma once

// Binary agent checkpoint.
//
//   offset 0   8 bytes   magic "QCTRLCK1"
//   offset 8   8 bytes   header length H, unsigned little-endian
//   offset 16  H bytes   UTF-8 JSON header:
//                          {"format": 1,
//                           "architecture": "4x256,...|1x128,...|...,32x1",
//                           "config_hash": "<16 hex digits>",
//                           "seed": <unsigned>,
//                           "tensors": [{"name": "fs.0.weight", "shape": [rows, cols],
//                                        "offset": <bytes from start of data>}, ...]}
//   offset 16+H          tensor data, in header order, each tensor row-major
//                        IEEE-754 binary64 little-endian.

#include "qctrl/agent.hpp"

#include <cstdint>
#include <filesystem>
#include <string>

namespace qctrl {

struct CheckpointMeta {
  std::string config_hash;
  std::uint64_t seed = 0;
};

void save_checkpoint(const std::filesystem::path& path, const AgentParams& params, const CheckpointMeta& meta);

struct LoadedCheckpoint {
  AgentParams params;
  CheckpointMeta meta;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace qctrl
