#pragma once

#include <cstdint>
#include <random>

namespace qctrl {

/// splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Independent random stream keyed by (seed, a, b, c), e.g.
/// (seed, purpose, epoch, trajectory). The same key always yields the same
/// sequence regardless of thread scheduling.
inline std::mt19937_64 stream(std::uint64_t seed, std::uint64_t a = 0, std::uint64_t b = 0, std::uint64_t c = 0) {
  return std::mt19937_64(mix64(mix64(mix64(mix64(seed) ^ a) ^ b) ^ c));
}

/// Stream purposes, so training, evaluation and policy noise never share keys.
enum StreamTag : std::uint64_t {
  kInitStream = 1,
  kTrainStream = 2,
  kEvalStream = 3,
  kPolicyStream = 4,
};

}  // namespace qctrl
