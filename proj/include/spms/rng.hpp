#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace spms {

using Rng = std::mt19937_64;

// splitmix64 finalizer; good avalanche for turning structured ids into seeds.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Derives a substream seed from a master seed and a key path, e.g.
// derive_seed(master, {STREAM_ESTIMATE, replicate, node, model, epoch}).
// Substreams with distinct key paths are independent for practical purposes.
inline std::uint64_t derive_seed(std::uint64_t master,
                                 std::initializer_list<std::uint64_t> keys) {
  std::uint64_t h = mix64(master);
  for (std::uint64_t k : keys) h = mix64(h ^ mix64(k));
  return h;
}

inline Rng make_rng(std::uint64_t master,
                    std::initializer_list<std::uint64_t> keys) {
  return Rng(derive_seed(master, keys));
}

// Stream tags used across the library so that independent consumers of the
// master seed can never collide.
namespace stream {
inline constexpr std::uint64_t simulate = 0x51;
inline constexpr std::uint64_t init_field = 0x52;
inline constexpr std::uint64_t chain = 0x53;
inline constexpr std::uint64_t estimate = 0x54;
inline constexpr std::uint64_t matrix = 0x55;
inline constexpr std::uint64_t replicate = 0x56;
}  // namespace stream

}  // namespace spms
