#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace fsre {

using Rng = std::mt19937_64;

// Independent generator derived from a root seed and a stream name, so that
// e.g. the "init" stream is unaffected by how many episodes "train" draws.
inline Rng substream(std::uint64_t root_seed, std::string_view name) {
  std::uint64_t h = 1469598103934665603ULL;  // FNV-1a
  for (unsigned char c : name) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  std::seed_seq seq{static_cast<std::uint32_t>(root_seed), static_cast<std::uint32_t>(root_seed >> 32),
                    static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
  return Rng(seq);
}

}  // namespace fsre
