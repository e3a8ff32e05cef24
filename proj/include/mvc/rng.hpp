#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace mvc {

using Engine = std::mt19937_64;

// Seed of the named sub-stream `stream` (e.g. "data", "bank", "augment",
// "init") of a root seed, optionally further split by an index such as the
// epoch number. Distinct names give statistically independent streams.
std::uint64_t derive_seed(std::uint64_t root, std::string_view stream, std::uint64_t index = 0);

inline Engine make_engine(std::uint64_t root, std::string_view stream, std::uint64_t index = 0) {
  return Engine(derive_seed(root, stream, index));
}

}  // namespace mvc
