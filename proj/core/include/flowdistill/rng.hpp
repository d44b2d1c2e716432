#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include "flowdistill/nn.hpp"

namespace flowdistill {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Child seed for a named stage: mix64(root ^ fnv1a(stage)).
constexpr std::uint64_t derive_seed(std::uint64_t root, std::string_view stage) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const char c : stage) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return mix64(root ^ h);
}

/// Child seed for the i-th unit of a counter-split stream.
constexpr std::uint64_t derive_seed(std::uint64_t root, std::uint64_t index) noexcept {
  return mix64(mix64(root) + index);
}

/// d x count matrix of independent standard normal draws, filled column by column.
Matrix standard_normal(Eigen::Index d, Eigen::Index count, Rng& rng);

}  // namespace flowdistill
