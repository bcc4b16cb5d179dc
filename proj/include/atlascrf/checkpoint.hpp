#pragma once

#include <cstdint>
#include <filesystem>
#include <span>

#include "atlascrf/adam.hpp"

namespace atlascrf {

/// A checkpoint is a directory: manifest.json plus one VOL1 file per
/// parameter block and per Adam moment. Blocks are stored as f32.
struct Checkpoint {
  Model model;
  AdamState optimizer;
  TrainStage stage = TrainStage::UnaryOnly;
  int epoch = 0;
  std::uint64_t seed = 0;
};

std::uint64_t fnv1a64(std::span<const std::byte> bytes) noexcept;

void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& checkpoint);

/// Throws Io for a missing manifest and Integrity for malformed manifests,
/// hash mismatches, or block shapes that disagree with the manifest.
Checkpoint load_checkpoint(const std::filesystem::path& dir);

}  // namespace atlascrf
