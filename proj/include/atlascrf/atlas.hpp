#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "atlascrf/volume.hpp"

namespace atlascrf {

struct AtlasBuildInput {
  std::vector<ScalarVolume> scans;
  std::vector<LabelMap> labels;
  std::size_t classes = 0;

  void validate() const;
};

/// Voxelwise mean scan and mean one-hot label map.
AtlasPair build_atlas(const AtlasBuildInput& input);

using Shift = std::array<int, 3>;  // (dz, dy, dx)

/// Pearson correlation of `a` shifted by `shift` against `b` over their
/// overlap; 0 when either side is constant on the overlap.
double shifted_ncc(const ScalarVolume& a, const ScalarVolume& b, const Shift& shift);

/// Integer shift in [-max_shift, max_shift]^3 maximizing NCC between the
/// shifted atlas scan and the target; ties go to the lexicographically
/// smallest shift.
Shift best_translation(const ScalarVolume& atlas_scan, const ScalarVolume& target, int max_shift);

/// out(p) = in(p - shift); scan padded with 0, labels with 1/K.
AtlasPair shift_atlas(const AtlasPair& atlas, const Shift& shift);

struct AlignResult {
  AtlasPair atlas;
  Shift shift{0, 0, 0};
  double ncc = 0.0;
};

AlignResult align_translation(const AtlasPair& atlas, const ScalarVolume& target, int max_shift);

/// Zero mean and unit variance; constant volumes map to all zeros.
ScalarVolume intensity_standardize(const ScalarVolume& v);

/// Writes <stem>_scan.vol1, <stem>_labels.vol1 and <stem>.json.
void save_atlas(const std::filesystem::path& stem, const AtlasPair& atlas, const std::string& provenance,
                const Shift& shift = {0, 0, 0});

/// Reads the pair named by the sidecar `<stem>.json` (or the stem itself).
AtlasPair load_atlas(const std::filesystem::path& stem);

}  // namespace atlascrf
