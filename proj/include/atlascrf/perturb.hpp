#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "atlascrf/volume.hpp"

namespace atlascrf {

struct LesionSpec {
  std::uint64_t seed = 0;
  int count = 1;
  int radius_min = 3;  // per-axis semi-axis range, voxels
  int radius_max = 6;
  double noise_low = 0.20;  // fraction of the scan's maximum intensity
  double noise_high = 0.50;

  void validate() const;
};

struct Ellipsoid {
  std::array<int, 3> center{};  // (z, y, x)
  std::array<int, 3> radii{};
};

/// The ellipsoids gen_lesion_mask draws for (dims, spec), in draw order.
/// Every ellipsoid lies fully inside the volume. With a region, centers are
/// redrawn until they land on a nonzero region voxel.
std::vector<Ellipsoid> sample_lesions(const Dims& dims, const LesionSpec& spec, const LabelMap* region = nullptr);

/// Lattice points with sum((p - c)^2 / r^2) <= 1.
bool inside(const Ellipsoid& e, long z, long y, long x) noexcept;

/// Binary mask (0/1): union of spec.count random ellipsoids.
LabelMap gen_lesion_mask(const Dims& dims, const LesionSpec& spec, const LabelMap* region = nullptr);

/// Inside the mask, adds uniform(-m, m) per voxel, with one magnitude
/// m ~ uniform(noise_low, noise_high) * max(scan) drawn per connected blob
/// (6-connectivity, ordered by first voxel). The result is clamped to the
/// scan's original [min, max]; voxels outside the mask are untouched.
ScalarVolume apply_pathology(const ScalarVolume& scan, const LabelMap& mask, const LesionSpec& spec,
                             std::uint64_t seed);

}  // namespace atlascrf
