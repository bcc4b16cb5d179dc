#include "atlascrf/perturb.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "atlascrf/error.hpp"

namespace atlascrf {

void LesionSpec::validate() const {
  if (count < 0) fail(ErrorCode::InvalidArgument, "lesion count must be >= 0");
  if (radius_min < 1 || radius_max < radius_min) {
    fail(ErrorCode::InvalidArgument, "lesion radii need 1 <= radius_min <= radius_max");
  }
  if (!(noise_low >= 0.0 && noise_low <= noise_high && noise_high <= 1.0)) {
    fail(ErrorCode::InvalidArgument, "noise range needs 0 <= low <= high <= 1");
  }
}

constexpr int kCenterAttempts = 10000;

std::vector<Ellipsoid> sample_lesions(const Dims& dims, const LesionSpec& spec, const LabelMap* region) {
  spec.validate();
  if (region && region->dims() != dims) fail(ErrorCode::ShapeMismatch, "lesion region dims differ from the volume");
  std::vector<Ellipsoid> out;
  if (spec.count == 0) return out;
  const std::array<std::size_t, 3> extent{dims.d, dims.h, dims.w};
  for (std::size_t a = 0; a < 3; ++a) {
    if (2 * static_cast<std::size_t>(spec.radius_min) + 1 > extent[a]) {
      fail(ErrorCode::InvalidArgument, "lesion radius " + std::to_string(spec.radius_min) + " does not fit in " +
                                           dims.str());
    }
  }
  std::mt19937_64 rng(spec.seed);
  for (int b = 0; b < spec.count; ++b) {
    Ellipsoid e;
    for (std::size_t a = 0; a < 3; ++a) {
      const int fit = static_cast<int>((extent[a] - 1) / 2);
      const int hi = std::min(spec.radius_max, fit);
      e.radii[a] = std::uniform_int_distribution<int>(spec.radius_min, hi)(rng);
    }
    bool placed = false;
    for (int attempt = 0; attempt < kCenterAttempts && !placed; ++attempt) {
      for (std::size_t a = 0; a < 3; ++a) {
        const int r = e.radii[a];
        e.center[a] = std::uniform_int_distribution<int>(r, static_cast<int>(extent[a]) - 1 - r)(rng);
      }
      placed = !region || region->at(static_cast<std::size_t>(e.center[0]), static_cast<std::size_t>(e.center[1]),
                                     static_cast<std::size_t>(e.center[2])) != 0;
    }
    if (!placed) fail(ErrorCode::InvalidArgument, "no lesion center found inside the region");
    out.push_back(e);
  }
  return out;
}

bool inside(const Ellipsoid& e, long z, long y, long x) noexcept {
  const double dz = static_cast<double>(z - e.center[0]) / e.radii[0];
  const double dy = static_cast<double>(y - e.center[1]) / e.radii[1];
  const double dx = static_cast<double>(x - e.center[2]) / e.radii[2];
  return dz * dz + dy * dy + dx * dx <= 1.0;
}

LabelMap gen_lesion_mask(const Dims& dims, const LesionSpec& spec, const LabelMap* region) {
  LabelMap mask(dims, 0);
  for (const Ellipsoid& e : sample_lesions(dims, spec, region)) {
    for (long z = e.center[0] - e.radii[0]; z <= e.center[0] + e.radii[0]; ++z)
      for (long y = e.center[1] - e.radii[1]; y <= e.center[1] + e.radii[1]; ++y)
        for (long x = e.center[2] - e.radii[2]; x <= e.center[2] + e.radii[2]; ++x)
          if (inside(e, z, y, x)) {
            mask.at(static_cast<std::size_t>(z), static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = 1;
          }
  }
  return mask;
}

ScalarVolume apply_pathology(const ScalarVolume& scan, const LabelMap& mask, const LesionSpec& spec,
                             std::uint64_t seed) {
  spec.validate();
  require_same_dims(scan.dims(), mask.dims(), "pathology scan vs mask");
  ScalarVolume out = scan;
  if (scan.size() == 0) return out;
  const auto [lo_it, hi_it] = std::minmax_element(scan.data().begin(), scan.data().end());
  const double lo = *lo_it;
  const double hi = *hi_it;
  const Dims d = scan.dims();

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> fraction(spec.noise_low, spec.noise_high);
  std::vector<char> seen(scan.size(), 0);
  std::vector<std::size_t> stack;
  for (std::size_t start = 0; start < scan.size(); ++start) {
    if (!mask[start] || seen[start]) continue;
    const double m = (spec.noise_low == spec.noise_high ? spec.noise_low : fraction(rng)) * std::abs(hi);
    stack.assign(1, start);
    seen[start] = 1;
    while (!stack.empty()) {
      const std::size_t i = stack.back();
      stack.pop_back();
      if (m > 0.0) {
        const double v = scan[i] + std::uniform_real_distribution<double>(-m, m)(rng);
        out[i] = std::clamp(v, lo, hi);
      }
      const std::size_t x = i % d.w;
      const std::size_t y = (i / d.w) % d.h;
      const std::size_t z = i / (d.w * d.h);
      const long nb[6][3] = {{-1, 0, 0}, {1, 0, 0}, {0, -1, 0}, {0, 1, 0}, {0, 0, -1}, {0, 0, 1}};
      for (const auto& o : nb) {
        const long nz = static_cast<long>(z) + o[0];
        const long ny = static_cast<long>(y) + o[1];
        const long nx = static_cast<long>(x) + o[2];
        if (!d.contains(nz, ny, nx)) continue;
        const std::size_t j =
            d.index(static_cast<std::size_t>(nz), static_cast<std::size_t>(ny), static_cast<std::size_t>(nx));
        if (mask[j] && !seen[j]) {
          seen[j] = 1;
          stack.push_back(j);
        }
      }
    }
  }
  return out;
}

}  // namespace atlascrf
