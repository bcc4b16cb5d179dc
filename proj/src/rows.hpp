#pragma once

#include <algorithm>
#include <cstddef>

#include "atlascrf/potentials.hpp"
#include "atlascrf/volume.hpp"

namespace atlascrf::detail {

/// Overlap of row (z, y) shifted by an offset with the volume: voxels
/// dst..dst+count of the row connect to src..src+count.
struct RowSpan {
  bool valid = false;
  std::size_t dst = 0;
  std::size_t src = 0;
  std::size_t count = 0;
};

inline RowSpan shifted_row(const Dims& dims, std::size_t z, std::size_t y, const Offset& o) {
  RowSpan span;
  const long sz = static_cast<long>(z) + o.dz;
  const long sy = static_cast<long>(y) + o.dy;
  if (sz < 0 || sy < 0 || sz >= static_cast<long>(dims.d) || sy >= static_cast<long>(dims.h)) return span;
  const long w = static_cast<long>(dims.w);
  const long x0 = std::max(0L, -static_cast<long>(o.dx));
  const long x1 = std::min(w, w - o.dx);
  if (x1 <= x0) return span;
  span.valid = true;
  span.dst = dims.index(z, y, static_cast<std::size_t>(x0));
  span.src = dims.index(static_cast<std::size_t>(sz), static_cast<std::size_t>(sy),
                        static_cast<std::size_t>(x0 + o.dx));
  span.count = static_cast<std::size_t>(x1 - x0);
  return span;
}

inline Offset negate(const Offset& o) { return Offset{-o.dz, -o.dy, -o.dx}; }

}  // namespace atlascrf::detail
