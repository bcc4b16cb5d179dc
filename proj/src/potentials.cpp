#include "atlascrf/potentials.hpp"

#include <algorithm>
#include <cmath>

#include "atlascrf/error.hpp"
#include "atlascrf/parallel.hpp"
#include "atlascrf/simd.hpp"
#include "rows.hpp"

namespace atlascrf {
namespace {

using detail::negate;
using detail::RowSpan;
using detail::shifted_row;

void require_positive_theta(double theta, const char* what) {
  if (!(theta > 0.0) || !std::isfinite(theta)) {
    fail(ErrorCode::InvalidArgument, std::string(what) + ": bandwidth must be positive, got " + std::to_string(theta));
  }
}

}  // namespace

void Connectivity::validate() const {
  if (size < 1 || size % 2 == 0) {
    fail(ErrorCode::InvalidArgument, "connectivity size must be odd and positive, got " + std::to_string(size));
  }
  if (dilation < 1) {
    fail(ErrorCode::InvalidArgument, "dilation must be positive, got " + std::to_string(dilation));
  }
}

std::vector<Offset> connectivity_offsets(const Connectivity& conn, bool include_center) {
  conn.validate();
  const int r = conn.radius();
  std::vector<Offset> out;
  out.reserve(conn.offset_count());
  for (int z = -r; z <= r; ++z) {
    for (int y = -r; y <= r; ++y) {
      for (int x = -r; x <= r; ++x) {
        Offset o{z * conn.dilation, y * conn.dilation, x * conn.dilation};
        if (!include_center && o.is_center()) continue;
        out.push_back(o);
      }
    }
  }
  return out;
}

Compatibility::Compatibility(std::size_t classes, std::vector<double> values)
    : classes_(classes), values_(std::move(values)) {
  if (values_.size() != classes_ * classes_) {
    fail(ErrorCode::ShapeMismatch, "compatibility matrix needs K*K = " + std::to_string(classes_ * classes_) +
                                       " entries, got " + std::to_string(values_.size()));
  }
  require_finite(values_, "compatibility matrix");
}

Compatibility Compatibility::potts(std::size_t classes) {
  Compatibility mu = zeros(classes);
  for (std::size_t l = 0; l < classes; ++l) {
    for (std::size_t m = 0; m < classes; ++m) mu(l, m) = l == m ? 0.0 : 1.0;
  }
  return mu;
}

Compatibility Compatibility::identity(std::size_t classes) {
  Compatibility mu = zeros(classes);
  for (std::size_t l = 0; l < classes; ++l) mu(l, l) = 1.0;
  return mu;
}

Compatibility Compatibility::zeros(std::size_t classes) {
  return Compatibility(classes, std::vector<double>(classes * classes, 0.0));
}

KernelField::KernelField(Dims dims, std::vector<Offset> offsets)
    : dims_(dims), offsets_(std::move(offsets)), data_(offsets_.size() * dims.voxels(), 0.0) {}

double KernelField::weight(std::size_t voxel, int dz, int dy, int dx) const noexcept {
  const Offset want{dz, dy, dx};
  for (std::size_t o = 0; o < offsets_.size(); ++o) {
    if (offsets_[o] == want) return data_[o * voxels() + voxel];
  }
  return 0.0;
}

KernelField gaussian_kernel(const ScalarVolume& target, const ScalarVolume& reference, double theta,
                            const Connectivity& conn, bool include_center) {
  require_same_dims(target.dims(), reference.dims(), "gaussian_kernel target vs reference");
  require_positive_theta(theta, "gaussian_kernel");
  const Dims dims = target.dims();
  KernelField kernel(dims, connectivity_offsets(conn, include_center));
  const double inv = 1.0 / (2.0 * theta * theta);
  const auto t = target.data();
  const auto a = reference.data();
  const auto& offsets = kernel.offsets();
  parallel_for(dims.d * dims.h, [&](std::size_t row) {
    const std::size_t z = row / dims.h;
    const std::size_t y = row % dims.h;
    for (std::size_t o = 0; o < offsets.size(); ++o) {
      const RowSpan s = shifted_row(dims, z, y, offsets[o]);
      if (!s.valid) continue;
      double* out = kernel.plane(o).data() + s.dst;
      for (std::size_t x = 0; x < s.count; ++x) {
        const double diff = t[s.dst + x] - a[s.src + x];
        out[x] = std::exp(-diff * diff * inv);
      }
    }
  });
  return kernel;
}

KernelField prior_kernel(const ScalarVolume& target, const ScalarVolume& atlas_scan, const PriorWeights& w,
                         const Connectivity& conn) {
  require_same_dims(target.dims(), w.omega.dims(), "prior_kernel target vs omega_p");
  KernelField kernel = gaussian_kernel(target, atlas_scan, w.theta, conn, true);
  const auto omega = w.omega.data();
  const std::size_t n = kernel.voxels();
  parallel_for(kernel.offsets().size(), [&](std::size_t o) {
    double* plane = kernel.plane(o).data();
    for (std::size_t i = 0; i < n; ++i) plane[i] *= omega[i];
  });
  return kernel;
}

void filter_accumulate(const KernelField& kernel, const ProbVolume& values, ClassField& out) {
  require_same_dims(kernel.dims(), values.dims(), "filter kernel vs values");
  require_same_dims(values.dims(), out.dims(), "filter values vs output");
  if (values.classes() != out.classes()) fail(ErrorCode::ShapeMismatch, "filter: class count mismatch");
  const Dims dims = kernel.dims();
  const std::size_t k = values.classes();
  const auto& offsets = kernel.offsets();
  const auto& simd = simd::active();
  parallel_for(dims.d * dims.h, [&](std::size_t row) {
    const std::size_t z = row / dims.h;
    const std::size_t y = row % dims.h;
    for (std::size_t o = 0; o < offsets.size(); ++o) {
      const RowSpan s = shifted_row(dims, z, y, offsets[o]);
      if (!s.valid) continue;
      const double* weights = kernel.plane(o).data() + s.dst;
      for (std::size_t l = 0; l < k; ++l) {
        simd.mul_acc(s.count, weights, values.channel(l).data() + s.src, out.channel(l).data() + s.dst);
      }
    }
  });
}

void filter_transpose_accumulate(const KernelField& kernel, const ClassField& grad_out, ClassField& grad_values) {
  require_same_dims(kernel.dims(), grad_out.dims(), "filter transpose kernel vs gradient");
  require_same_dims(grad_out.dims(), grad_values.dims(), "filter transpose gradient vs output");
  if (grad_out.classes() != grad_values.classes()) fail(ErrorCode::ShapeMismatch, "filter transpose: class count mismatch");
  const Dims dims = kernel.dims();
  const std::size_t k = grad_out.classes();
  const auto& offsets = kernel.offsets();
  const auto& simd = simd::active();
  // Gather form: voxel j collects from every source i = j - o that sends to it.
  parallel_for(dims.d * dims.h, [&](std::size_t row) {
    const std::size_t z = row / dims.h;
    const std::size_t y = row % dims.h;
    for (std::size_t o = 0; o < offsets.size(); ++o) {
      const RowSpan s = shifted_row(dims, z, y, negate(offsets[o]));
      if (!s.valid) continue;
      const double* weights = kernel.plane(o).data() + s.src;
      for (std::size_t l = 0; l < k; ++l) {
        simd.mul_acc(s.count, weights, grad_out.channel(l).data() + s.src, grad_values.channel(l).data() + s.dst);
      }
    }
  });
}

void kernel_gradient_accumulate(const ClassField& grad_out, const ProbVolume& values, KernelField& grad_kernel) {
  require_same_dims(grad_kernel.dims(), values.dims(), "kernel gradient vs values");
  require_same_dims(grad_out.dims(), values.dims(), "kernel gradient upstream vs values");
  const Dims dims = grad_kernel.dims();
  const std::size_t k = values.classes();
  const auto& offsets = grad_kernel.offsets();
  const auto& simd = simd::active();
  parallel_for(dims.d * dims.h, [&](std::size_t row) {
    const std::size_t z = row / dims.h;
    const std::size_t y = row % dims.h;
    for (std::size_t o = 0; o < offsets.size(); ++o) {
      const RowSpan s = shifted_row(dims, z, y, offsets[o]);
      if (!s.valid) continue;
      double* gk = grad_kernel.plane(o).data() + s.dst;
      for (std::size_t l = 0; l < k; ++l) {
        simd.mul_acc(s.count, grad_out.channel(l).data() + s.dst, values.channel(l).data() + s.src, gk);
      }
    }
  });
}

double bandwidth_gradient(const KernelField& kernel, const KernelField& grad_kernel, const ScalarVolume& target,
                          const ScalarVolume& reference, double theta) {
  require_same_dims(kernel.dims(), grad_kernel.dims(), "bandwidth gradient");
  const Dims dims = kernel.dims();
  const auto& offsets = kernel.offsets();
  const auto t = target.data();
  const auto a = reference.data();
  const double inv_theta3 = 1.0 / (theta * theta * theta);
  // d/dtheta exp(-diff^2 / (2 theta^2)) = exp(...) * diff^2 / theta^3
  return parallel_sum(dims.d * dims.h, [&](std::size_t begin, std::size_t end) {
    double sum = 0.0;
    for (std::size_t row = begin; row < end; ++row) {
      const std::size_t z = row / dims.h;
      const std::size_t y = row % dims.h;
      for (std::size_t o = 0; o < offsets.size(); ++o) {
        const RowSpan s = shifted_row(dims, z, y, offsets[o]);
        if (!s.valid) continue;
        const double* kv = kernel.plane(o).data() + s.dst;
        const double* gv = grad_kernel.plane(o).data() + s.dst;
        for (std::size_t x = 0; x < s.count; ++x) {
          const double diff = t[s.dst + x] - a[s.src + x];
          sum += gv[x] * kv[x] * diff * diff;
        }
      }
    }
    return sum * inv_theta3;
  });
}

ClassField prior_message(const ProbVolume& atlas_labels, const KernelField& kernel) {
  require_same_dims(atlas_labels.dims(), kernel.dims(), "prior_message atlas labels vs kernel");
  ClassField out(atlas_labels.classes(), atlas_labels.dims());
  filter_accumulate(kernel, atlas_labels, out);
  return out;
}

KernelField smoothness_kernel(const ScalarVolume& target, const SmoothWeights& w, const Connectivity& conn) {
  return gaussian_kernel(target, target, w.theta, conn, false);
}

ClassField smoothness_message(const ProbVolume& q, const KernelField& kernel, const SmoothWeights& w) {
  require_same_dims(q.dims(), kernel.dims(), "smoothness_message q vs kernel");
  if (w.omega.size() != q.classes()) {
    fail(ErrorCode::ShapeMismatch, "smoothness_message: omega_s has " + std::to_string(w.omega.size()) +
                                       " entries for K=" + std::to_string(q.classes()));
  }
  ClassField out(q.classes(), q.dims());
  filter_accumulate(kernel, q, out);
  const auto& simd = simd::active();
  for (std::size_t l = 0; l < q.classes(); ++l) simd.scale(out.voxels(), w.omega[l], out.channel(l).data());
  return out;
}

ClassField compatibility_transform(const ClassField& message, const Compatibility& mu) {
  const std::size_t k = message.classes();
  if (mu.classes() != k) {
    fail(ErrorCode::ShapeMismatch, "compatibility_transform: mu is " + std::to_string(mu.classes()) +
                                       "x" + std::to_string(mu.classes()) + " for K=" + std::to_string(k));
  }
  ClassField out(k, message.dims());
  const std::size_t n = message.voxels();
  constexpr std::size_t kBlock = 4096;
  const std::size_t blocks = (n + kBlock - 1) / kBlock;
  const auto& simd = simd::active();
  parallel_for(blocks * k, [&](std::size_t job) {
    const std::size_t l = job / blocks;
    const std::size_t begin = (job % blocks) * kBlock;
    const std::size_t count = std::min(kBlock, n - begin);
    double* dst = out.channel(l).data() + begin;
    for (std::size_t m = 0; m < k; ++m) simd.axpy(count, mu(l, m), message.channel(m).data() + begin, dst);
  });
  return out;
}

}  // namespace atlascrf
