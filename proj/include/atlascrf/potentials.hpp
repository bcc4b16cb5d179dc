#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "atlascrf/volume.hpp"

namespace atlascrf {

/// Per-class real field (messages, pairwise energies). Same layout as a
/// ProbVolume but never flagged normalized.
using ClassField = ProbVolume;

/// Local connection pattern: size^3 offsets per voxel, spaced `dilation`
/// voxels apart. Effective field per axis is dilation * (size - 1) + 1.
struct Connectivity {
  int size = 5;
  int dilation = 1;

  int radius() const noexcept { return (size - 1) / 2; }
  int effective_field() const noexcept { return dilation * (size - 1) + 1; }
  std::size_t offset_count() const noexcept {
    return static_cast<std::size_t>(size) * static_cast<std::size_t>(size) * static_cast<std::size_t>(size);
  }
  void validate() const;

  friend bool operator==(const Connectivity&, const Connectivity&) = default;
};

/// Spatial offset in voxels, dilation already applied.
struct Offset {
  int dz = 0;
  int dy = 0;
  int dx = 0;

  bool is_center() const noexcept { return dz == 0 && dy == 0 && dx == 0; }
  friend bool operator==(const Offset&, const Offset&) = default;
};

/// Offsets in lexicographic (dz, dy, dx) order.
std::vector<Offset> connectivity_offsets(const Connectivity& conn, bool include_center);

/// K x K label compatibility, row-major: mu(l, l') penalizes assigning l at
/// a voxel whose connection supports l'.
class Compatibility {
 public:
  Compatibility() = default;
  Compatibility(std::size_t classes, std::vector<double> values);

  static Compatibility potts(std::size_t classes);
  static Compatibility identity(std::size_t classes);
  static Compatibility zeros(std::size_t classes);

  std::size_t classes() const noexcept { return classes_; }
  double operator()(std::size_t l, std::size_t m) const noexcept { return values_[l * classes_ + m]; }
  double& operator()(std::size_t l, std::size_t m) noexcept { return values_[l * classes_ + m]; }
  std::span<const double> values() const noexcept { return values_; }
  std::span<double> values() noexcept { return values_; }

  friend bool operator==(const Compatibility&, const Compatibility&) = default;

 private:
  std::size_t classes_ = 0;
  std::vector<double> values_;
};

struct PriorWeights {
  ScalarVolume omega;  // one weight per target voxel
  double theta = 1.0;
};

struct SmoothWeights {
  std::vector<double> omega;  // one weight per class
  double theta = 1.0;
};

/// Per-voxel weights for a fixed offset list, stored offset-major: the plane
/// for offset o holds the weight of the connection i -> i + offsets[o] for
/// every voxel i. Connections leaving the volume have weight 0.
class KernelField {
 public:
  KernelField() = default;
  KernelField(Dims dims, std::vector<Offset> offsets);

  const Dims& dims() const noexcept { return dims_; }
  const std::vector<Offset>& offsets() const noexcept { return offsets_; }
  std::size_t voxels() const noexcept { return dims_.voxels(); }

  std::span<const double> plane(std::size_t o) const noexcept {
    return std::span<const double>(data_).subspan(o * voxels(), voxels());
  }
  std::span<double> plane(std::size_t o) noexcept {
    return std::span<double>(data_).subspan(o * voxels(), voxels());
  }
  std::span<const double> data() const noexcept { return data_; }
  std::span<double> data() noexcept { return data_; }

  /// Weight of the connection voxel -> voxel + (dz, dy, dx); 0 when that
  /// offset is not part of the field.
  double weight(std::size_t voxel, int dz, int dy, int dx) const noexcept;

 private:
  Dims dims_{};
  std::vector<Offset> offsets_;
  std::vector<double> data_;
};

/// exp(-(target_i - reference_{i+o})^2 / (2 theta^2)) for every offset o.
KernelField gaussian_kernel(const ScalarVolume& target, const ScalarVolume& reference, double theta,
                            const Connectivity& conn, bool include_center);

/// Dilated prior kernel: omega_p[i] * exp(-(T_i - A_{i+r d})^2 / (2 theta_p^2)).
KernelField prior_kernel(const ScalarVolume& target, const ScalarVolume& atlas_scan, const PriorWeights& w,
                         const Connectivity& conn);

/// M_p[l, i] = sum_o K[i, o] * S_A[l, i + o].
ClassField prior_message(const ProbVolume& atlas_labels, const KernelField& kernel);

/// exp(-(T_i - T_{i+d})^2 / (2 theta_s^2)) over neighbors, self excluded.
KernelField smoothness_kernel(const ScalarVolume& target, const SmoothWeights& w, const Connectivity& conn);

/// M_s[l, i] = omega_s[l] * sum_o K[i, o] * Q[l, i + o].
ClassField smoothness_message(const ProbVolume& q, const KernelField& kernel, const SmoothWeights& w);

/// out[l, i] = sum_m mu(l, m) * message[m, i].
ClassField compatibility_transform(const ClassField& message, const Compatibility& mu);

// Building blocks shared by the forward pass and reverse mode.

/// out[l, i] += sum_o K[o, i] * values[l, i + o]
void filter_accumulate(const KernelField& kernel, const ProbVolume& values, ClassField& out);

/// grad_values[l, j] += sum_o K[o, j - o] * grad_out[l, j - o]   (adjoint of filter_accumulate)
void filter_transpose_accumulate(const KernelField& kernel, const ClassField& grad_out, ClassField& grad_values);

/// grad_kernel[o, i] += sum_l grad_out[l, i] * values[l, i + o]
void kernel_gradient_accumulate(const ClassField& grad_out, const ProbVolume& values, KernelField& grad_kernel);

/// d/dtheta of sum_{o,i} grad_kernel[o, i] * kernel[o, i] for a gaussian kernel
/// built by gaussian_kernel(target, reference, theta, ...).
double bandwidth_gradient(const KernelField& kernel, const KernelField& grad_kernel, const ScalarVolume& target,
                          const ScalarVolume& reference, double theta);

}  // namespace atlascrf
