#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace atlascrf {

/// Spatial extent of a volume, C order: d (slowest), h, w (fastest).
struct Dims {
  std::size_t d = 0;
  std::size_t h = 0;
  std::size_t w = 0;

  constexpr std::size_t voxels() const noexcept { return d * h * w; }
  constexpr std::size_t index(std::size_t z, std::size_t y, std::size_t x) const noexcept {
    return (z * h + y) * w + x;
  }
  constexpr bool contains(long z, long y, long x) const noexcept {
    return z >= 0 && y >= 0 && x >= 0 && z < static_cast<long>(d) && y < static_cast<long>(h) &&
           x < static_cast<long>(w);
  }
  friend constexpr bool operator==(const Dims&, const Dims&) = default;

  std::string str() const;
};

/// One-channel grid of intensities.
class ScalarVolume {
 public:
  ScalarVolume() = default;
  explicit ScalarVolume(Dims dims, double fill = 0.0);
  ScalarVolume(Dims dims, std::vector<double> data);

  const Dims& dims() const noexcept { return dims_; }
  std::size_t size() const noexcept { return data_.size(); }

  std::span<const double> data() const noexcept { return data_; }
  std::span<double> data() noexcept { return data_; }

  double operator[](std::size_t i) const noexcept { return data_[i]; }
  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double at(std::size_t z, std::size_t y, std::size_t x) const noexcept {
    return data_[dims_.index(z, y, x)];
  }
  double& at(std::size_t z, std::size_t y, std::size_t x) noexcept {
    return data_[dims_.index(z, y, x)];
  }

  friend bool operator==(const ScalarVolume&, const ScalarVolume&) = default;

 private:
  Dims dims_{};
  std::vector<double> data_;
};

/// K-channel grid of per-voxel scores or distributions. Channel-major: the
/// plane for class l is contiguous and laid out like a ScalarVolume.
class ProbVolume {
 public:
  ProbVolume() = default;
  ProbVolume(std::size_t classes, Dims dims, double fill = 0.0, bool normalized = false);
  ProbVolume(std::size_t classes, Dims dims, std::vector<double> data, bool normalized = false);

  std::size_t classes() const noexcept { return classes_; }
  const Dims& dims() const noexcept { return dims_; }
  std::size_t voxels() const noexcept { return dims_.voxels(); }

  bool normalized() const noexcept { return normalized_; }
  void set_normalized(bool flag) noexcept { normalized_ = flag; }

  std::span<const double> data() const noexcept { return data_; }
  std::span<double> data() noexcept { return data_; }

  std::span<const double> channel(std::size_t l) const noexcept {
    return std::span<const double>(data_).subspan(l * voxels(), voxels());
  }
  std::span<double> channel(std::size_t l) noexcept {
    return std::span<double>(data_).subspan(l * voxels(), voxels());
  }

  double at(std::size_t l, std::size_t i) const noexcept { return data_[l * voxels() + i]; }
  double& at(std::size_t l, std::size_t i) noexcept { return data_[l * voxels() + i]; }

  friend bool operator==(const ProbVolume&, const ProbVolume&) = default;

 private:
  std::size_t classes_ = 0;
  Dims dims_{};
  std::vector<double> data_;
  bool normalized_ = false;
};

using Label = std::uint16_t;

/// Hard class assignment per voxel.
class LabelMap {
 public:
  LabelMap() = default;
  explicit LabelMap(Dims dims, Label fill = 0);
  LabelMap(Dims dims, std::vector<Label> data);

  const Dims& dims() const noexcept { return dims_; }
  std::size_t size() const noexcept { return data_.size(); }

  std::span<const Label> data() const noexcept { return data_; }
  std::span<Label> data() noexcept { return data_; }

  Label operator[](std::size_t i) const noexcept { return data_[i]; }
  Label& operator[](std::size_t i) noexcept { return data_[i]; }
  Label at(std::size_t z, std::size_t y, std::size_t x) const noexcept {
    return data_[dims_.index(z, y, x)];
  }
  Label& at(std::size_t z, std::size_t y, std::size_t x) noexcept {
    return data_[dims_.index(z, y, x)];
  }

  /// Throws OutOfRange naming the first voxel whose label is >= classes.
  void check_classes(std::size_t classes) const;

  friend bool operator==(const LabelMap&, const LabelMap&) = default;

 private:
  Dims dims_{};
  std::vector<Label> data_;
};

/// Atlas intensity scan plus its probabilistic label map.
struct AtlasPair {
  ScalarVolume scan;
  ProbVolume labels;

  void validate() const;
};

/// Per-voxel softmax across channels with max subtraction. Throws NonFinite
/// naming the first voxel holding a NaN/Inf.
ProbVolume softmax_channels(const ProbVolume& logits);

ProbVolume one_hot(const LabelMap& labels, std::size_t classes);

/// Per-voxel index of the largest channel; ties go to the lowest index.
LabelMap argmax_labels(const ProbVolume& q);

/// Largest |sum_l q[l,i] - 1| over voxels.
double max_normalization_error(const ProbVolume& q);

/// Throws NonFinite naming the first non-finite entry.
void require_finite(std::span<const double> values, const char* what);

void require_same_dims(const Dims& a, const Dims& b, const char* what);

}  // namespace atlascrf
