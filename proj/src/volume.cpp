#include "atlascrf/volume.hpp"

#include <algorithm>
#include <cmath>

#include "atlascrf/error.hpp"
#include "atlascrf/parallel.hpp"

namespace atlascrf {

std::string Dims::str() const {
  return std::to_string(d) + "x" + std::to_string(h) + "x" + std::to_string(w);
}

ScalarVolume::ScalarVolume(Dims dims, double fill) : dims_(dims), data_(dims.voxels(), fill) {}

ScalarVolume::ScalarVolume(Dims dims, std::vector<double> data) : dims_(dims), data_(std::move(data)) {
  if (data_.size() != dims_.voxels()) {
    fail(ErrorCode::ShapeMismatch, "scalar volume " + dims_.str() + " given " +
                                       std::to_string(data_.size()) + " values");
  }
}

ProbVolume::ProbVolume(std::size_t classes, Dims dims, double fill, bool normalized)
    : classes_(classes), dims_(dims), data_(classes * dims.voxels(), fill), normalized_(normalized) {}

ProbVolume::ProbVolume(std::size_t classes, Dims dims, std::vector<double> data, bool normalized)
    : classes_(classes), dims_(dims), data_(std::move(data)), normalized_(normalized) {
  if (data_.size() != classes_ * dims_.voxels()) {
    fail(ErrorCode::ShapeMismatch, "prob volume " + std::to_string(classes_) + "x" + dims_.str() +
                                       " given " + std::to_string(data_.size()) + " values");
  }
}

LabelMap::LabelMap(Dims dims, Label fill) : dims_(dims), data_(dims.voxels(), fill) {}

LabelMap::LabelMap(Dims dims, std::vector<Label> data) : dims_(dims), data_(std::move(data)) {
  if (data_.size() != dims_.voxels()) {
    fail(ErrorCode::ShapeMismatch, "label map " + dims_.str() + " given " +
                                       std::to_string(data_.size()) + " values");
  }
}

void LabelMap::check_classes(std::size_t classes) const {
  for (std::size_t i = 0; i < data_.size(); ++i) {
    if (data_[i] >= classes) {
      fail(ErrorCode::OutOfRange, "label " + std::to_string(data_[i]) + " at voxel " +
                                      std::to_string(i) + " is not below K=" + std::to_string(classes));
    }
  }
}

void AtlasPair::validate() const {
  require_same_dims(scan.dims(), labels.dims(), "atlas scan vs atlas labels");
  if (labels.classes() < 2) fail(ErrorCode::InvalidArgument, "atlas labels need K >= 2");
}

void require_finite(std::span<const double> values, const char* what) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      fail(ErrorCode::NonFinite, std::string(what) + ": non-finite value at index " + std::to_string(i));
    }
  }
}

void require_same_dims(const Dims& a, const Dims& b, const char* what) {
  if (!(a == b)) fail(ErrorCode::ShapeMismatch, std::string(what) + ": " + a.str() + " vs " + b.str());
}

ProbVolume softmax_channels(const ProbVolume& logits) {
  const std::size_t k = logits.classes();
  const std::size_t n = logits.voxels();
  const auto in = logits.data();
  for (std::size_t i = 0; i < in.size(); ++i) {
    if (!std::isfinite(in[i])) {
      fail(ErrorCode::NonFinite, "softmax_channels: non-finite logit at voxel " + std::to_string(i % n) +
                                     " class " + std::to_string(i / n));
    }
  }
  ProbVolume out(k, logits.dims(), 0.0, true);
  auto o = out.data();
  parallel_for(n, [&](std::size_t i) {
    double peak = in[i];
    for (std::size_t l = 1; l < k; ++l) peak = std::max(peak, in[l * n + i]);
    double sum = 0.0;
    for (std::size_t l = 0; l < k; ++l) {
      const double e = std::exp(in[l * n + i] - peak);
      o[l * n + i] = e;
      sum += e;
    }
    const double inv = 1.0 / sum;
    for (std::size_t l = 0; l < k; ++l) o[l * n + i] *= inv;
  });
  return out;
}

ProbVolume one_hot(const LabelMap& labels, std::size_t classes) {
  labels.check_classes(classes);
  ProbVolume out(classes, labels.dims(), 0.0, true);
  const std::size_t n = labels.size();
  for (std::size_t i = 0; i < n; ++i) out.at(labels[i], i) = 1.0;
  return out;
}

LabelMap argmax_labels(const ProbVolume& q) {
  const std::size_t k = q.classes();
  const std::size_t n = q.voxels();
  LabelMap out(q.dims());
  const auto in = q.data();
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    double best_value = in[i];
    for (std::size_t l = 1; l < k; ++l) {
      if (in[l * n + i] > best_value) {
        best_value = in[l * n + i];
        best = l;
      }
    }
    out[i] = static_cast<Label>(best);
  }
  return out;
}

double max_normalization_error(const ProbVolume& q) {
  const std::size_t k = q.classes();
  const std::size_t n = q.voxels();
  double worst = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double sum = 0.0;
    for (std::size_t l = 0; l < k; ++l) sum += q.at(l, i);
    worst = std::max(worst, std::abs(sum - 1.0));
  }
  return worst;
}

}  // namespace atlascrf
