#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <variant>
#include <vector>

#include "atlascrf/potentials.hpp"
#include "atlascrf/volume.hpp"

namespace atlascrf {

inline constexpr std::size_t kTinyNetWidth = 8;
inline constexpr std::size_t kTinyNetTaps = 27;  // 3x3x3

/// Weights of a small voxel classifier: conv3 1->8, ReLU, conv3 8->8, ReLU,
/// conv1 8->K. Flat storage in that order, each layer weights then biases;
/// weights are [out][in][tap] with taps in lexicographic (dz, dy, dx) order.
class TinyNetParams {
 public:
  TinyNetParams() = default;
  TinyNetParams(std::size_t classes, std::vector<double> values);

  static std::size_t parameter_count(std::size_t classes) noexcept;
  static TinyNetParams zeros(std::size_t classes);
  /// He-normal weights, zero biases.
  static TinyNetParams random(std::size_t classes, std::uint64_t seed);

  std::size_t classes() const noexcept { return classes_; }
  std::span<const double> values() const noexcept { return values_; }
  std::span<double> values() noexcept { return values_; }

  std::span<const double> conv1_weights() const noexcept { return block(0, kTinyNetWidth * kTinyNetTaps); }
  std::span<const double> conv1_bias() const noexcept { return block(conv1_bias_at(), kTinyNetWidth); }
  std::span<const double> conv2_weights() const noexcept {
    return block(conv2_at(), kTinyNetWidth * kTinyNetWidth * kTinyNetTaps);
  }
  std::span<const double> conv2_bias() const noexcept { return block(conv2_bias_at(), kTinyNetWidth); }
  std::span<const double> head_weights() const noexcept { return block(head_at(), classes_ * kTinyNetWidth); }
  std::span<const double> head_bias() const noexcept { return block(head_bias_at(), classes_); }

  static constexpr std::size_t conv1_bias_at() noexcept { return kTinyNetWidth * kTinyNetTaps; }
  static constexpr std::size_t conv2_at() noexcept { return conv1_bias_at() + kTinyNetWidth; }
  static constexpr std::size_t conv2_bias_at() noexcept {
    return conv2_at() + kTinyNetWidth * kTinyNetWidth * kTinyNetTaps;
  }
  static constexpr std::size_t head_at() noexcept { return conv2_bias_at() + kTinyNetWidth; }
  std::size_t head_bias_at() const noexcept { return head_at() + classes_ * kTinyNetWidth; }

  friend bool operator==(const TinyNetParams&, const TinyNetParams&) = default;

 private:
  std::span<const double> block(std::size_t at, std::size_t count) const noexcept {
    return std::span<const double>(values_).subspan(at, count);
  }

  std::size_t classes_ = 0;
  std::vector<double> values_;
};

/// Activations saved by a recorded forward pass; channel-major, 8 x N each.
struct TinyNetCache {
  ScalarVolume input;
  std::vector<double> pre1, act1, pre2, act2;
};

/// Raw K-channel logits; zero padding at the borders. Fills `cache` when given.
ProbVolume tinynet_forward(const TinyNetParams& params, const ScalarVolume& input, TinyNetCache* cache = nullptr);

/// Gradient of sum(grad_logits * logits) with respect to the flat parameters.
std::vector<double> tinynet_backward(const TinyNetParams& params, const TinyNetCache& cache,
                                     const ClassField& grad_logits);

struct FileBackedUnary {
  std::filesystem::path path;
};

struct TinyNetUnary {
  TinyNetParams params;
};

using UnarySource = std::variant<FileBackedUnary, TinyNetUnary>;

inline constexpr double kProbabilityFloor = 1e-12;

/// log(p + 1e-12) per entry.
ProbVolume logits_from_probabilities(const ProbVolume& probabilities);

/// File-backed sources return log-probabilities when the stored volume is
/// normalized and the raw values otherwise; TinyNet runs a forward pass.
ProbVolume unary_logits(const UnarySource& source, const ScalarVolume& target, std::size_t classes);

}  // namespace atlascrf
