#include "atlascrf/unary.hpp"

#include <cmath>
#include <random>

#include "atlascrf/error.hpp"
#include "atlascrf/parallel.hpp"
#include "atlascrf/simd.hpp"
#include "atlascrf/vol1.hpp"
#include "rows.hpp"

namespace atlascrf {
namespace {

using detail::negate;
using detail::RowSpan;
using detail::shifted_row;

const std::vector<Offset>& conv_taps() {
  static const std::vector<Offset> taps = connectivity_offsets(Connectivity{3, 1}, true);
  return taps;
}

/// out[co] = bias[co] + sum_ci sum_tap w[co][ci][tap] * in[ci](i + tap)
void conv3_forward(const Dims& dims, std::size_t in_channels, const double* in, std::size_t out_channels,
                   const double* weights, const double* bias, double* out) {
  const std::size_t n = dims.voxels();
  const auto& taps = conv_taps();
  const auto& simd = simd::active();
  parallel_for(dims.d * dims.h, [&](std::size_t row) {
    const std::size_t z = row / dims.h;
    const std::size_t y = row % dims.h;
    const std::size_t base = dims.index(z, y, 0);
    for (std::size_t co = 0; co < out_channels; ++co) {
      double* dst = out + co * n;
      for (std::size_t x = 0; x < dims.w; ++x) dst[base + x] = bias[co];
      for (std::size_t ci = 0; ci < in_channels; ++ci) {
        const double* w = weights + (co * in_channels + ci) * kTinyNetTaps;
        for (std::size_t t = 0; t < taps.size(); ++t) {
          const RowSpan s = shifted_row(dims, z, y, taps[t]);
          if (!s.valid) continue;
          simd.axpy(s.count, w[t], in + ci * n + s.src, dst + s.dst);
        }
      }
    }
  });
}

/// Adjoint of conv3_forward with respect to its input.
void conv3_backward_input(const Dims& dims, std::size_t in_channels, std::size_t out_channels, const double* weights,
                          const double* grad_out, double* grad_in) {
  const std::size_t n = dims.voxels();
  const auto& taps = conv_taps();
  const auto& simd = simd::active();
  parallel_for(dims.d * dims.h, [&](std::size_t row) {
    const std::size_t z = row / dims.h;
    const std::size_t y = row % dims.h;
    for (std::size_t ci = 0; ci < in_channels; ++ci) {
      for (std::size_t co = 0; co < out_channels; ++co) {
        const double* w = weights + (co * in_channels + ci) * kTinyNetTaps;
        for (std::size_t t = 0; t < taps.size(); ++t) {
          const RowSpan s = shifted_row(dims, z, y, negate(taps[t]));
          if (!s.valid) continue;
          simd.axpy(s.count, w[t], grad_out + co * n + s.src, grad_in + ci * n + s.dst);
        }
      }
    }
  });
}

/// Weight and bias gradients of conv3_forward.
void conv3_backward_params(const Dims& dims, std::size_t in_channels, const double* in, std::size_t out_channels,
                           const double* grad_out, double* grad_weights, double* grad_bias) {
  const std::size_t n = dims.voxels();
  const auto& taps = conv_taps();
  const auto& simd = simd::active();
  parallel_for(out_channels * in_channels, [&](std::size_t job) {
    const std::size_t co = job / in_channels;
    const std::size_t ci = job % in_channels;
    double* gw = grad_weights + (co * in_channels + ci) * kTinyNetTaps;
    for (std::size_t t = 0; t < taps.size(); ++t) {
      double sum = 0.0;
      for (std::size_t z = 0; z < dims.d; ++z) {
        for (std::size_t y = 0; y < dims.h; ++y) {
          const RowSpan s = shifted_row(dims, z, y, taps[t]);
          if (!s.valid) continue;
          sum += simd.dot(s.count, grad_out + co * n + s.dst, in + ci * n + s.src);
        }
      }
      gw[t] += sum;
    }
  });
  for (std::size_t co = 0; co < out_channels; ++co) {
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) sum += grad_out[co * n + i];
    grad_bias[co] += sum;
  }
}

void relu(const std::vector<double>& pre, std::vector<double>& act) {
  act.resize(pre.size());
  for (std::size_t i = 0; i < pre.size(); ++i) act[i] = pre[i] > 0.0 ? pre[i] : 0.0;
}

}  // namespace

TinyNetParams::TinyNetParams(std::size_t classes, std::vector<double> values)
    : classes_(classes), values_(std::move(values)) {
  if (classes_ < 2) fail(ErrorCode::InvalidArgument, "TinyNet needs K >= 2");
  if (values_.size() != parameter_count(classes_)) {
    fail(ErrorCode::ShapeMismatch, "TinyNet with K=" + std::to_string(classes_) + " needs " +
                                       std::to_string(parameter_count(classes_)) + " parameters, got " +
                                       std::to_string(values_.size()));
  }
  require_finite(values_, "TinyNet parameters");
}

std::size_t TinyNetParams::parameter_count(std::size_t classes) noexcept {
  return head_at() + classes * kTinyNetWidth + classes;
}

TinyNetParams TinyNetParams::zeros(std::size_t classes) {
  return TinyNetParams(classes, std::vector<double>(parameter_count(classes), 0.0));
}

TinyNetParams TinyNetParams::random(std::size_t classes, std::uint64_t seed) {
  std::vector<double> v(parameter_count(classes), 0.0);
  std::mt19937_64 rng(seed);
  auto fill = [&](std::size_t at, std::size_t count, double fan_in, double gain) {
    std::normal_distribution<double> normal(0.0, std::sqrt(gain / fan_in));
    for (std::size_t i = 0; i < count; ++i) v[at + i] = normal(rng);
  };
  fill(0, kTinyNetWidth * kTinyNetTaps, kTinyNetTaps, 2.0);
  fill(conv2_at(), kTinyNetWidth * kTinyNetWidth * kTinyNetTaps, kTinyNetWidth * kTinyNetTaps, 2.0);
  fill(head_at(), classes * kTinyNetWidth, kTinyNetWidth, 1.0);
  return TinyNetParams(classes, std::move(v));
}

ProbVolume tinynet_forward(const TinyNetParams& params, const ScalarVolume& input, TinyNetCache* cache) {
  const Dims dims = input.dims();
  const std::size_t n = dims.voxels();
  const std::size_t k = params.classes();
  const auto& simd = simd::active();

  std::vector<double> pre1(kTinyNetWidth * n), act1, pre2(kTinyNetWidth * n), act2;
  conv3_forward(dims, 1, input.data().data(), kTinyNetWidth, params.conv1_weights().data(),
                params.conv1_bias().data(), pre1.data());
  relu(pre1, act1);
  conv3_forward(dims, kTinyNetWidth, act1.data(), kTinyNetWidth, params.conv2_weights().data(),
                params.conv2_bias().data(), pre2.data());
  relu(pre2, act2);

  ProbVolume logits(k, dims);
  const auto head = params.head_weights();
  const auto head_bias = params.head_bias();
  for (std::size_t l = 0; l < k; ++l) {
    auto out = logits.channel(l);
    std::fill(out.begin(), out.end(), head_bias[l]);
    for (std::size_t c = 0; c < kTinyNetWidth; ++c) simd.axpy(n, head[l * kTinyNetWidth + c], act2.data() + c * n, out.data());
  }

  if (cache) {
    cache->input = input;
    cache->pre1 = std::move(pre1);
    cache->act1 = std::move(act1);
    cache->pre2 = std::move(pre2);
    cache->act2 = std::move(act2);
  }
  return logits;
}

std::vector<double> tinynet_backward(const TinyNetParams& params, const TinyNetCache& cache,
                                     const ClassField& grad_logits) {
  const Dims dims = cache.input.dims();
  const std::size_t n = dims.voxels();
  const std::size_t k = params.classes();
  require_same_dims(dims, grad_logits.dims(), "tinynet_backward gradient vs cache");
  if (grad_logits.classes() != k || cache.act2.size() != kTinyNetWidth * n || cache.act1.size() != kTinyNetWidth * n) {
    fail(ErrorCode::Integrity, "tinynet_backward: cache does not match the network");
  }
  const auto& simd = simd::active();
  std::vector<double> grad(params.values().size(), 0.0);

  // Head (1x1 convolution).
  const auto head = params.head_weights();
  std::vector<double> g_act2(kTinyNetWidth * n, 0.0);
  for (std::size_t l = 0; l < k; ++l) {
    const double* g = grad_logits.channel(l).data();
    double bias_sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) bias_sum += g[i];
    grad[params.head_bias_at() + l] = bias_sum;
    for (std::size_t c = 0; c < kTinyNetWidth; ++c) {
      grad[TinyNetParams::head_at() + l * kTinyNetWidth + c] = simd.dot(n, g, cache.act2.data() + c * n);
      simd.axpy(n, head[l * kTinyNetWidth + c], g, g_act2.data() + c * n);
    }
  }

  // ReLU 2, conv 2.
  for (std::size_t i = 0; i < g_act2.size(); ++i) {
    if (!(cache.pre2[i] > 0.0)) g_act2[i] = 0.0;
  }
  conv3_backward_params(dims, kTinyNetWidth, cache.act1.data(), kTinyNetWidth, g_act2.data(),
                        grad.data() + TinyNetParams::conv2_at(), grad.data() + TinyNetParams::conv2_bias_at());
  std::vector<double> g_act1(kTinyNetWidth * n, 0.0);
  conv3_backward_input(dims, kTinyNetWidth, kTinyNetWidth, params.conv2_weights().data(), g_act2.data(),
                       g_act1.data());

  // ReLU 1, conv 1.
  for (std::size_t i = 0; i < g_act1.size(); ++i) {
    if (!(cache.pre1[i] > 0.0)) g_act1[i] = 0.0;
  }
  conv3_backward_params(dims, 1, cache.input.data().data(), kTinyNetWidth, g_act1.data(), grad.data(),
                        grad.data() + TinyNetParams::conv1_bias_at());
  return grad;
}

ProbVolume logits_from_probabilities(const ProbVolume& probabilities) {
  ProbVolume out(probabilities.classes(), probabilities.dims());
  const auto p = probabilities.data();
  auto o = out.data();
  for (std::size_t i = 0; i < p.size(); ++i) o[i] = std::log(p[i] + kProbabilityFloor);
  return out;
}

ProbVolume unary_logits(const UnarySource& source, const ScalarVolume& target, std::size_t classes) {
  if (const auto* file = std::get_if<FileBackedUnary>(&source)) {
    if (!std::filesystem::exists(file->path)) fail(ErrorCode::Io, "unary file not found: " + file->path.string());
    ProbVolume stored = read_prob_vol1(file->path);
    if (stored.classes() != classes) {
      fail(ErrorCode::ShapeMismatch, "unary file has K=" + std::to_string(stored.classes()) + ", expected " +
                                         std::to_string(classes));
    }
    require_same_dims(stored.dims(), target.dims(), "unary file vs target");
    if (stored.normalized()) return logits_from_probabilities(stored);
    return stored;
  }
  const auto& net = std::get<TinyNetUnary>(source).params;
  if (net.classes() != classes) {
    fail(ErrorCode::ShapeMismatch, "TinyNet has K=" + std::to_string(net.classes()) + ", expected " +
                                       std::to_string(classes));
  }
  return tinynet_forward(net, target);
}

}  // namespace atlascrf
