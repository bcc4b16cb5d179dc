#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "atlascrf/meanfield.hpp"

namespace atlascrf::test {

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline ScalarVolume random_scalar(const Dims& dims, std::mt19937_64& rng, double sigma = 1.0) {
  std::normal_distribution<double> n(0.0, sigma);
  ScalarVolume v(dims);
  for (double& x : v.data()) x = n(rng);
  return v;
}

inline ProbVolume random_logits(std::size_t k, const Dims& dims, std::mt19937_64& rng, double sigma = 1.5) {
  std::normal_distribution<double> n(0.0, sigma);
  ProbVolume v(k, dims);
  for (double& x : v.data()) x = n(rng);
  return v;
}

inline LabelMap random_labels(const Dims& dims, std::size_t k, std::mt19937_64& rng) {
  LabelMap m(dims);
  for (auto& l : m.data()) l = static_cast<Label>(rng() % k);
  return m;
}

/// Random inference problem in the ranges the oracle suite covers.
struct Instance {
  CamInput input;
  CamParams params;
};

inline Instance random_instance(std::uint64_t seed, std::size_t max_edge = 6, std::size_t max_k = 4,
                                int max_iters = 3) {
  std::mt19937_64 rng(seed);
  auto pick = [&](std::size_t lo, std::size_t hi) { return lo + rng() % (hi - lo + 1); };
  const Dims dims{pick(1, max_edge), pick(1, max_edge), pick(1, max_edge)};
  const std::size_t k = pick(2, max_k);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  Instance in;
  in.input.target = random_scalar(dims, rng);
  in.input.unary = random_logits(k, dims, rng);
  in.input.atlas.scan = random_scalar(dims, rng);
  in.input.atlas.labels = softmax_channels(random_logits(k, dims, rng, 2.0));

  CamParams& p = in.params;
  p = CamParams::initial(k, dims);
  for (std::size_t l = 0; l < k; ++l)
    for (std::size_t m = 0; m < k; ++m) p.mu(l, m) = (l == m ? 0.0 : 1.0) + 0.5 * (unit(rng) - 0.5);
  for (double& w : p.prior.omega.data()) w = unit(rng);
  for (double& w : p.smooth.omega) w = unit(rng);
  p.prior.theta = 0.5 + unit(rng);
  p.smooth.theta = 0.5 + unit(rng);
  p.conn_prior = Connectivity{rng() % 2 ? 5 : 3, static_cast<int>(pick(1, 2))};
  p.conn_smooth = Connectivity{rng() % 2 ? 5 : 3, static_cast<int>(pick(1, 2))};
  p.iters = static_cast<int>(pick(1, static_cast<std::size_t>(max_iters)));
  return in;
}

}  // namespace atlascrf::test
