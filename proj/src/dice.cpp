#include "atlascrf/dice.hpp"

#include <vector>

#include "atlascrf/error.hpp"
#include "atlascrf/parallel.hpp"

namespace atlascrf {
namespace {

struct ClassSums {
  std::vector<double> intersection;
  std::vector<double> total;  // sum q + sum g
};

ClassSums class_sums(const ProbVolume& q, const ProbVolume& g) {
  require_same_dims(q.dims(), g.dims(), "dice prediction vs ground truth");
  if (q.classes() != g.classes()) fail(ErrorCode::ShapeMismatch, "dice: class count mismatch");
  const std::size_t k = q.classes();
  ClassSums s{std::vector<double>(k), std::vector<double>(k)};
  for (std::size_t l = 0; l < k; ++l) {
    const double* qp = q.channel(l).data();
    const double* gp = g.channel(l).data();
    s.intersection[l] = parallel_sum(q.voxels(), [&](std::size_t b, std::size_t e) {
      double acc = 0.0;
      for (std::size_t i = b; i < e; ++i) acc += qp[i] * gp[i];
      return acc;
    });
    s.total[l] = parallel_sum(q.voxels(), [&](std::size_t b, std::size_t e) {
      double acc = 0.0;
      for (std::size_t i = b; i < e; ++i) acc += qp[i] + gp[i];
      return acc;
    });
  }
  return s;
}

}  // namespace

double dice_loss(const ProbVolume& q, const ProbVolume& ground_truth) {
  const ClassSums s = class_sums(q, ground_truth);
  const std::size_t k = q.classes();
  double score = 0.0;
  for (std::size_t l = 0; l < k; ++l) {
    score += (2.0 * s.intersection[l] + kDiceEpsilon) / (s.total[l] + kDiceEpsilon);
  }
  return 1.0 - score / static_cast<double>(k);
}

ProbVolume dice_loss_gradient(const ProbVolume& q, const ProbVolume& ground_truth) {
  const ClassSums s = class_sums(q, ground_truth);
  const std::size_t k = q.classes();
  const std::size_t n = q.voxels();
  ProbVolume grad(k, q.dims());
  for (std::size_t l = 0; l < k; ++l) {
    const double num = 2.0 * s.intersection[l] + kDiceEpsilon;
    const double den = s.total[l] + kDiceEpsilon;
    // d/dq_il of num/den = (2 g_il den - num) / den^2
    const double scale = -1.0 / (static_cast<double>(k) * den * den);
    const double* gp = ground_truth.channel(l).data();
    double* out = grad.channel(l).data();
    for (std::size_t i = 0; i < n; ++i) out[i] = scale * (2.0 * gp[i] * den - num);
  }
  return grad;
}

}  // namespace atlascrf
