#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "atlascrf/adam.hpp"

namespace atlascrf {

/// One small training example plus a model, enough to exercise every
/// parameter group.
struct GradcheckInstance {
  ScalarVolume target;
  AtlasPair atlas;
  ProbVolume ground_truth;
  Model model;
};

/// Random instance: standardized-scale intensities, random compatibility,
/// omega_p in [0.05, 0.5], omega_s in [0.02, 0.2], bandwidths in [0.8, 1.5].
GradcheckInstance random_gradcheck_instance(std::uint64_t seed, const Dims& dims = {4, 4, 4},
                                            std::size_t classes = 3, int iters = 2);

struct GradcheckOptions {
  double h = 1e-3;
  double tolerance = 1e-4;
  std::vector<std::string> groups;  // empty: every group present in the model
  /// Per-group coordinate budget; 0 checks all. A seeded subset otherwise.
  std::size_t max_coords = 0;
  std::uint64_t seed = 0;
};

struct GradcheckGroup {
  std::string name;
  double rel_error = 0.0;  // ||analytic - numeric|| / max(||analytic||, ||numeric||)
  double analytic_norm = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;  // net coordinates whose probe crosses a ReLU kink
  bool pass = false;
};

/// Reverse-mode gradients against central finite differences of the Dice
/// loss of one recorded pass.
std::vector<GradcheckGroup> gradcheck(const GradcheckInstance& instance, const GradcheckOptions& options = {});

}  // namespace atlascrf
