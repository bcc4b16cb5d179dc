#pragma once

#include <cstddef>
#include <functional>
#include <optional>

#include "atlascrf/potentials.hpp"
#include "atlascrf/volume.hpp"

namespace atlascrf {

/// Every learnable CRF parameter plus the structural constants.
struct CamParams {
  Compatibility mu;
  /// When set, the prior term uses its own compatibility instead of `mu`.
  std::optional<Compatibility> mu_prior;
  PriorWeights prior;
  SmoothWeights smooth;
  Connectivity conn_prior{5, 2};
  Connectivity conn_smooth{5, 1};
  int iters = 5;
  bool enable_prior = true;
  bool enable_smooth = true;

  /// Potts compatibility and constant initial weights over `dims`.
  static CamParams initial(std::size_t classes, const Dims& dims);

  std::size_t classes() const noexcept { return mu.classes(); }
  void validate(std::size_t classes, const Dims& dims) const;
};

inline constexpr double kInitialOmegaPrior = 0.05;
inline constexpr double kInitialOmegaSmooth = 0.02;
inline constexpr double kInitialTheta = 1.0;

struct CamInput {
  ScalarVolume target;
  /// Raw logits, i.e. negated appearance energies.
  ProbVolume unary;
  AtlasPair atlas;

  void validate() const;
};

/// Called with (iteration, Q) after every update; iteration 0 is softmax(unary).
using IterationObserver = std::function<void(int, const ProbVolume&)>;

/// Unrolled mean-field inference: Q0 = softmax(U), then per iteration
/// M = prior message + smoothness message(Q), P = mu M, Q = softmax(U - P).
ProbVolume mean_field_infer(const CamInput& input, const CamParams& params,
                            const IterationObserver& observer = {});

/// Same schedule with messages formed by enumerating every connection
/// explicitly. Test oracle; refuses volumes above kBruteForceMaxVoxels.
ProbVolume brute_force_infer(const CamInput& input, const CamParams& params);

inline constexpr std::size_t kBruteForceMaxVoxels = 8 * 8 * 8;

enum class Potential { Prior, Smooth, Both };

/// Clears the enable flags of the named potentials; learned values untouched.
CamParams ablate(CamParams params, Potential drop);

}  // namespace atlascrf
