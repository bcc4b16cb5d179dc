#pragma once

#include "atlascrf/volume.hpp"

namespace atlascrf {

inline constexpr double kDiceEpsilon = 1e-5;

/// Evenly weighted multi-class soft Dice loss:
///   1 - (1/K) sum_l (2 sum_i q_il g_il + eps) / (sum_i q_il + sum_i g_il + eps)
double dice_loss(const ProbVolume& q, const ProbVolume& ground_truth);

/// d dice_loss / d q.
ProbVolume dice_loss_gradient(const ProbVolume& q, const ProbVolume& ground_truth);

}  // namespace atlascrf
