#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string_view>
#include <variant>
#include <vector>

#include "atlascrf/meanfield.hpp"
#include "atlascrf/unary.hpp"

namespace atlascrf {

/// Unary term of a recorded pass: fixed logits or a trainable TinyNet.
using UnaryModel = std::variant<ProbVolume, TinyNetParams>;

enum class TapeOpKind : std::uint8_t {
  UnaryNet,       // out = tinynet(target)
  UnaryConstant,  // out = fixed logits
  Softmax,        // out = softmax(in0)
  PriorKernel,    // out = exp(-(T_i - A_{i+o})^2 / 2 theta_p^2)
  PriorMessage,   // aux = filter(in0, atlas labels), out = omega_p * aux
  SmoothKernel,   // out = exp(-(T_i - T_{i+o})^2 / 2 theta_s^2), self excluded
  SmoothMessage,  // aux = filter(in0, in1), out = omega_s[l] * aux
  Add,            // out = in0 + in1
  Compat,         // out = mu in0 (mu_prior when `prior_mu` is set)
  Subtract,       // out = in0 - in1
  DiceLoss,       // out = dice(in0, ground truth)
};

std::string_view to_string(TapeOpKind kind) noexcept;

struct TapeOp {
  TapeOpKind kind = TapeOpKind::Add;
  int iteration = -1;  // mean-field iteration, -1 for setup ops
  int out = -1;
  std::array<int, 2> in{-1, -1};
  int aux = -1;
  bool prior_mu = false;
};

using TapeValue = std::variant<std::monostate, ClassField, KernelField, double>;

/// Recorded forward computation of one sample: the inputs and parameters it
/// ran with, the ordered primitive ops, and every intermediate value the
/// reverse sweep needs. `signature` seals the op list and slot shapes.
struct Tape {
  ScalarVolume target;
  AtlasPair atlas;
  ProbVolume ground_truth;
  CamParams params;
  UnaryModel unary;
  TinyNetCache net_cache;

  std::vector<TapeOp> ops;
  std::vector<TapeValue> slots;
  int q_slot = -1;
  int loss_slot = -1;
  std::uint64_t signature = 0;

  std::size_t op_count() const noexcept { return ops.size(); }
  const ProbVolume& q() const;
  double loss() const;

  std::uint64_t compute_signature() const;
  /// Throws Integrity when the op list, slot shapes, or signature disagree.
  void verify() const;
};

struct Gradients {
  std::vector<double> d_mu;
  std::vector<double> d_mu_prior;  // empty unless the prior has its own compatibility
  ScalarVolume d_omega_p;
  std::vector<double> d_omega_s;
  double d_theta_p = 0.0;
  double d_theta_s = 0.0;
  std::vector<double> d_unary_params;  // empty for fixed unaries

  static Gradients zeros_like(const CamParams& params, const Dims& dims, const UnaryModel& unary);
  /// this += scale * other
  void accumulate(const Gradients& other, double scale = 1.0);
  bool all_finite() const;
};

struct ForwardRecord {
  ProbVolume q;
  double loss = 0.0;
  Tape tape;
};

/// Records the unary pass, the unrolled mean-field loop and the Dice loss
/// against `ground_truth` (one-hot).
ForwardRecord forward_with_tape(const ScalarVolume& target, const AtlasPair& atlas, const ProbVolume& ground_truth,
                                const CamParams& params, const UnaryModel& unary);

/// Re-executes the recorded ops from the tape's inputs; returns the final Q.
ProbVolume replay(const Tape& tape);

/// Reverse sweep over the tape: exact gradients of the recorded loss times
/// `loss_scale` with respect to every learnable parameter.
Gradients backward(const Tape& tape, double loss_scale = 1.0);

}  // namespace atlascrf
