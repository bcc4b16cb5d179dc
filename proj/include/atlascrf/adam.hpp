#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "atlascrf/meanfield.hpp"
#include "atlascrf/tape.hpp"
#include "atlascrf/unary.hpp"

namespace atlascrf {

enum class TrainStage { UnaryOnly, Joint, SeparateCam };

std::string_view to_string(TrainStage stage) noexcept;
/// Accepts unary_only, joint, separate_cam (and "separate").
TrainStage parse_stage(std::string_view text);

inline constexpr double kThetaFloor = 1e-4;

struct TrainConfig {
  double lr_default = 5e-4;
  double lr_omega_p = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int max_epochs = 50;
  int patience = 10;
  std::uint64_t seed = 0;
  TrainStage stage = TrainStage::Joint;
  std::size_t batch_size = 1;
  /// Additive Gaussian noise, sigma as a fraction of each scan's intensity
  /// range; 0 disables augmentation.
  double noise_fraction = 0.02;
  /// Edge of the random cubic training crop; 0 trains on whole volumes.
  std::size_t patch_edge = 0;

  void validate() const;
};

/// Everything a training run updates: CRF parameters and the unary net.
struct Model {
  CamParams cam;
  TinyNetParams net;
};

struct AdamMoments {
  std::vector<double> m;
  std::vector<double> v;
};

struct AdamState {
  std::int64_t step = 0;
  std::map<std::string, AdamMoments> groups;  // zero moments until first touched
};

/// Names of the parameter groups in update order.
inline constexpr std::string_view kParamGroups[] = {"mu",      "mu_prior", "omega_p", "omega_s",
                                                    "theta_p", "theta_s",  "net"};

/// Whether `group` is updated in `stage`.
bool group_trainable(std::string_view group, TrainStage stage) noexcept;

/// One bias-corrected Adam update of `params` in place; `step` is the
/// 1-based step number after increment.
void adam_update(std::span<double> params, std::span<const double> grads, AdamMoments& moments, double lr,
                 const TrainConfig& config, std::int64_t step);

/// Updates every group trainable in config.stage; omega_p uses lr_omega_p,
/// the rest lr_default; both bandwidths are clamped to >= kThetaFloor.
void adam_step(Model& model, const Gradients& grads, const TrainConfig& config, AdamState& state);

}  // namespace atlascrf
