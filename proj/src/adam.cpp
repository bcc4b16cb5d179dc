#include "atlascrf/adam.hpp"

#include <algorithm>
#include <cmath>

#include "atlascrf/error.hpp"

namespace atlascrf {

std::string_view to_string(TrainStage stage) noexcept {
  switch (stage) {
    case TrainStage::UnaryOnly:
      return "unary_only";
    case TrainStage::Joint:
      return "joint";
    case TrainStage::SeparateCam:
      return "separate_cam";
  }
  return "unknown";
}

TrainStage parse_stage(std::string_view text) {
  if (text == "unary_only" || text == "unary") return TrainStage::UnaryOnly;
  if (text == "joint") return TrainStage::Joint;
  if (text == "separate_cam" || text == "separate") return TrainStage::SeparateCam;
  fail(ErrorCode::InvalidArgument, "unknown training stage '" + std::string(text) + "'");
}

void TrainConfig::validate() const {
  if (!(lr_default > 0.0) || !(lr_omega_p > 0.0)) fail(ErrorCode::InvalidArgument, "learning rates must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    fail(ErrorCode::InvalidArgument, "Adam betas must lie in [0, 1)");
  }
  if (!(epsilon > 0.0)) fail(ErrorCode::InvalidArgument, "Adam epsilon must be positive");
  if (max_epochs < 1) fail(ErrorCode::InvalidArgument, "max_epochs must be >= 1");
  if (patience < 1) fail(ErrorCode::InvalidArgument, "patience must be >= 1");
  if (batch_size < 1) fail(ErrorCode::InvalidArgument, "batch_size must be >= 1");
  if (!(noise_fraction >= 0.0)) fail(ErrorCode::InvalidArgument, "noise_fraction must be >= 0");
}

bool group_trainable(std::string_view group, TrainStage stage) noexcept {
  switch (stage) {
    case TrainStage::UnaryOnly:
      return group == "net";
    case TrainStage::SeparateCam:
      return group != "net";
    case TrainStage::Joint:
      return true;
  }
  return false;
}

void adam_update(std::span<double> params, std::span<const double> grads, AdamMoments& moments, double lr,
                 const TrainConfig& config, std::int64_t step) {
  if (params.size() != grads.size()) fail(ErrorCode::ShapeMismatch, "adam: parameter/gradient size mismatch");
  if (moments.m.size() != params.size()) {
    moments.m.assign(params.size(), 0.0);
    moments.v.assign(params.size(), 0.0);
  }
  const double b1 = config.beta1;
  const double b2 = config.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    moments.m[i] = b1 * moments.m[i] + (1.0 - b1) * g;
    moments.v[i] = b2 * moments.v[i] + (1.0 - b2) * g * g;
    const double mhat = moments.m[i] / c1;
    const double vhat = moments.v[i] / c2;
    params[i] -= lr * mhat / (std::sqrt(vhat) + config.epsilon);
  }
}

void adam_step(Model& model, const Gradients& grads, const TrainConfig& config, AdamState& state) {
  ++state.step;
  auto update = [&](std::string_view name, std::span<double> p, std::span<const double> g, double lr) {
    if (!group_trainable(name, config.stage) || p.empty()) return;
    if (g.size() != p.size()) {
      fail(ErrorCode::ShapeMismatch, "adam: gradient for " + std::string(name) + " has " + std::to_string(g.size()) +
                                         " entries, parameters " + std::to_string(p.size()));
    }
    adam_update(p, g, state.groups[std::string(name)], lr, config, state.step);
  };
  CamParams& cam = model.cam;
  update("mu", cam.mu.values(), grads.d_mu, config.lr_default);
  if (cam.mu_prior) update("mu_prior", cam.mu_prior->values(), grads.d_mu_prior, config.lr_default);
  update("omega_p", cam.prior.omega.data(), grads.d_omega_p.data(), config.lr_omega_p);
  update("omega_s", cam.smooth.omega, grads.d_omega_s, config.lr_default);
  update("theta_p", std::span<double>(&cam.prior.theta, 1), std::span<const double>(&grads.d_theta_p, 1),
         config.lr_default);
  update("theta_s", std::span<double>(&cam.smooth.theta, 1), std::span<const double>(&grads.d_theta_s, 1),
         config.lr_default);
  if (!grads.d_unary_params.empty()) update("net", model.net.values(), grads.d_unary_params, config.lr_default);
  cam.prior.theta = std::max(cam.prior.theta, kThetaFloor);
  cam.smooth.theta = std::max(cam.smooth.theta, kThetaFloor);
}

}  // namespace atlascrf
