#include "atlascrf/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "atlascrf/error.hpp"

namespace atlascrf {
namespace {

std::span<double> group_values(Model& m, const std::string& name) {
  if (name == "mu") return m.cam.mu.values();
  if (name == "mu_prior") return m.cam.mu_prior ? m.cam.mu_prior->values() : std::span<double>{};
  if (name == "omega_p") return m.cam.prior.omega.data();
  if (name == "omega_s") return m.cam.smooth.omega;
  if (name == "theta_p") return std::span<double>(&m.cam.prior.theta, 1);
  if (name == "theta_s") return std::span<double>(&m.cam.smooth.theta, 1);
  if (name == "net") return m.net.values();
  fail(ErrorCode::InvalidArgument, "unknown parameter group '" + name + "'");
}

std::span<const double> group_grads(const Gradients& g, const std::string& name) {
  if (name == "mu") return g.d_mu;
  if (name == "mu_prior") return g.d_mu_prior;
  if (name == "omega_p") return g.d_omega_p.data();
  if (name == "omega_s") return g.d_omega_s;
  if (name == "theta_p") return std::span<const double>(&g.d_theta_p, 1);
  if (name == "theta_s") return std::span<const double>(&g.d_theta_s, 1);
  return g.d_unary_params;
}

double loss_of(const GradcheckInstance& in, const Model& m) {
  return forward_with_tape(in.target, in.atlas, in.ground_truth, m.cam, UnaryModel(m.net)).loss;
}

std::vector<char> relu_pattern(const TinyNetParams& net, const ScalarVolume& target) {
  TinyNetCache cache;
  tinynet_forward(net, target, &cache);
  std::vector<char> mask;
  mask.reserve(cache.pre1.size() + cache.pre2.size());
  for (double v : cache.pre1) mask.push_back(v > 0.0);
  for (double v : cache.pre2) mask.push_back(v > 0.0);
  return mask;
}

}  // namespace

GradcheckInstance random_gradcheck_instance(std::uint64_t seed, const Dims& dims, std::size_t k, int iters) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  GradcheckInstance in;
  in.target = ScalarVolume(dims);
  for (double& v : in.target.data()) v = normal(rng);
  in.atlas.scan = ScalarVolume(dims);
  for (std::size_t i = 0; i < dims.voxels(); ++i) in.atlas.scan[i] = in.target[i] + 0.3 * normal(rng);
  ProbVolume raw(k, dims);
  for (double& v : raw.data()) v = 2.0 * normal(rng);
  in.atlas.labels = softmax_channels(raw);
  LabelMap gt(dims);
  for (std::size_t i = 0; i < dims.voxels(); ++i) gt[i] = static_cast<Label>(rng() % k);
  in.ground_truth = one_hot(gt, k);

  CamParams& cam = in.model.cam;
  cam = CamParams::initial(k, dims);
  for (std::size_t l = 0; l < k; ++l)
    for (std::size_t m = 0; m < k; ++m) cam.mu(l, m) = (l == m ? 0.0 : 1.0) + 0.5 * normal(rng);
  for (double& w : cam.prior.omega.data()) w = 0.05 + 0.45 * unit(rng);
  for (double& w : cam.smooth.omega) w = 0.02 + 0.18 * unit(rng);
  cam.prior.theta = 0.8 + 0.7 * unit(rng);
  cam.smooth.theta = 0.8 + 0.7 * unit(rng);
  cam.iters = iters;
  in.model.net = TinyNetParams::random(k, rng());
  return in;
}

std::vector<GradcheckGroup> gradcheck(const GradcheckInstance& in, const GradcheckOptions& options) {
  if (!(options.h > 0.0)) fail(ErrorCode::InvalidArgument, "gradcheck step must be positive");
  std::vector<std::string> names = options.groups;
  if (names.empty()) {
    for (std::string_view g : kParamGroups) {
      if (g == "mu_prior" && !in.model.cam.mu_prior) continue;
      names.emplace_back(g);
    }
  }
  const ForwardRecord rec =
      forward_with_tape(in.target, in.atlas, in.ground_truth, in.model.cam, UnaryModel(in.model.net));
  const Gradients analytic = backward(rec.tape);
  const std::vector<char> base_pattern = relu_pattern(in.model.net, in.target);

  std::vector<GradcheckGroup> out;
  std::mt19937_64 rng(options.seed);
  for (const std::string& name : names) {
    Model probe = in.model;
    const std::span<double> values = group_values(probe, name);
    if (values.empty()) fail(ErrorCode::InvalidArgument, "parameter group '" + name + "' is not present");
    const std::span<const double> grads = group_grads(analytic, name);

    std::vector<std::size_t> coords(values.size());
    std::iota(coords.begin(), coords.end(), 0);
    if (options.max_coords > 0 && coords.size() > options.max_coords) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(options.max_coords);
      std::sort(coords.begin(), coords.end());
    }

    GradcheckGroup g;
    g.name = name;
    double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
    for (std::size_t c : coords) {
      const double saved = values[c];
      values[c] = saved + options.h;
      const bool kink_plus = name == "net" && relu_pattern(probe.net, in.target) != base_pattern;
      const double up = loss_of(in, probe);
      values[c] = saved - options.h;
      const bool kink_minus = name == "net" && relu_pattern(probe.net, in.target) != base_pattern;
      const double down = loss_of(in, probe);
      values[c] = saved;
      if (kink_plus || kink_minus) {
        ++g.skipped;
        continue;
      }
      const double numeric = (up - down) / (2.0 * options.h);
      diff2 += (grads[c] - numeric) * (grads[c] - numeric);
      a2 += grads[c] * grads[c];
      n2 += numeric * numeric;
      ++g.checked;
    }
    g.analytic_norm = std::sqrt(a2);
    const double scale = std::max({std::sqrt(a2), std::sqrt(n2), 1e-300});
    g.rel_error = (a2 == 0.0 && n2 == 0.0) ? 0.0 : std::sqrt(diff2) / scale;
    g.pass = g.checked > 0 && g.rel_error < options.tolerance;
    out.push_back(g);
  }
  return out;
}

}  // namespace atlascrf
