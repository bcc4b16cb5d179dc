#include "atlascrf/meanfield.hpp"

#include <algorithm>
#include <cmath>

#include "atlascrf/error.hpp"

namespace atlascrf {

CamParams CamParams::initial(std::size_t classes, const Dims& dims) {
  CamParams p;
  p.mu = Compatibility::potts(classes);
  p.prior.omega = ScalarVolume(dims, kInitialOmegaPrior);
  p.prior.theta = kInitialTheta;
  p.smooth.omega.assign(classes, kInitialOmegaSmooth);
  p.smooth.theta = kInitialTheta;
  return p;
}

void CamParams::validate(std::size_t classes, const Dims& dims) const {
  if (mu.classes() != classes) {
    fail(ErrorCode::ShapeMismatch, "mu is " + std::to_string(mu.classes()) + "x" + std::to_string(mu.classes()) +
                                       " for K=" + std::to_string(classes));
  }
  if (mu_prior && mu_prior->classes() != classes) fail(ErrorCode::ShapeMismatch, "mu_prior class count mismatch");
  if (iters < 1) fail(ErrorCode::InvalidArgument, "iters must be >= 1");
  conn_prior.validate();
  conn_smooth.validate();
  if (enable_prior) {
    require_same_dims(prior.omega.dims(), dims, "omega_p vs target");
    if (!(prior.theta > 0.0)) fail(ErrorCode::InvalidArgument, "theta_p must be positive");
  }
  if (enable_smooth) {
    if (smooth.omega.size() != classes) fail(ErrorCode::ShapeMismatch, "omega_s needs one weight per class");
    if (!(smooth.theta > 0.0)) fail(ErrorCode::InvalidArgument, "theta_s must be positive");
  }
}

void CamInput::validate() const {
  require_same_dims(target.dims(), unary.dims(), "target vs unary");
  require_same_dims(target.dims(), atlas.scan.dims(), "target vs atlas scan");
  atlas.validate();
  if (unary.classes() != atlas.labels.classes()) {
    fail(ErrorCode::ShapeMismatch, "unary has K=" + std::to_string(unary.classes()) + ", atlas labels K=" +
                                       std::to_string(atlas.labels.classes()));
  }
}

namespace {

ProbVolume normalize_iteration(const ClassField& logits, int iteration) {
  try {
    return softmax_channels(logits);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::NonFinite) throw;
    fail(ErrorCode::NonFinite, "mean-field iteration " + std::to_string(iteration) + ": " + e.what());
  }
}

}  // namespace

ProbVolume mean_field_infer(const CamInput& input, const CamParams& params, const IterationObserver& observer) {
  input.validate();
  const std::size_t k = input.unary.classes();
  const Dims dims = input.target.dims();
  params.validate(k, dims);

  ProbVolume q = normalize_iteration(input.unary, 0);
  if (observer) observer(0, q);
  if (!params.enable_prior && !params.enable_smooth) return q;

  // Atlas labels are observed, so the prior message is fixed across
  // iterations. omega_p is applied after filtering, which equals filtering
  // with the omega-weighted kernel and matches the recorded training pass.
  std::optional<ClassField> prior_msg;
  std::optional<ClassField> prior_energy;
  if (params.enable_prior) {
    const KernelField g = gaussian_kernel(input.target, input.atlas.scan, params.prior.theta, params.conn_prior, true);
    ClassField msg(k, dims);
    filter_accumulate(g, input.atlas.labels, msg);
    const auto omega = params.prior.omega.data();
    for (std::size_t l = 0; l < k; ++l) {
      double* c = msg.channel(l).data();
      for (std::size_t i = 0; i < dims.voxels(); ++i) c[i] *= omega[i];
    }
    if (params.mu_prior) {
      prior_energy = compatibility_transform(msg, *params.mu_prior);
    } else {
      prior_msg = std::move(msg);
    }
  }
  std::optional<KernelField> smooth_kernel;
  if (params.enable_smooth) smooth_kernel = smoothness_kernel(input.target, params.smooth, params.conn_smooth);

  const std::size_t n = k * dims.voxels();
  for (int t = 1; t <= params.iters; ++t) {
    std::optional<ClassField> message = prior_msg;
    if (smooth_kernel) {
      ClassField s = smoothness_message(q, *smooth_kernel, params.smooth);
      if (message) {
        auto m = message->data();
        const auto sv = s.data();
        for (std::size_t i = 0; i < n; ++i) m[i] += sv[i];
      } else {
        message = std::move(s);
      }
    }
    std::optional<ClassField> energy;
    if (message) energy = compatibility_transform(*message, params.mu);
    if (prior_energy) {
      if (energy) {
        auto e = energy->data();
        const auto pe = prior_energy->data();
        for (std::size_t i = 0; i < n; ++i) e[i] += pe[i];
      } else {
        energy = prior_energy;
      }
    }
    ClassField logits = input.unary;
    logits.set_normalized(false);
    auto z = logits.data();
    const auto e = energy->data();
    for (std::size_t i = 0; i < n; ++i) z[i] -= e[i];
    q = normalize_iteration(logits, t);
    if (observer) observer(t, q);
  }
  return q;
}

ProbVolume brute_force_infer(const CamInput& input, const CamParams& params) {
  input.validate();
  const std::size_t k = input.unary.classes();
  const Dims dims = input.target.dims();
  params.validate(k, dims);
  const std::size_t n = dims.voxels();
  if (n > kBruteForceMaxVoxels) {
    fail(ErrorCode::InvalidArgument, "brute_force_infer is limited to " + std::to_string(kBruteForceMaxVoxels) +
                                         " voxels, got " + dims.str());
  }

  const auto unary = input.unary.data();
  auto softmax = [&](const std::vector<double>& z) {
    std::vector<double> p(z.size());
    for (std::size_t i = 0; i < n; ++i) {
      double peak = -INFINITY;
      for (std::size_t l = 0; l < k; ++l) peak = std::max(peak, z[l * n + i]);
      double sum = 0.0;
      for (std::size_t l = 0; l < k; ++l) sum += std::exp(z[l * n + i] - peak);
      for (std::size_t l = 0; l < k; ++l) p[l * n + i] = std::exp(z[l * n + i] - peak) / sum;
    }
    return p;
  };

  std::vector<double> q = softmax(std::vector<double>(unary.begin(), unary.end()));
  if (!params.enable_prior && !params.enable_smooth) return ProbVolume(k, dims, std::move(q), true);

  const auto& T = input.target;
  const auto& A = input.atlas.scan;
  const auto& SA = input.atlas.labels;

  // Edge list of one connection set: (destination, source, weight).
  struct Edge {
    std::size_t dst, src;
    double weight;
  };
  auto enumerate = [&](const Connectivity& c, const ScalarVolume& other, double theta, bool self) {
    std::vector<Edge> edges;
    const int rad = (c.size - 1) / 2;
    for (std::size_t z = 0; z < dims.d; ++z)
      for (std::size_t y = 0; y < dims.h; ++y)
        for (std::size_t x = 0; x < dims.w; ++x)
          for (int a = -rad; a <= rad; ++a)
            for (int b = -rad; b <= rad; ++b)
              for (int e = -rad; e <= rad; ++e) {
                if (!self && a == 0 && b == 0 && e == 0) continue;
                const long jz = static_cast<long>(z) + a * c.dilation;
                const long jy = static_cast<long>(y) + b * c.dilation;
                const long jx = static_cast<long>(x) + e * c.dilation;
                if (!dims.contains(jz, jy, jx)) continue;
                const std::size_t i = dims.index(z, y, x);
                const std::size_t j = dims.index(static_cast<std::size_t>(jz), static_cast<std::size_t>(jy),
                                                 static_cast<std::size_t>(jx));
                const double diff = T[i] - other[j];
                edges.push_back({i, j, std::exp(-(diff * diff) / (2.0 * theta * theta))});
              }
    return edges;
  };

  std::vector<double> prior_msg(k * n, 0.0);
  if (params.enable_prior) {
    for (const Edge& e : enumerate(params.conn_prior, A, params.prior.theta, true)) {
      for (std::size_t l = 0; l < k; ++l) {
        prior_msg[l * n + e.dst] += params.prior.omega[e.dst] * e.weight * SA.at(l, e.src);
      }
    }
  }
  std::vector<Edge> smooth_edges;
  if (params.enable_smooth) smooth_edges = enumerate(params.conn_smooth, T, params.smooth.theta, false);

  const Compatibility& mu_p = params.mu_prior ? *params.mu_prior : params.mu;
  for (int t = 1; t <= params.iters; ++t) {
    std::vector<double> smooth_msg(k * n, 0.0);
    for (const Edge& e : smooth_edges) {
      for (std::size_t l = 0; l < k; ++l) {
        smooth_msg[l * n + e.dst] += params.smooth.omega[l] * e.weight * q[l * n + e.src];
      }
    }
    std::vector<double> z(unary.begin(), unary.end());
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t l = 0; l < k; ++l) {
        double energy = 0.0;
        for (std::size_t m = 0; m < k; ++m) {
          energy += params.mu(l, m) * smooth_msg[m * n + i] + mu_p(l, m) * prior_msg[m * n + i];
        }
        z[l * n + i] -= energy;
      }
    }
    q = softmax(z);
  }
  return ProbVolume(k, dims, std::move(q), true);
}

CamParams ablate(CamParams params, Potential drop) {
  if (drop == Potential::Prior || drop == Potential::Both) params.enable_prior = false;
  if (drop == Potential::Smooth || drop == Potential::Both) params.enable_smooth = false;
  return params;
}

}  // namespace atlascrf
