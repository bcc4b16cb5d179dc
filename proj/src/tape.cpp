#include "atlascrf/tape.hpp"

#include <cmath>
#include <cstring>

#include "atlascrf/dice.hpp"
#include "atlascrf/error.hpp"
#include "atlascrf/simd.hpp"

namespace atlascrf {

std::string_view to_string(TapeOpKind kind) noexcept {
  switch (kind) {
    case TapeOpKind::UnaryNet: return "UnaryNet";
    case TapeOpKind::UnaryConstant: return "UnaryConstant";
    case TapeOpKind::Softmax: return "Softmax";
    case TapeOpKind::PriorKernel: return "PriorKernel";
    case TapeOpKind::PriorMessage: return "PriorMessage";
    case TapeOpKind::SmoothKernel: return "SmoothKernel";
    case TapeOpKind::SmoothMessage: return "SmoothMessage";
    case TapeOpKind::Add: return "Add";
    case TapeOpKind::Compat: return "Compat";
    case TapeOpKind::Subtract: return "Subtract";
    case TapeOpKind::DiceLoss: return "DiceLoss";
  }
  return "Unknown";
}

namespace {

constexpr std::uint64_t kFnvOffset = 14695981039346656037ull;
constexpr std::uint64_t kFnvPrime = 1099511628211ull;

void mix(std::uint64_t& h, std::uint64_t value) {
  for (int b = 0; b < 8; ++b) {
    h ^= (value >> (8 * b)) & 0xFFu;
    h *= kFnvPrime;
  }
}

const ClassField& field(const Tape& tape, int slot) {
  const auto* f = std::get_if<ClassField>(&tape.slots.at(static_cast<std::size_t>(slot)));
  if (!f) fail(ErrorCode::Integrity, "tape slot " + std::to_string(slot) + " does not hold a class field");
  return *f;
}

const KernelField& kernel(const Tape& tape, int slot) {
  const auto* k = std::get_if<KernelField>(&tape.slots.at(static_cast<std::size_t>(slot)));
  if (!k) fail(ErrorCode::Integrity, "tape slot " + std::to_string(slot) + " does not hold a kernel field");
  return *k;
}

ClassField add_fields(const ClassField& a, const ClassField& b) {
  ClassField out = a;
  auto o = out.data();
  const auto bv = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += bv[i];
  return out;
}

void scale_by_class(ClassField& f, const std::vector<double>& omega) {
  const auto& simd = simd::active();
  for (std::size_t l = 0; l < f.classes(); ++l) simd.scale(f.voxels(), omega[l], f.channel(l).data());
}

void scale_by_voxel(ClassField& f, const ScalarVolume& omega) {
  const auto w = omega.data();
  for (std::size_t l = 0; l < f.classes(); ++l) {
    double* c = f.channel(l).data();
    for (std::size_t i = 0; i < f.voxels(); ++i) c[i] *= w[i];
  }
}

void execute(Tape& tape, const TapeOp& op) {
  const CamParams& p = tape.params;
  auto& out = tape.slots.at(static_cast<std::size_t>(op.out));
  switch (op.kind) {
    case TapeOpKind::UnaryNet:
      out = tinynet_forward(std::get<TinyNetParams>(tape.unary), tape.target, &tape.net_cache);
      break;
    case TapeOpKind::UnaryConstant:
      out = std::get<ProbVolume>(tape.unary);
      break;
    case TapeOpKind::Softmax:
      out = softmax_channels(field(tape, op.in[0]));
      break;
    case TapeOpKind::PriorKernel:
      out = gaussian_kernel(tape.target, tape.atlas.scan, p.prior.theta, p.conn_prior, true);
      break;
    case TapeOpKind::PriorMessage: {
      ClassField filtered(tape.atlas.labels.classes(), tape.target.dims());
      filter_accumulate(kernel(tape, op.in[0]), tape.atlas.labels, filtered);
      ClassField msg = filtered;
      scale_by_voxel(msg, p.prior.omega);
      tape.slots.at(static_cast<std::size_t>(op.aux)) = std::move(filtered);
      tape.slots.at(static_cast<std::size_t>(op.out)) = std::move(msg);
      break;
    }
    case TapeOpKind::SmoothKernel:
      out = gaussian_kernel(tape.target, tape.target, p.smooth.theta, p.conn_smooth, false);
      break;
    case TapeOpKind::SmoothMessage: {
      const ClassField& q = field(tape, op.in[1]);
      ClassField filtered(q.classes(), q.dims());
      filter_accumulate(kernel(tape, op.in[0]), q, filtered);
      ClassField msg = filtered;
      scale_by_class(msg, p.smooth.omega);
      tape.slots.at(static_cast<std::size_t>(op.aux)) = std::move(filtered);
      tape.slots.at(static_cast<std::size_t>(op.out)) = std::move(msg);
      break;
    }
    case TapeOpKind::Add:
      out = add_fields(field(tape, op.in[0]), field(tape, op.in[1]));
      break;
    case TapeOpKind::Compat:
      out = compatibility_transform(field(tape, op.in[0]), op.prior_mu ? *p.mu_prior : p.mu);
      break;
    case TapeOpKind::Subtract: {
      ClassField z = field(tape, op.in[0]);
      z.set_normalized(false);
      auto zv = z.data();
      const auto e = field(tape, op.in[1]).data();
      for (std::size_t i = 0; i < zv.size(); ++i) zv[i] -= e[i];
      out = std::move(z);
      break;
    }
    case TapeOpKind::DiceLoss:
      out = dice_loss(field(tape, op.in[0]), tape.ground_truth);
      break;
  }
}

class Recorder {
 public:
  explicit Recorder(Tape& tape) : tape_(tape) {}

  int op(TapeOpKind kind, int in0 = -1, int in1 = -1, int iteration = -1, bool prior_mu = false) {
    TapeOp op;
    op.kind = kind;
    op.iteration = iteration;
    op.in = {in0, in1};
    op.prior_mu = prior_mu;
    op.out = slot();
    if (kind == TapeOpKind::PriorMessage || kind == TapeOpKind::SmoothMessage) op.aux = slot();
    tape_.ops.push_back(op);
    execute(tape_, op);
    return op.out;
  }

 private:
  int slot() {
    tape_.slots.emplace_back();
    return static_cast<int>(tape_.slots.size() - 1);
  }
  Tape& tape_;
};

void check_slot(const Tape& tape, int slot, const char* role, std::size_t op_index) {
  if (slot < 0 || static_cast<std::size_t>(slot) >= tape.slots.size()) {
    fail(ErrorCode::Integrity, "tape op " + std::to_string(op_index) + ": " + role + " slot " +
                                   std::to_string(slot) + " out of range");
  }
}

}  // namespace

const ProbVolume& Tape::q() const { return field(*this, q_slot); }

double Tape::loss() const {
  const auto* v = std::get_if<double>(&slots.at(static_cast<std::size_t>(loss_slot)));
  if (!v) fail(ErrorCode::Integrity, "tape loss slot does not hold a scalar");
  return *v;
}

std::uint64_t Tape::compute_signature() const {
  std::uint64_t h = kFnvOffset;
  mix(h, ops.size());
  for (const TapeOp& op : ops) {
    mix(h, static_cast<std::uint64_t>(op.kind));
    mix(h, static_cast<std::uint64_t>(static_cast<std::int64_t>(op.iteration)));
    mix(h, static_cast<std::uint64_t>(static_cast<std::int64_t>(op.out)));
    mix(h, static_cast<std::uint64_t>(static_cast<std::int64_t>(op.in[0])));
    mix(h, static_cast<std::uint64_t>(static_cast<std::int64_t>(op.in[1])));
    mix(h, static_cast<std::uint64_t>(static_cast<std::int64_t>(op.aux)));
    mix(h, op.prior_mu ? 1u : 0u);
  }
  mix(h, slots.size());
  for (const TapeValue& v : slots) {
    mix(h, v.index());
    if (const auto* f = std::get_if<ClassField>(&v)) {
      mix(h, f->classes());
      mix(h, f->voxels());
    } else if (const auto* k = std::get_if<KernelField>(&v)) {
      mix(h, k->offsets().size());
      mix(h, k->voxels());
    }
  }
  mix(h, static_cast<std::uint64_t>(static_cast<std::int64_t>(q_slot)));
  mix(h, static_cast<std::uint64_t>(static_cast<std::int64_t>(loss_slot)));
  return h;
}

void Tape::verify() const {
  if (ops.empty()) fail(ErrorCode::Integrity, "tape has no ops");
  for (std::size_t i = 0; i < ops.size(); ++i) {
    const TapeOp& op = ops[i];
    check_slot(*this, op.out, "output", i);
    const int inputs = [&] {
      switch (op.kind) {
        case TapeOpKind::Softmax:
        case TapeOpKind::PriorMessage:
        case TapeOpKind::Compat:
        case TapeOpKind::DiceLoss: return 1;
        case TapeOpKind::SmoothMessage:
        case TapeOpKind::Add:
        case TapeOpKind::Subtract: return 2;
        default: return 0;
      }
    }();
    for (int k = 0; k < inputs; ++k) {
      check_slot(*this, op.in[static_cast<std::size_t>(k)], "input", i);
      if (op.in[static_cast<std::size_t>(k)] >= op.out) {
        fail(ErrorCode::Integrity, "tape op " + std::to_string(i) + " reads a slot produced later");
      }
    }
    if (op.kind == TapeOpKind::PriorMessage || op.kind == TapeOpKind::SmoothMessage) check_slot(*this, op.aux, "aux", i);
    if (std::holds_alternative<std::monostate>(slots[static_cast<std::size_t>(op.out)])) {
      fail(ErrorCode::Integrity, "tape op " + std::to_string(i) + " has no recorded output");
    }
  }
  check_slot(*this, q_slot, "q", ops.size());
  check_slot(*this, loss_slot, "loss", ops.size());
  if (signature != compute_signature()) fail(ErrorCode::Integrity, "tape signature mismatch");
}

ForwardRecord forward_with_tape(const ScalarVolume& target, const AtlasPair& atlas, const ProbVolume& ground_truth,
                                const CamParams& params, const UnaryModel& unary) {
  const std::size_t k = atlas.labels.classes();
  require_same_dims(target.dims(), atlas.scan.dims(), "target vs atlas scan");
  atlas.validate();
  require_same_dims(target.dims(), ground_truth.dims(), "target vs ground truth");
  if (ground_truth.classes() != k) fail(ErrorCode::ShapeMismatch, "ground truth class count mismatch");
  params.validate(k, target.dims());
  if (const auto* fixed = std::get_if<ProbVolume>(&unary)) {
    require_same_dims(fixed->dims(), target.dims(), "unary logits vs target");
    if (fixed->classes() != k) fail(ErrorCode::ShapeMismatch, "unary logits class count mismatch");
  } else if (std::get<TinyNetParams>(unary).classes() != k) {
    fail(ErrorCode::ShapeMismatch, "TinyNet class count mismatch");
  }

  ForwardRecord rec;
  Tape& tape = rec.tape;
  tape.target = target;
  tape.atlas = atlas;
  tape.ground_truth = ground_truth;
  tape.params = params;
  tape.unary = unary;

  Recorder r(tape);
  const int u = r.op(std::holds_alternative<TinyNetParams>(unary) ? TapeOpKind::UnaryNet : TapeOpKind::UnaryConstant);
  int q = r.op(TapeOpKind::Softmax, u, -1, 0);

  if (params.enable_prior || params.enable_smooth) {
    int prior_msg = -1;
    int prior_energy = -1;
    if (params.enable_prior) {
      const int g = r.op(TapeOpKind::PriorKernel);
      prior_msg = r.op(TapeOpKind::PriorMessage, g);
      if (params.mu_prior) prior_energy = r.op(TapeOpKind::Compat, prior_msg, -1, -1, true);
    }
    const int smooth_kernel = params.enable_smooth ? r.op(TapeOpKind::SmoothKernel) : -1;
    for (int t = 1; t <= params.iters; ++t) {
      int message = (params.enable_prior && !params.mu_prior) ? prior_msg : -1;
      if (smooth_kernel >= 0) {
        const int s = r.op(TapeOpKind::SmoothMessage, smooth_kernel, q, t);
        message = message >= 0 ? r.op(TapeOpKind::Add, message, s, t) : s;
      }
      int energy = message >= 0 ? r.op(TapeOpKind::Compat, message, -1, t) : -1;
      if (prior_energy >= 0) energy = energy >= 0 ? r.op(TapeOpKind::Add, energy, prior_energy, t) : prior_energy;
      const int z = r.op(TapeOpKind::Subtract, u, energy, t);
      q = r.op(TapeOpKind::Softmax, z, -1, t);
    }
  }
  tape.q_slot = q;
  tape.loss_slot = r.op(TapeOpKind::DiceLoss, q);
  tape.signature = tape.compute_signature();

  rec.q = tape.q();
  rec.loss = tape.loss();
  return rec;
}

ProbVolume replay(const Tape& recorded) {
  recorded.verify();
  Tape tape;
  tape.target = recorded.target;
  tape.atlas = recorded.atlas;
  tape.ground_truth = recorded.ground_truth;
  tape.params = recorded.params;
  tape.unary = recorded.unary;
  tape.ops = recorded.ops;
  tape.slots.assign(recorded.slots.size(), std::monostate{});
  for (const TapeOp& op : tape.ops) execute(tape, op);
  return field(tape, recorded.q_slot);
}

Gradients Gradients::zeros_like(const CamParams& params, const Dims& dims, const UnaryModel& unary) {
  Gradients g;
  const std::size_t k = params.classes();
  g.d_mu.assign(k * k, 0.0);
  if (params.mu_prior) g.d_mu_prior.assign(k * k, 0.0);
  g.d_omega_p = ScalarVolume(dims, 0.0);
  g.d_omega_s.assign(k, 0.0);
  if (const auto* net = std::get_if<TinyNetParams>(&unary)) g.d_unary_params.assign(net->values().size(), 0.0);
  return g;
}

void Gradients::accumulate(const Gradients& other, double scale) {
  auto add = [scale](std::span<double> dst, std::span<const double> src) {
    if (dst.size() != src.size()) fail(ErrorCode::ShapeMismatch, "gradient accumulate: size mismatch");
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += scale * src[i];
  };
  add(d_mu, other.d_mu);
  add(d_mu_prior, other.d_mu_prior);
  add(d_omega_p.data(), other.d_omega_p.data());
  add(d_omega_s, other.d_omega_s);
  d_theta_p += scale * other.d_theta_p;
  d_theta_s += scale * other.d_theta_s;
  add(d_unary_params, other.d_unary_params);
}

bool Gradients::all_finite() const {
  auto finite = [](std::span<const double> v) {
    for (double x : v) {
      if (!std::isfinite(x)) return false;
    }
    return true;
  };
  return finite(d_mu) && finite(d_mu_prior) && finite(d_omega_p.data()) && finite(d_omega_s) &&
         std::isfinite(d_theta_p) && std::isfinite(d_theta_s) && finite(d_unary_params);
}

Gradients backward(const Tape& tape, double loss_scale) {
  tape.verify();
  const CamParams& p = tape.params;
  const Dims dims = tape.target.dims();
  const auto& simd = simd::active();
  Gradients g = Gradients::zeros_like(p, dims, tape.unary);

  std::vector<TapeValue> grads(tape.slots.size());
  grads[static_cast<std::size_t>(tape.loss_slot)] = loss_scale;

  auto grad_field = [&](int slot) -> ClassField& {
    auto& v = grads[static_cast<std::size_t>(slot)];
    if (std::holds_alternative<std::monostate>(v)) {
      const ClassField& like = field(tape, slot);
      v = ClassField(like.classes(), like.dims());
    }
    return std::get<ClassField>(v);
  };
  auto grad_kernel = [&](int slot) -> KernelField& {
    auto& v = grads[static_cast<std::size_t>(slot)];
    if (std::holds_alternative<std::monostate>(v)) {
      const KernelField& like = kernel(tape, slot);
      v = KernelField(like.dims(), like.offsets());
    }
    return std::get<KernelField>(v);
  };
  auto add_into = [](ClassField& dst, const ClassField& src, double sign) {
    auto d = dst.data();
    const auto s = src.data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += sign * s[i];
  };

  for (auto it = tape.ops.rbegin(); it != tape.ops.rend(); ++it) {
    const TapeOp& op = *it;
    const TapeValue& upstream = grads[static_cast<std::size_t>(op.out)];
    if (std::holds_alternative<std::monostate>(upstream)) continue;

    switch (op.kind) {
      case TapeOpKind::DiceLoss: {
        const double scale = std::get<double>(upstream);
        ProbVolume dq = dice_loss_gradient(field(tape, op.in[0]), tape.ground_truth);
        add_into(grad_field(op.in[0]), dq, scale);
        break;
      }
      case TapeOpKind::Softmax: {
        const ClassField& q = field(tape, op.out);
        const ClassField& gq = std::get<ClassField>(upstream);
        ClassField& gz = grad_field(op.in[0]);
        const std::size_t k = q.classes();
        const std::size_t n = q.voxels();
        for (std::size_t i = 0; i < n; ++i) {
          double inner = 0.0;
          for (std::size_t l = 0; l < k; ++l) inner += q.at(l, i) * gq.at(l, i);
          for (std::size_t l = 0; l < k; ++l) gz.at(l, i) += q.at(l, i) * (gq.at(l, i) - inner);
        }
        break;
      }
      case TapeOpKind::Subtract: {
        const ClassField& gz = std::get<ClassField>(upstream);
        add_into(grad_field(op.in[0]), gz, 1.0);
        add_into(grad_field(op.in[1]), gz, -1.0);
        break;
      }
      case TapeOpKind::Add: {
        const ClassField& gs = std::get<ClassField>(upstream);
        add_into(grad_field(op.in[0]), gs, 1.0);
        add_into(grad_field(op.in[1]), gs, 1.0);
        break;
      }
      case TapeOpKind::Compat: {
        const ClassField& ge = std::get<ClassField>(upstream);
        const ClassField& msg = field(tape, op.in[0]);
        const Compatibility& mu = op.prior_mu ? *p.mu_prior : p.mu;
        std::vector<double>& dmu = op.prior_mu ? g.d_mu_prior : g.d_mu;
        const std::size_t k = msg.classes();
        const std::size_t n = msg.voxels();
        ClassField& gm = grad_field(op.in[0]);
        for (std::size_t l = 0; l < k; ++l) {
          for (std::size_t m = 0; m < k; ++m) {
            dmu[l * k + m] += simd.dot(n, ge.channel(l).data(), msg.channel(m).data());
            simd.axpy(n, mu(l, m), ge.channel(l).data(), gm.channel(m).data());
          }
        }
        break;
      }
      case TapeOpKind::SmoothMessage: {
        const ClassField& gmsg = std::get<ClassField>(upstream);
        const ClassField& filtered = field(tape, op.aux);
        const std::size_t k = gmsg.classes();
        const std::size_t n = gmsg.voxels();
        ClassField gfiltered = gmsg;
        for (std::size_t l = 0; l < k; ++l) {
          g.d_omega_s[l] += simd.dot(n, gmsg.channel(l).data(), filtered.channel(l).data());
        }
        scale_by_class(gfiltered, p.smooth.omega);
        kernel_gradient_accumulate(gfiltered, field(tape, op.in[1]), grad_kernel(op.in[0]));
        filter_transpose_accumulate(kernel(tape, op.in[0]), gfiltered, grad_field(op.in[1]));
        break;
      }
      case TapeOpKind::SmoothKernel:
        g.d_theta_s += bandwidth_gradient(kernel(tape, op.out), std::get<KernelField>(upstream), tape.target,
                                          tape.target, p.smooth.theta);
        break;
      case TapeOpKind::PriorMessage: {
        const ClassField& gmsg = std::get<ClassField>(upstream);
        const ClassField& filtered = field(tape, op.aux);
        const std::size_t k = gmsg.classes();
        const std::size_t n = gmsg.voxels();
        auto domega = g.d_omega_p.data();
        for (std::size_t l = 0; l < k; ++l) {
          const double* gm = gmsg.channel(l).data();
          const double* f = filtered.channel(l).data();
          for (std::size_t i = 0; i < n; ++i) domega[i] += gm[i] * f[i];
        }
        ClassField gfiltered = gmsg;
        scale_by_voxel(gfiltered, p.prior.omega);
        kernel_gradient_accumulate(gfiltered, tape.atlas.labels, grad_kernel(op.in[0]));
        break;
      }
      case TapeOpKind::PriorKernel:
        g.d_theta_p += bandwidth_gradient(kernel(tape, op.out), std::get<KernelField>(upstream), tape.target,
                                          tape.atlas.scan, p.prior.theta);
        break;
      case TapeOpKind::UnaryNet: {
        const auto& net = std::get<TinyNetParams>(tape.unary);
        std::vector<double> dnet = tinynet_backward(net, tape.net_cache, std::get<ClassField>(upstream));
        for (std::size_t i = 0; i < dnet.size(); ++i) g.d_unary_params[i] += dnet[i];
        break;
      }
      case TapeOpKind::UnaryConstant:
        break;
    }
  }
  if (!g.all_finite()) fail(ErrorCode::Numeric, "backward produced non-finite gradients");
  return g;
}

}  // namespace atlascrf
