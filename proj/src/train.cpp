#include "atlascrf/train.hpp"

#include <algorithm>
#include <numeric>

#include "atlascrf/error.hpp"
#include "atlascrf/metrics.hpp"

namespace atlascrf {
namespace {

template <class Get>
void copy_box(const Dims& full, const PatchBox& box, Get&& get) {
  for (std::size_t z = 0; z < box.size.d; ++z)
    for (std::size_t y = 0; y < box.size.h; ++y)
      for (std::size_t x = 0; x < box.size.w; ++x)
        get(box.size.index(z, y, x), full.index(box.z + z, box.y + y, box.x + x));
}

ScalarVolume add_noise(const ScalarVolume& scan, double fraction, std::mt19937_64& rng) {
  if (fraction <= 0.0) return scan;
  const auto [lo, hi] = std::minmax_element(scan.data().begin(), scan.data().end());
  const double sigma = fraction * (*hi - *lo);
  if (sigma <= 0.0) return scan;
  std::normal_distribution<double> noise(0.0, sigma);
  ScalarVolume out = scan;
  for (double& v : out.data()) v += noise(rng);
  return out;
}

}  // namespace

void Dataset::validate() const {
  if (train.empty()) fail(ErrorCode::InvalidArgument, "training set is empty");
  if (classes < 2) fail(ErrorCode::InvalidArgument, "need at least 2 classes");
  atlas.validate();
  if (atlas.labels.classes() != classes) fail(ErrorCode::ShapeMismatch, "atlas class count differs from dataset K");
  const Dims dims = atlas.scan.dims();
  for (const auto* set : {&train, &val}) {
    for (const Sample& s : *set) {
      require_same_dims(s.scan.dims(), dims, "sample scan vs atlas");
      require_same_dims(s.labels.dims(), dims, "sample labels vs atlas");
      s.labels.check_classes(classes);
    }
  }
}

CamParams stage_params(const CamParams& cam, TrainStage stage) {
  return stage == TrainStage::UnaryOnly ? ablate(cam, Potential::Both) : cam;
}

Model initial_model(std::size_t classes, const Dims& dims, std::uint64_t seed) {
  return Model{CamParams::initial(classes, dims), TinyNetParams::random(classes, seed)};
}

ProbVolume predict(const Model& model, const ScalarVolume& scan, const AtlasPair& atlas, bool use_cam) {
  CamInput input{scan, tinynet_forward(model.net, scan), atlas};
  return mean_field_infer(input, use_cam ? model.cam : ablate(model.cam, Potential::Both));
}

double validation_dice(const Model& model, const Dataset& data, bool use_cam) {
  const std::vector<Sample>& set = data.val.empty() ? data.train : data.val;
  double sum = 0.0;
  for (const Sample& s : set) {
    sum += mean_foreground_dsc(argmax_labels(predict(model, s.scan, data.atlas, use_cam)), s.labels, data.classes);
  }
  return sum / static_cast<double>(set.size());
}

PatchBox sample_patch(const Dims& full, std::size_t edge, std::mt19937_64& rng) {
  PatchBox box;
  box.size = Dims{std::min(edge, full.d), std::min(edge, full.h), std::min(edge, full.w)};
  auto origin = [&rng](std::size_t extent, std::size_t size) {
    return std::uniform_int_distribution<std::size_t>(0, extent - size)(rng);
  };
  box.z = origin(full.d, box.size.d);
  box.y = origin(full.h, box.size.h);
  box.x = origin(full.w, box.size.w);
  return box;
}

ScalarVolume crop(const ScalarVolume& v, const PatchBox& box) {
  ScalarVolume out(box.size);
  copy_box(v.dims(), box, [&](std::size_t dst, std::size_t src) { out[dst] = v[src]; });
  return out;
}

ProbVolume crop(const ProbVolume& v, const PatchBox& box) {
  ProbVolume out(v.classes(), box.size, 0.0, v.normalized());
  for (std::size_t l = 0; l < v.classes(); ++l) {
    copy_box(v.dims(), box, [&](std::size_t dst, std::size_t src) { out.at(l, dst) = v.at(l, src); });
  }
  return out;
}

LabelMap crop(const LabelMap& v, const PatchBox& box) {
  LabelMap out(box.size);
  copy_box(v.dims(), box, [&](std::size_t dst, std::size_t src) { out[dst] = v[src]; });
  return out;
}

TrainResult train(const Dataset& data, const Model& init, const TrainConfig& config, const EpochCallback& on_epoch) {
  data.validate();
  config.validate();
  const Dims dims = data.atlas.scan.dims();
  init.cam.validate(data.classes, dims);
  if (init.net.classes() != data.classes) fail(ErrorCode::ShapeMismatch, "net class count differs from dataset K");

  const bool use_cam = config.stage != TrainStage::UnaryOnly;
  const bool net_trainable = config.stage != TrainStage::SeparateCam;
  std::mt19937_64 rng(config.seed);

  TrainResult result;
  Model model = init;
  result.model = model;
  result.best_val_dice = validation_dice(model, data, use_cam);
  result.best_epoch = 0;

  std::vector<std::size_t> order(data.train.size());
  std::iota(order.begin(), order.end(), 0);
  int stale = 0;
  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t stop = std::min(order.size(), start + config.batch_size);
      const double scale = 1.0 / static_cast<double>(stop - start);
      const CamParams cam = stage_params(model.cam, config.stage);
      const UnaryModel full_unary = net_trainable ? UnaryModel(model.net) : UnaryModel(ProbVolume{});
      Gradients total = Gradients::zeros_like(cam, dims, full_unary);
      for (std::size_t b = start; b < stop; ++b) {
        const Sample& s = data.train[order[b]];
        ScalarVolume scan = add_noise(s.scan, config.noise_fraction, rng);
        LabelMap labels = s.labels;
        AtlasPair atlas = data.atlas;
        CamParams local = cam;
        std::optional<PatchBox> box;
        if (config.patch_edge > 0) {
          box = sample_patch(dims, config.patch_edge, rng);
          scan = crop(scan, *box);
          labels = crop(labels, *box);
          atlas = AtlasPair{crop(atlas.scan, *box), crop(atlas.labels, *box)};
          local.prior.omega = crop(cam.prior.omega, *box);
        }
        const UnaryModel unary = net_trainable ? UnaryModel(model.net) : UnaryModel(tinynet_forward(model.net, scan));
        const ForwardRecord rec = forward_with_tape(scan, atlas, one_hot(labels, data.classes), local, unary);
        loss_sum += rec.loss;
        Gradients g = backward(rec.tape, scale);
        if (box) {
          ScalarVolume scattered(dims, 0.0);
          copy_box(dims, *box, [&](std::size_t dst, std::size_t src) { scattered[src] = g.d_omega_p[dst]; });
          g.d_omega_p = std::move(scattered);
        }
        total.accumulate(g);
      }
      adam_step(model, total, config, result.optimizer);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(order.size());
    rec.val_dice = validation_dice(model, data, use_cam);
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (rec.val_dice > result.best_val_dice) {
      result.best_val_dice = rec.val_dice;
      result.best_epoch = epoch;
      result.model = model;
      stale = 0;
    } else if (++stale >= config.patience) {
      break;
    }
  }
  return result;
}

TwoStageResult train_two_stage(const Dataset& data, const Model& init, TrainConfig unary_config,
                               TrainConfig cam_config) {
  unary_config.stage = TrainStage::UnaryOnly;
  if (cam_config.stage == TrainStage::UnaryOnly) cam_config.stage = TrainStage::Joint;
  TwoStageResult r;
  r.unary_stage = train(data, init, unary_config);
  r.cam_stage = train(data, r.unary_stage.model, cam_config);
  return r;
}

}  // namespace atlascrf
