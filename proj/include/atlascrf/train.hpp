#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "atlascrf/adam.hpp"
#include "atlascrf/volume.hpp"

namespace atlascrf {

struct Sample {
  ScalarVolume scan;
  LabelMap labels;
};

/// Training and validation subjects sharing one fixed atlas on their grid.
struct Dataset {
  std::size_t classes = 0;
  AtlasPair atlas;
  std::vector<Sample> train;
  std::vector<Sample> val;

  void validate() const;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_dice = 0.0;
};

struct TrainResult {
  Model model;  // parameters of the best validation epoch
  AdamState optimizer;
  std::vector<EpochRecord> history;
  int best_epoch = 0;
  double best_val_dice = 0.0;
};

/// CRF parameters used for prediction: unary_only training evaluates with
/// both potentials switched off.
CamParams stage_params(const CamParams& cam, TrainStage stage);

/// Model with Potts compatibility, initial weights and He-initialized net.
Model initial_model(std::size_t classes, const Dims& dims, std::uint64_t seed);

/// Q for one scan; use_cam=false returns softmax of the net's logits.
ProbVolume predict(const Model& model, const ScalarVolume& scan, const AtlasPair& atlas, bool use_cam);

/// Mean foreground validation DSC of argmax predictions.
double validation_dice(const Model& model, const Dataset& data, bool use_cam);

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Seeded shuffle, noise augmentation, optional patch crops, Adam, and early
/// stopping on validation DSC (training DSC when there is no validation set).
TrainResult train(const Dataset& data, const Model& init, const TrainConfig& config,
                  const EpochCallback& on_epoch = {});

struct TwoStageResult {
  TrainResult unary_stage;
  TrainResult cam_stage;
};

/// Stage 1 trains the net alone; stage 2 starts from its best model.
TwoStageResult train_two_stage(const Dataset& data, const Model& init, TrainConfig unary_config,
                               TrainConfig cam_config);

/// Origin of a random crop of edge `edge` (clipped per axis) inside `full`.
struct PatchBox {
  std::size_t z = 0, y = 0, x = 0;
  Dims size;
};
PatchBox sample_patch(const Dims& full, std::size_t edge, std::mt19937_64& rng);

ScalarVolume crop(const ScalarVolume& v, const PatchBox& box);
ProbVolume crop(const ProbVolume& v, const PatchBox& box);
LabelMap crop(const LabelMap& v, const PatchBox& box);

}  // namespace atlascrf
