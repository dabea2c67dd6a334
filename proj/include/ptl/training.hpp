#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include <json.hpp>

#include "ptl/datagen.hpp"
#include "ptl/models.hpp"
#include "ptl/nn/optim.hpp"

namespace ptl {

/// One line of the training log.
struct EpochMetrics {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_miou = std::numeric_limits<double>::quiet_NaN();  // NaN for the AET
  double lr = 0.0;

  nlohmann::json to_json() const;
};

using MetricsSink = std::function<void(const EpochMetrics&)>;

/// Deterministic split of indices [0, n) into (train, validation). The
/// validation part holds round(n * fraction) items, at least one when n > 1.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_train_val(std::size_t n, double val_fraction,
                                                                             std::uint64_t seed);

struct AetTrainConfig {
  int epochs = 20;
  int steps_per_epoch = 50;
  int batch_size = 8;
  int val_pairs = 64;  // fixed validation pairs drawn from the held-out images
  double val_fraction = 0.1;
  nn::LrSchedule schedule;
  std::uint64_t seed = 1;

  void validate() const;
  nlohmann::json to_json() const;
  static AetTrainConfig from_json(const nlohmann::json& j);
};

struct AetTrainResult {
  AetModel model;  // lowest validation loss
  std::vector<EpochMetrics> history;
  int best_epoch = -1;
  double best_val_loss = std::numeric_limits<double>::infinity();
};

/// Validation MSE of `model` over pairs (reentrant).
double aet_validation_loss(const AetModel& model, std::span<const AetPair> pairs);

/// Trains on randomly drawn (image, mask, x) pairs: x log-uniform over
/// (0.1, 10) in scale, masks over 1% of the image. Throws std::invalid_argument
/// for an empty dataset.
AetTrainResult train_aet(std::span<const DatasetItem> dataset, const BackboneConfig& config, const AetTrainConfig& train,
                         const MetricsSink& sink = {});
/// Same, continuing from an existing model.
AetTrainResult train_aet(std::span<const DatasetItem> dataset, AetModel model, const AetTrainConfig& train,
                         const MetricsSink& sink = {});

struct PtcTrainConfig {
  int epochs = 100;
  int steps_per_epoch = 10;
  int batch_size = 12;  // multiple of 3
  int patience = 40;    // epochs without validation-loss improvement
  double val_fraction = 0.1;
  int val_samples_per_class = 1;  // per validation image
  double focusing = 2.0;
  double exp_rate = 2.0;  // per stop, suprathreshold sampling
  bool augment = true;
  nn::LrSchedule schedule;
  std::uint64_t seed = 1;

  void validate() const;
  nlohmann::json to_json() const;
  static PtcTrainConfig from_json(const nlohmann::json& j);
};

struct PtcTrainResult {
  PtcModel model;  // highest validation mean IoU
  std::vector<EpochMetrics> history;
  int best_epoch = -1;
  double best_val_miou = -1.0;
  std::vector<std::size_t> train_indices, val_indices;
};

struct PtcValidation {
  double loss = 0.0;
  double miou = 0.0;
};

/// Focal loss and mean IoU of `model` over fixed samples (reentrant).
PtcValidation ptc_validation(const PtcModel& model, std::span<const LabeledSample> samples, double focusing);

/// Fixed validation samples: for every item and class, one seeded x.
std::vector<LabeledSample> make_ptc_validation_set(std::span<const DatasetItem> items, int per_class, int size,
                                                   std::uint64_t seed, double rate = 2.0);

/// Fine-tunes `model` with focal loss on class-balanced, augmented batches
/// and early stopping. Throws DataError when an item lacks thresholds.
PtcTrainResult train_ptc(PtcModel model, std::span<const DatasetItem> dataset, const PtcTrainConfig& train,
                         const MetricsSink& sink = {});

}  // namespace ptl
