#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ptl/datagen.hpp"
#include "ptl/models.hpp"

namespace ptl {

struct PtcTrainConfig;

/// Soft F1 of one class channel of [N, 3, H, W] probabilities (sample n)
/// against hard labels. Zero when 2TP + FP + FN == 0.
double soft_f1(const nn::Tensor& probs, const ClassMask& target, int class_id, int n = 0);

/// Pixel confusion counts, rows = target class, columns = predicted class.
struct ConfusionMatrix {
  std::array<std::array<std::uint64_t, kNumClasses>, kNumClasses> counts{};

  void add(const ClassMask& pred, const ClassMask& target);
  /// IoU per class, or nullopt for classes absent from both.
  std::array<std::optional<double>, kNumClasses> iou() const;
  /// Mean IoU over present classes; 0 when nothing was added.
  double mean_iou() const;
};

double mean_iou(const ClassMask& pred, const ClassMask& target);

/// `points` values uniform in stops over [log2 0.1, log2 10].
std::vector<double> default_sweep_grid(int points = 67);

/// Maps a rendered stimulus (and the shift used to render it, for oracles) to
/// [1, 3, H, W] class probabilities.
using Predictor = std::function<nn::Tensor(const RgbImage& stimulus, double x)>;

Predictor ptc_predictor(const PtcModel& model);
/// One-hot ground truth at the image resolution.
Predictor oracle_predictor(const BinaryMask& mask, const ThresholdPair& thresholds);

struct SweepResult {
  std::vector<double> xs;
  std::vector<double> f1_neg, f1_pos;
  std::optional<double> boundary_neg, boundary_pos;
};

/// Renders I~_x for every grid point, predicts, and scores class 0 (x < 0)
/// and class 1 (x > 0) against the ground-truth labels for that x. The
/// boundary is the grid point closest to zero whose F1 reaches `criterion`.
/// When `confusion` is given, hardened predictions are accumulated into it.
SweepResult boundary_sweep(const Predictor& predictor, const RgbImage& image, const BinaryMask& mask,
                           const ThresholdPair& thresholds, std::span<const double> grid, double criterion = 0.1,
                           ConfusionMatrix* confusion = nullptr);

struct ImageReport {
  std::string image_id;
  std::optional<double> predicted_neg, predicted_pos;  // absent: never crossed
  double truth_neg = 0.0, truth_pos = 0.0;
  double sq_err_neg = 0.0, sq_err_pos = 0.0;  // absent boundaries scored at the grid extreme
};

/// Scores one sweep against the true thresholds.
ImageReport score_sweep(const std::string& image_id, const SweepResult& sweep, const ThresholdPair& truth);

struct EvalReport {
  std::vector<ImageReport> images;
  double mse_both = 0.0, mse_neg = 0.0, mse_pos = 0.0;
  double mean_iou = 0.0;

  /// Recomputes the aggregate MSEs from `images`.
  void aggregate();
  nlohmann::json to_json() const;
};

/// Sweeps every item (which must carry thresholds) and scores the boundaries.
EvalReport evaluate_sweeps(const Predictor& predictor, std::span<const DatasetItem> items,
                           std::span<const double> grid, double criterion = 0.1);

/// Fold id per item: a seeded shuffle dealt round-robin, so sizes differ by
/// at most one. Throws std::invalid_argument when k < 2 or n < k.
std::vector<int> assign_folds(std::size_t n, int k, std::uint64_t seed);

struct CrossValidationSettings {
  int folds = 5;
  std::string freeze_stage = "concatenate";
  std::uint64_t seed = 1;
  double criterion = 0.1;
  int grid_points = 67;
};

struct CrossValidationResult {
  std::string freeze_stage;
  std::vector<EvalReport> folds;
  EvalReport aggregate;  // all held-out images pooled
};

/// Trains one PTC per fold and scores the held-out fold. With `pretrained`
/// the PTC is built from it and frozen at settings.freeze_stage; without, a
/// randomly initialised model of `config` is trained with that freeze stage.
CrossValidationResult cross_validate(std::span<const DatasetItem> dataset, const BackboneConfig& config,
                                     const AetModel* pretrained, const CrossValidationSettings& settings,
                                     const PtcTrainConfig& train);

/// One cross-validation per freeze stage, Table-style rows.
std::vector<CrossValidationResult> freeze_sweep(std::span<const DatasetItem> dataset, const AetModel& pretrained,
                                                std::span<const std::string> stages,
                                                const CrossValidationSettings& settings, const PtcTrainConfig& train);

}  // namespace ptl
