#include "ptl/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "ptl/error.hpp"
#include "ptl/training.hpp"

namespace ptl {

using nn::Tensor;

double soft_f1(const Tensor& probs, const ClassMask& target, int class_id, int n) {
  if (probs.rank() != 4 || probs.dim(1) != kNumClasses || probs.dim(2) != target.height || probs.dim(3) != target.width)
    throw std::invalid_argument("soft_f1: probabilities " + nn::shape_string(probs.shape()) + " do not match a " +
                                std::to_string(target.width) + "x" + std::to_string(target.height) + " mask");
  if (class_id < 0 || class_id >= kNumClasses) throw std::invalid_argument("soft_f1: bad class id");
  const double* p = probs.plane(n, class_id);
  double tp = 0.0, fp = 0.0, fn = 0.0;
  for (std::size_t i = 0; i < target.pixels(); ++i) {
    const double y = target.labels[i] == class_id ? 1.0 : 0.0;
    tp += p[i] * y;
    fp += p[i] * (1.0 - y);
    fn += (1.0 - p[i]) * y;
  }
  const double denom = 2.0 * tp + fp + fn;
  return denom > 0.0 ? 2.0 * tp / denom : 0.0;
}

void ConfusionMatrix::add(const ClassMask& pred, const ClassMask& target) {
  if (pred.width != target.width || pred.height != target.height)
    throw std::invalid_argument("ConfusionMatrix: mask sizes differ");
  for (std::size_t i = 0; i < pred.pixels(); ++i) ++counts[target.labels[i]][pred.labels[i]];
}

std::array<std::optional<double>, kNumClasses> ConfusionMatrix::iou() const {
  std::array<std::optional<double>, kNumClasses> out;
  for (int c = 0; c < kNumClasses; ++c) {
    std::uint64_t row = 0, col = 0;
    for (int k = 0; k < kNumClasses; ++k) {
      row += counts[c][k];
      col += counts[k][c];
    }
    const std::uint64_t inter = counts[c][c];
    const std::uint64_t uni = row + col - inter;
    if (uni > 0) out[c] = static_cast<double>(inter) / static_cast<double>(uni);
  }
  return out;
}

double ConfusionMatrix::mean_iou() const {
  double sum = 0.0;
  int present = 0;
  for (const auto& v : iou())
    if (v) {
      sum += *v;
      ++present;
    }
  return present ? sum / present : 0.0;
}

double mean_iou(const ClassMask& pred, const ClassMask& target) {
  ConfusionMatrix m;
  m.add(pred, target);
  return m.mean_iou();
}

std::vector<double> default_sweep_grid(int points) {
  if (points < 2) throw std::invalid_argument("sweep grid needs at least two points");
  std::vector<double> xs(static_cast<std::size_t>(points));
  for (int i = 0; i < points; ++i) xs[i] = kMinStops + (kMaxStops - kMinStops) * i / (points - 1);
  return xs;
}

Predictor ptc_predictor(const PtcModel& model) {
  return [&model](const RgbImage& stimulus, double) {
    return model.predict(standardize(stimulus, model.config().input_size));
  };
}

Predictor oracle_predictor(const BinaryMask& mask, const ThresholdPair& thresholds) {
  return [mask, thresholds](const RgbImage&, double x) { return make_class_mask(mask, x, thresholds).one_hot(); };
}

SweepResult boundary_sweep(const Predictor& predictor, const RgbImage& image, const BinaryMask& mask,
                           const ThresholdPair& thresholds, std::span<const double> grid, double criterion,
                           ConfusionMatrix* confusion) {
  if (grid.empty()) throw std::invalid_argument("boundary_sweep: empty grid");
  for (std::size_t i = 1; i < grid.size(); ++i)
    if (!(grid[i] > grid[i - 1])) throw std::invalid_argument("boundary_sweep: grid must be strictly increasing");
  SweepResult r;
  r.xs.assign(grid.begin(), grid.end());
  BinaryMask scaled;
  for (double x : grid) {
    const Tensor probs = predictor(apply_exposure_shift(image, mask, x), x);
    if (scaled.width != probs.dim(3) || scaled.height != probs.dim(2)) scaled = resize_nearest(mask, probs.dim(3), probs.dim(2));
    const ClassMask target = make_class_mask(scaled, x, thresholds);
    r.f1_neg.push_back(soft_f1(probs, target, static_cast<int>(ShiftClass::Negative)));
    r.f1_pos.push_back(soft_f1(probs, target, static_cast<int>(ShiftClass::Positive)));
    if (confusion) confusion->add(ClassMask::from_probabilities(probs), target);
  }
  for (std::size_t i = r.xs.size(); i-- > 0;)
    if (r.xs[i] < 0.0 && r.f1_neg[i] >= criterion) {
      r.boundary_neg = r.xs[i];
      break;
    }
  for (std::size_t i = 0; i < r.xs.size(); ++i)
    if (r.xs[i] > 0.0 && r.f1_pos[i] >= criterion) {
      r.boundary_pos = r.xs[i];
      break;
    }
  return r;
}

ImageReport score_sweep(const std::string& image_id, const SweepResult& sweep, const ThresholdPair& truth) {
  if (sweep.xs.empty()) throw std::invalid_argument("score_sweep: empty sweep");
  ImageReport r;
  r.image_id = image_id;
  r.predicted_neg = sweep.boundary_neg;
  r.predicted_pos = sweep.boundary_pos;
  r.truth_neg = truth.neg.mean;
  r.truth_pos = truth.pos.mean;
  const double neg = sweep.boundary_neg.value_or(sweep.xs.front());
  const double pos = sweep.boundary_pos.value_or(sweep.xs.back());
  r.sq_err_neg = (neg - truth.neg.mean) * (neg - truth.neg.mean);
  r.sq_err_pos = (pos - truth.pos.mean) * (pos - truth.pos.mean);
  return r;
}

void EvalReport::aggregate() {
  mse_neg = mse_pos = mse_both = 0.0;
  if (images.empty()) return;
  for (const auto& im : images) {
    mse_neg += im.sq_err_neg;
    mse_pos += im.sq_err_pos;
  }
  const double n = static_cast<double>(images.size());
  mse_both = (mse_neg + mse_pos) / (2.0 * n);
  mse_neg /= n;
  mse_pos /= n;
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  for (const auto& im : images)
    rows.push_back({{"image_id", im.image_id},
                    {"predicted_neg", opt(im.predicted_neg)},
                    {"predicted_pos", opt(im.predicted_pos)},
                    {"truth_neg", im.truth_neg},
                    {"truth_pos", im.truth_pos},
                    {"sq_err_neg", im.sq_err_neg},
                    {"sq_err_pos", im.sq_err_pos}});
  return {{"mse_both", mse_both}, {"mse_neg", mse_neg}, {"mse_pos", mse_pos}, {"mean_iou", mean_iou}, {"images", rows}};
}

EvalReport evaluate_sweeps(const Predictor& predictor, std::span<const DatasetItem> items, std::span<const double> grid,
                           double criterion) {
  if (grid.empty()) throw std::invalid_argument("evaluate_sweeps: empty grid");
  EvalReport report;
  ConfusionMatrix confusion;
  for (const auto& item : items) {
    if (!item.thresholds) throw DataError("image " + item.id + " has no thresholds");
    const auto& t = *item.thresholds;
    const auto sweep = boundary_sweep(predictor, item.image, item.mask, t, grid, criterion, &confusion);
    auto r = score_sweep(item.id, sweep, t);
    report.images.push_back(std::move(r));
  }
  report.aggregate();
  report.mean_iou = confusion.mean_iou();
  return report;
}

std::vector<int> assign_folds(std::size_t n, int k, std::uint64_t seed) {
  if (k < 2) throw std::invalid_argument("assign_folds: need at least two folds");
  if (n < static_cast<std::size_t>(k)) throw std::invalid_argument("assign_folds: fewer items than folds");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(seed, 0xF01D));
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<int> fold(n);
  for (std::size_t i = 0; i < n; ++i) fold[order[i]] = static_cast<int>(i % static_cast<std::size_t>(k));
  return fold;
}

CrossValidationResult cross_validate(std::span<const DatasetItem> dataset, const BackboneConfig& config,
                                     const AetModel* pretrained, const CrossValidationSettings& settings,
                                     const PtcTrainConfig& train) {
  const auto fold = assign_folds(dataset.size(), settings.folds, settings.seed);
  const auto grid = default_sweep_grid(settings.grid_points);
  CrossValidationResult result;
  result.freeze_stage = settings.freeze_stage;
  for (int f = 0; f < settings.folds; ++f) {
    std::vector<DatasetItem> train_items, test_items;
    for (std::size_t i = 0; i < dataset.size(); ++i) (fold[i] == f ? test_items : train_items).push_back(dataset[i]);
    const std::uint64_t fold_seed = derive_seed(settings.seed, static_cast<std::uint64_t>(f) + 1);
    PtcModel model;
    if (pretrained) {
      model = build_ptc_from_aet(*pretrained, settings.freeze_stage, fold_seed);
    } else {
      model = PtcModel(config, fold_seed);
      model.set_freeze(FreezeStage::parse(settings.freeze_stage, config));
    }
    PtcTrainConfig fold_train = train;
    fold_train.seed = derive_seed(train.seed, static_cast<std::uint64_t>(f) + 1);
    const auto trained = train_ptc(std::move(model), train_items, fold_train);
    auto report = evaluate_sweeps(ptc_predictor(trained.model), test_items, grid, settings.criterion);
    result.aggregate.images.insert(result.aggregate.images.end(), report.images.begin(), report.images.end());
    result.folds.push_back(std::move(report));
  }
  result.aggregate.aggregate();
  double iou = 0.0;
  for (const auto& r : result.folds) iou += r.mean_iou;
  result.aggregate.mean_iou = iou / static_cast<double>(result.folds.size());
  return result;
}

std::vector<CrossValidationResult> freeze_sweep(std::span<const DatasetItem> dataset, const AetModel& pretrained,
                                                std::span<const std::string> stages,
                                                const CrossValidationSettings& settings, const PtcTrainConfig& train) {
  std::vector<CrossValidationResult> rows;
  for (const auto& stage : stages) {
    auto s = settings;
    s.freeze_stage = stage;
    rows.push_back(cross_validate(dataset, pretrained.config(), &pretrained, s, train));
  }
  return rows;
}

}  // namespace ptl
