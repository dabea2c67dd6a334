#include "ptl/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "ptl/error.hpp"
#include "ptl/eval.hpp"
#include "ptl/nn/loss.hpp"

namespace ptl {

using nn::Tensor;

namespace {

nlohmann::json number_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

nlohmann::json schedule_json(const nn::LrSchedule& s) {
  return {{"lr_min", s.lr_min},
          {"lr_max", s.lr_max},
          {"cycle_epochs", s.cycle_epochs},
          {"max_decay", s.max_decay},
          {"cycle_growth", s.cycle_growth}};
}

nn::LrSchedule schedule_from(const nlohmann::json& j) {
  nn::LrSchedule s;
  if (!j.is_object()) return s;
  s.lr_min = j.value("lr_min", s.lr_min);
  s.lr_max = j.value("lr_max", s.lr_max);
  s.cycle_epochs = j.value("cycle_epochs", s.cycle_epochs);
  s.max_decay = j.value("max_decay", s.max_decay);
  s.cycle_growth = j.value("cycle_growth", s.cycle_growth);
  return s;
}

void sgd_step(std::vector<nn::Parameter*>& params, nn::AdamState& adam, double lr) {
  nn::adam_step(params, adam, lr);
  nn::round_to_f32(params);
  nn::zero_grads(params);
}

template <typename T>
std::vector<T> gather(std::span<const T> items, const std::vector<std::size_t>& idx) {
  std::vector<T> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(items[i]);
  return out;
}

Tensor stack_pairs(std::span<const AetPair> pairs, Tensor AetPair::*field) {
  std::vector<Tensor> parts;
  parts.reserve(pairs.size());
  for (const auto& p : pairs) parts.push_back(p.*field);
  return nn::stack(parts);
}

Tensor stack_targets(std::span<const AetPair> pairs) {
  std::vector<Tensor> parts;
  for (const auto& p : pairs) parts.push_back(p.target.tensor());
  return nn::stack(parts);
}

}  // namespace

nlohmann::json EpochMetrics::to_json() const {
  return {{"epoch", epoch},
          {"train_loss", number_or_null(train_loss)},
          {"val_loss", number_or_null(val_loss)},
          {"val_miou", number_or_null(val_miou)},
          {"lr", lr}};
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_train_val(std::size_t n, double val_fraction,
                                                                             std::uint64_t seed) {
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) throw std::invalid_argument("val_fraction must lie in [0, 1)");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(derive_seed(seed, 0x5A17));
  std::shuffle(idx.begin(), idx.end(), rng);
  std::size_t n_val = static_cast<std::size_t>(std::llround(static_cast<double>(n) * val_fraction));
  if (n > 1 && val_fraction > 0.0) n_val = std::clamp<std::size_t>(n_val, 1, n - 1);
  if (n <= 1) n_val = 0;  // a single item always trains
  std::vector<std::size_t> val(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::size_t> train(idx.begin() + static_cast<std::ptrdiff_t>(n_val), idx.end());
  std::sort(val.begin(), val.end());
  std::sort(train.begin(), train.end());
  return {train, val};
}

// ---------------------------------------------------------------- AET

void AetTrainConfig::validate() const {
  if (epochs <= 0 || steps_per_epoch <= 0 || batch_size <= 0 || val_pairs <= 0)
    throw std::invalid_argument("AetTrainConfig: epochs, steps, batch size and validation pairs must be positive");
  schedule.validate();
}

nlohmann::json AetTrainConfig::to_json() const {
  return {{"epochs", epochs},         {"steps_per_epoch", steps_per_epoch}, {"batch_size", batch_size},
          {"val_pairs", val_pairs},   {"val_fraction", val_fraction},       {"schedule", schedule_json(schedule)},
          {"seed", seed}};
}

AetTrainConfig AetTrainConfig::from_json(const nlohmann::json& j) {
  AetTrainConfig c;
  c.epochs = j.value("epochs", c.epochs);
  c.steps_per_epoch = j.value("steps_per_epoch", c.steps_per_epoch);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.val_pairs = j.value("val_pairs", c.val_pairs);
  c.val_fraction = j.value("val_fraction", c.val_fraction);
  if (j.contains("schedule")) c.schedule = schedule_from(j["schedule"]);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

double aet_validation_loss(const AetModel& model, std::span<const AetPair> pairs) {
  if (pairs.empty()) throw std::invalid_argument("aet_validation_loss: no pairs");
  AetModel m = model;
  double total = 0.0;
  constexpr std::size_t kChunk = 16;
  for (std::size_t i = 0; i < pairs.size(); i += kChunk) {
    const auto chunk = pairs.subspan(i, std::min(kChunk, pairs.size() - i));
    const Tensor pred = m.forward(stack_pairs(chunk, &AetPair::original), stack_pairs(chunk, &AetPair::transformed), false);
    total += nn::mse_loss(pred, stack_targets(chunk)).value * static_cast<double>(chunk.size());
  }
  return total / static_cast<double>(pairs.size());
}

AetTrainResult train_aet(std::span<const DatasetItem> dataset, const BackboneConfig& config, const AetTrainConfig& train,
                         const MetricsSink& sink) {
  return train_aet(dataset, AetModel(config, derive_seed(train.seed, 1)), train, sink);
}

AetTrainResult train_aet(std::span<const DatasetItem> dataset, AetModel model, const AetTrainConfig& train,
                         const MetricsSink& sink) {
  train.validate();
  std::vector<DatasetItem> usable;
  for (const auto& item : dataset)
    if (item.mask.area_fraction() > kMinMaskFraction) usable.push_back(item);
  if (usable.empty()) throw std::invalid_argument("train_aet: no image with a mask over 1% of its area");
  auto [train_idx, val_idx] = split_train_val(usable.size(), train.val_fraction, train.seed);
  if (val_idx.empty()) val_idx = train_idx;
  const auto train_items = gather<DatasetItem>(usable, train_idx);
  const auto val_items = gather<DatasetItem>(usable, val_idx);
  const int size = model.config().input_size;

  Rng val_rng(derive_seed(train.seed, 2));
  std::vector<AetPair> val_pairs;
  for (int i = 0; i < train.val_pairs; ++i) {
    const auto& item = val_items[static_cast<std::size_t>(i) % val_items.size()];
    val_pairs.push_back(make_aet_pair(item.image, item.mask, val_rng, size));
  }

  AetTrainResult result;
  result.best_val_loss = aet_validation_loss(model, val_pairs);
  result.best_epoch = 0;
  result.model = model;
  result.history.push_back({0, std::numeric_limits<double>::quiet_NaN(), result.best_val_loss,
                            std::numeric_limits<double>::quiet_NaN(), nn::lr_at(train.schedule, 0.0)});
  if (sink) sink(result.history.back());

  Rng rng(derive_seed(train.seed, 3));
  std::uniform_int_distribution<std::size_t> pick(0, train_items.size() - 1);
  auto params = model.parameters();
  nn::zero_grads(params);
  nn::AdamState adam;
  for (int epoch = 0; epoch < train.epochs; ++epoch) {
    double loss_sum = 0.0, lr = 0.0;
    for (int step = 0; step < train.steps_per_epoch; ++step) {
      std::vector<AetPair> batch;
      for (int b = 0; b < train.batch_size; ++b) {
        const auto& item = train_items[pick(rng)];
        batch.push_back(make_aet_pair(item.image, item.mask, rng, size));
      }
      const Tensor pred =
          model.forward(stack_pairs(batch, &AetPair::original), stack_pairs(batch, &AetPair::transformed), true);
      const auto loss = nn::mse_loss(pred, stack_targets(batch));
      model.backward(loss.grad);
      lr = nn::lr_at(train.schedule, epoch + static_cast<double>(step) / train.steps_per_epoch);
      sgd_step(params, adam, lr);
      loss_sum += loss.value;
    }
    const double val = aet_validation_loss(model, val_pairs);
    result.history.push_back(
        {epoch + 1, loss_sum / train.steps_per_epoch, val, std::numeric_limits<double>::quiet_NaN(), lr});
    if (sink) sink(result.history.back());
    if (val < result.best_val_loss) {
      result.best_val_loss = val;
      result.best_epoch = epoch + 1;
      result.model = model;
    }
  }
  result.model.backbone.clear();
  result.model.head.clear();
  return result;
}

// ---------------------------------------------------------------- PTC

void PtcTrainConfig::validate() const {
  if (epochs <= 0 || steps_per_epoch <= 0 || patience <= 0 || val_samples_per_class <= 0)
    throw std::invalid_argument("PtcTrainConfig: epochs, steps, patience and validation samples must be positive");
  if (batch_size <= 0 || batch_size % kNumClasses != 0)
    throw std::invalid_argument("PtcTrainConfig: batch_size must be a positive multiple of 3");
  if (focusing < 0.0 || exp_rate <= 0.0) throw std::invalid_argument("PtcTrainConfig: bad focusing or rate");
  schedule.validate();
}

nlohmann::json PtcTrainConfig::to_json() const {
  return {{"epochs", epochs},
          {"steps_per_epoch", steps_per_epoch},
          {"batch_size", batch_size},
          {"patience", patience},
          {"val_fraction", val_fraction},
          {"val_samples_per_class", val_samples_per_class},
          {"focusing", focusing},
          {"exp_rate", exp_rate},
          {"augment", augment},
          {"schedule", schedule_json(schedule)},
          {"seed", seed}};
}

PtcTrainConfig PtcTrainConfig::from_json(const nlohmann::json& j) {
  PtcTrainConfig c;
  c.epochs = j.value("epochs", c.epochs);
  c.steps_per_epoch = j.value("steps_per_epoch", c.steps_per_epoch);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.patience = j.value("patience", c.patience);
  c.val_fraction = j.value("val_fraction", c.val_fraction);
  c.val_samples_per_class = j.value("val_samples_per_class", c.val_samples_per_class);
  c.focusing = j.value("focusing", c.focusing);
  c.exp_rate = j.value("exp_rate", c.exp_rate);
  c.augment = j.value("augment", c.augment);
  if (j.contains("schedule")) c.schedule = schedule_from(j["schedule"]);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

std::vector<LabeledSample> make_ptc_validation_set(std::span<const DatasetItem> items, int per_class, int size,
                                                   std::uint64_t seed, double rate) {
  Rng rng(seed);
  std::vector<LabeledSample> out;
  for (const auto& item : items) {
    if (!item.thresholds) throw DataError("image " + item.id + " has no thresholds");
    for (int c = 0; c < kNumClasses; ++c)
      for (int k = 0; k < per_class; ++k)
        out.push_back(make_ptc_sample(item, sample_x_class(c, *item.thresholds, rng, rate), size));
  }
  return out;
}

PtcValidation ptc_validation(const PtcModel& model, std::span<const LabeledSample> samples, double focusing) {
  if (samples.empty()) throw std::invalid_argument("ptc_validation: no samples");
  PtcModel m = model;
  ConfusionMatrix confusion;
  double loss = 0.0;
  constexpr std::size_t kChunk = 16;
  for (std::size_t i = 0; i < samples.size(); i += kChunk) {
    const auto chunk = samples.subspan(i, std::min(kChunk, samples.size() - i));
    std::vector<Tensor> inputs, targets;
    for (const auto& s : chunk) {
      inputs.push_back(s.input);
      targets.push_back(std::get<ClassMask>(s.target).one_hot());
    }
    const Tensor probs = m.forward(nn::stack(inputs), false);
    loss += nn::focal_loss(probs, nn::stack(targets), focusing).value * static_cast<double>(chunk.size());
    for (std::size_t n = 0; n < chunk.size(); ++n)
      confusion.add(ClassMask::from_probabilities(probs, static_cast<int>(n)), std::get<ClassMask>(chunk[n].target));
  }
  return {loss / static_cast<double>(samples.size()), confusion.mean_iou()};
}

PtcTrainResult train_ptc(PtcModel model, std::span<const DatasetItem> dataset, const PtcTrainConfig& train,
                         const MetricsSink& sink) {
  train.validate();
  if (dataset.empty()) throw std::invalid_argument("train_ptc: empty dataset");
  for (const auto& item : dataset)
    if (!item.thresholds) throw DataError("train_ptc: image " + item.id + " has no thresholds");
  PtcTrainResult result;
  std::tie(result.train_indices, result.val_indices) = split_train_val(dataset.size(), train.val_fraction, train.seed);
  if (result.val_indices.empty()) result.val_indices = result.train_indices;
  const auto train_items = gather<DatasetItem>(dataset, result.train_indices);
  const auto val_items = gather<DatasetItem>(dataset, result.val_indices);
  const int size = model.config().input_size;
  const auto val_set =
      make_ptc_validation_set(val_items, train.val_samples_per_class, size, derive_seed(train.seed, 2), train.exp_rate);

  Rng rng(derive_seed(train.seed, 3));
  auto params = model.parameters();
  nn::zero_grads(params);
  nn::AdamState adam;
  double best_val_loss = std::numeric_limits<double>::infinity();
  int since_improvement = 0;
  for (int epoch = 0; epoch < train.epochs; ++epoch) {
    double loss_sum = 0.0, lr = 0.0;
    for (int step = 0; step < train.steps_per_epoch; ++step) {
      auto batch = make_ptc_batch(train_items, train.batch_size, rng, size, train.exp_rate);
      std::vector<Tensor> inputs, targets;
      for (auto& s : batch) {
        if (train.augment) s = augment(s, rng);
        inputs.push_back(s.input);
        targets.push_back(std::get<ClassMask>(s.target).one_hot());
      }
      const Tensor probs = model.forward(nn::stack(inputs), true);
      const auto loss = nn::focal_loss(probs, nn::stack(targets), train.focusing);
      model.backward(loss.grad);
      lr = nn::lr_at(train.schedule, epoch + static_cast<double>(step) / train.steps_per_epoch);
      sgd_step(params, adam, lr);
      loss_sum += loss.value;
    }
    const auto val = ptc_validation(model, val_set, train.focusing);
    result.history.push_back({epoch + 1, loss_sum / train.steps_per_epoch, val.loss, val.miou, lr});
    if (sink) sink(result.history.back());
    if (val.miou > result.best_val_miou) {
      result.best_val_miou = val.miou;
      result.best_epoch = epoch + 1;
      result.model = model;
    }
    if (val.loss < best_val_loss) {
      best_val_loss = val.loss;
      since_improvement = 0;
    } else if (++since_improvement >= train.patience) {
      break;
    }
  }
  result.model.backbone.clear();
  result.model.head.clear();
  result.model.dropout.clear();
  result.model.softmax.clear();
  return result;
}

}  // namespace ptl
