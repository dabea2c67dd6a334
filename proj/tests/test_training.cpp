#include <doctest.h>

#include <cmath>
#include <set>

#include "helpers.hpp"
#include "ptl/error.hpp"
#include "ptl/eval.hpp"
#include "ptl/synthetic.hpp"
#include "ptl/training.hpp"

using namespace ptl;
using nn::Tensor;

namespace {

BackboneConfig small() {
  BackboneConfig c;
  c.input_size = 16;
  c.encoder_blocks = 4;
  c.base_channels = 4;
  c.multiscale_channels = 8;
  return c;
}

std::vector<DatasetItem> scenes(int count, std::uint64_t seed, double min_r = 0.2, double max_r = 0.35) {
  SyntheticConfig c;
  c.count = count;
  c.size = 16;
  c.seed = seed;
  c.min_radius = min_r;
  c.max_radius = max_r;
  return generate_synthetic_dataset(c);
}

}  // namespace

TEST_CASE("train/validation split") {
  const auto [train, val] = split_train_val(20, 0.1, 4);
  CHECK(train.size() == 18);
  CHECK(val.size() == 2);
  std::set<std::size_t> all(train.begin(), train.end());
  all.insert(val.begin(), val.end());
  CHECK(all.size() == 20);
  CHECK(split_train_val(3, 0.01, 1).second.size() == 1);
  CHECK(split_train_val(1, 0.5, 1).second.empty());
  CHECK(split_train_val(20, 0.1, 4).second == val);
}

TEST_CASE("training configs round trip through JSON") {
  AetTrainConfig a;
  a.epochs = 3;
  a.schedule.lr_max = 5e-4;
  const auto a2 = AetTrainConfig::from_json(a.to_json());
  CHECK(a2.epochs == 3);
  CHECK(a2.schedule.lr_max == 5e-4);
  PtcTrainConfig p;
  p.batch_size = 9;
  p.augment = false;
  const auto p2 = PtcTrainConfig::from_json(p.to_json());
  CHECK(p2.batch_size == 9);
  CHECK_FALSE(p2.augment);
  p.batch_size = 10;
  CHECK_THROWS_AS(p.validate(), std::invalid_argument);
  CHECK_THROWS(AetTrainConfig::from_json({{"epochs", "many"}}));
}

TEST_CASE("AET training reduces the validation loss and learns the shift sign") {
  const auto data = scenes(40, 3);
  AetTrainConfig t;
  t.epochs = 8;
  t.steps_per_epoch = 15;
  t.batch_size = 4;
  t.val_pairs = 24;
  t.schedule.lr_max = 3e-3;
  t.schedule.lr_min = 1e-5;
  t.seed = 2;
  std::vector<EpochMetrics> seen;
  const auto r = train_aet(data, small(), t, [&](const EpochMetrics& m) { seen.push_back(m); });
  REQUIRE(seen.size() == 9);
  CHECK(seen[0].epoch == 0);
  CHECK(std::isnan(seen[1].val_miou));
  MESSAGE("untrained " << seen[0].val_loss << " best " << r.best_val_loss);
  CHECK(r.best_val_loss <= 0.5 * seen[0].val_loss);

  // Brightening and darkening the same region give predictions of opposite sign.
  const auto& item = data[0];
  const auto up = make_aet_pair(item.image, item.mask, 1.5, 16);
  const auto down = make_aet_pair(item.image, item.mask, -1.5, 16);
  const Tensor yu = r.model.predict(up.original, up.transformed);
  const Tensor yd = r.model.predict(down.original, down.transformed);
  double mu = 0.0, md = 0.0;
  int n = 0;
  for (std::size_t i = 0; i < up.target.values.size(); ++i)
    if (up.target.values[i] != 0.0) {
      mu += yu[i];
      md += yd[i];
      ++n;
    }
  CHECK(mu / n > 0.0);
  CHECK(md / n < 0.0);
}

TEST_CASE("PTC training is deterministic and keeps the best epoch") {
  const auto data = scenes(24, 5);
  PtcTrainConfig t;
  t.epochs = 4;
  t.steps_per_epoch = 3;
  t.batch_size = 6;
  t.val_fraction = 0.2;
  t.schedule.lr_max = 1e-3;
  t.seed = 8;
  const auto a = train_ptc(PtcModel(small(), 1), data, t);
  const auto b = train_ptc(PtcModel(small(), 1), data, t);
  CHECK(a.history.size() == 4);
  CHECK(a.val_indices.size() == 5);
  CHECK(a.best_epoch >= 1);
  CHECK(a.best_val_miou == b.best_val_miou);
  for (const auto& m : a.history) CHECK(m.val_miou <= a.best_val_miou + 1e-12);
  const auto sa = a.model.state(), sb = b.model.state();
  for (std::size_t i = 0; i < sa.size(); ++i) CHECK(sa[i].tensor->values()[0] == sb[i].tensor->values()[0]);
}

TEST_CASE("PTC early stopping honours patience") {
  const auto data = scenes(12, 6);
  PtcTrainConfig t;
  t.epochs = 40;
  t.steps_per_epoch = 1;
  t.batch_size = 3;
  t.patience = 2;
  t.schedule.lr_max = 0.5;  // far too high: validation loss stops improving quickly
  t.schedule.lr_min = 0.4;
  const auto r = train_ptc(PtcModel(small(), 1), data, t);
  const auto& h = r.history;
  REQUIRE(h.size() < 40);
  double best = h[0].val_loss;
  std::size_t best_at = 0;
  for (std::size_t i = 1; i < h.size(); ++i)
    if (h[i].val_loss < best) {
      best = h[i].val_loss;
      best_at = i;
    }
  CHECK(h.size() - 1 - best_at == 2);
}

TEST_CASE("PTC training needs thresholds") {
  auto data = scenes(6, 7);
  data[3].thresholds.reset();
  PtcTrainConfig t;
  t.epochs = 1;
  t.steps_per_epoch = 1;
  t.batch_size = 3;
  CHECK_THROWS_AS(train_ptc(PtcModel(small(), 1), data, t), DataError);
}

TEST_CASE("validation set is fixed and class balanced") {
  const auto data = scenes(4, 9);
  const auto a = make_ptc_validation_set(data, 2, 16, 3);
  const auto b = make_ptc_validation_set(data, 2, 16, 3);
  REQUIRE(a.size() == 4 * 3 * 2);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].x == b[i].x);
  const auto v = ptc_validation(PtcModel(small(), 1), a, 2.0);
  CHECK(v.loss > 0.0);
  CHECK((v.miou >= 0.0 && v.miou <= 1.0));
}

TEST_CASE("cross-validation trains one model per fold and pools held-out images") {
  const auto data = scenes(9, 11);
  PtcTrainConfig t;
  t.epochs = 1;
  t.steps_per_epoch = 1;
  t.batch_size = 3;
  CrossValidationSettings s;
  s.folds = 3;
  s.freeze_stage = "none";
  s.grid_points = 9;
  const auto r = cross_validate(data, small(), nullptr, s, t);
  CHECK(r.folds.size() == 3);
  CHECK(r.aggregate.images.size() == 9);
  double sum = 0.0;
  for (const auto& im : r.aggregate.images) sum += im.sq_err_neg + im.sq_err_pos;
  CHECK(r.aggregate.mse_both == doctest::Approx(sum / 18));
}
