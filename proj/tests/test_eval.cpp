#include <doctest.h>

#include <set>

#include "helpers.hpp"
#include "ptl/eval.hpp"
#include "ptl/synthetic.hpp"

using namespace ptl;
using nn::Tensor;

TEST_CASE("soft F1 on hard and soft predictions") {
  ClassMask target(2, 2, ShiftClass::None);
  target.labels = {1, 1, 2, 2};
  CHECK(soft_f1(target.one_hot(), target, 1) == doctest::Approx(1.0));
  CHECK(soft_f1(target.one_hot(), target, 0) == 0.0);  // absent everywhere
  Tensor uniform({1, 3, 2, 2}, 1.0 / 3.0);
  // tp = 2/3, fp = 2/3, fn = 4/3 -> 2tp / (2tp + fp + fn) = (4/3) / (10/3)
  CHECK(soft_f1(uniform, target, 1) == doctest::Approx(0.4));
  CHECK_THROWS(soft_f1(Tensor({1, 3, 3, 3}), target, 1));
}

TEST_CASE("confusion matrix mean IoU") {
  ClassMask pred(2, 2), target(2, 2);
  target.labels = {0, 0, 2, 2};
  pred.labels = {0, 2, 2, 2};
  const ConfusionMatrix m = [&] {
    ConfusionMatrix c;
    c.add(pred, target);
    return c;
  }();
  const auto iou = m.iou();
  CHECK(*iou[0] == doctest::Approx(0.5));
  CHECK(*iou[2] == doctest::Approx(2.0 / 3.0));
  CHECK_FALSE(iou[1]);
  CHECK(m.mean_iou() == doctest::Approx((0.5 + 2.0 / 3.0) / 2));
  CHECK(mean_iou(target, target) == 1.0);
}

TEST_CASE("sweep grid spans 0.1x to 10x in stops") {
  const auto g = default_sweep_grid();
  CHECK(g.size() == 67);
  CHECK(g.front() == doctest::Approx(std::log2(0.1)));
  CHECK(g.back() == doctest::Approx(std::log2(10.0)));
}

TEST_CASE("oracle sweep recovers thresholds to grid resolution") {
  SyntheticConfig c;
  c.count = 5;
  c.size = 16;
  const auto items = generate_synthetic_dataset(c);
  const auto grid = default_sweep_grid();
  const double step = grid[1] - grid[0];
  for (const auto& item : items) {
    const auto sweep = boundary_sweep(oracle_predictor(item.mask, *item.thresholds), item.image, item.mask,
                                      *item.thresholds, grid);
    REQUIRE(sweep.boundary_neg);
    REQUIRE(sweep.boundary_pos);
    CHECK(std::abs(*sweep.boundary_neg - item.thresholds->neg.mean) <= step);
    CHECK(std::abs(*sweep.boundary_pos - item.thresholds->pos.mean) <= step);
  }
}

TEST_CASE("absent boundaries are scored at the grid extremes") {
  SyntheticConfig c;
  c.count = 1;
  c.size = 16;
  const auto items = generate_synthetic_dataset(c);
  const Predictor none_everywhere = [](const RgbImage& img, double) {
    Tensor t({1, 3, img.height, img.width});
    for (int i = 0; i < img.height * img.width; ++i) t.plane(0, 2)[i] = 1.0;
    return t;
  };
  const auto grid = default_sweep_grid();
  const auto r = evaluate_sweeps(none_everywhere, items, grid);
  REQUIRE(r.images.size() == 1);
  CHECK_FALSE(r.images[0].predicted_neg);
  const double dn = grid.front() - items[0].thresholds->neg.mean;
  const double dp = grid.back() - items[0].thresholds->pos.mean;
  CHECK(r.mse_neg == doctest::Approx(dn * dn));
  CHECK(r.mse_pos == doctest::Approx(dp * dp));
  CHECK(r.mse_both == doctest::Approx((dn * dn + dp * dp) / 2));
  CHECK(r.to_json()["images"][0]["predicted_neg"].is_null());
}

TEST_CASE("folds partition the data evenly") {
  const auto f = assign_folds(23, 5, 3);
  std::vector<int> sizes(5);
  for (int v : f) ++sizes[v];
  for (int s : sizes) CHECK((s == 4 || s == 5));
  CHECK(assign_folds(23, 5, 3) == f);
  CHECK(assign_folds(23, 5, 4) != f);
  CHECK_THROWS(assign_folds(3, 5, 1));
  CHECK_THROWS(assign_folds(10, 1, 1));
}
