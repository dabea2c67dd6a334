#include "ptl/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "ptl/error.hpp"

namespace ptl {

ClassMask::ClassMask(int w, int h, ShiftClass fill)
    : width(w), height(h), labels(static_cast<std::size_t>(w) * h, static_cast<std::uint8_t>(fill)) {}

nn::Tensor ClassMask::one_hot() const {
  nn::Tensor t({1, kNumClasses, height, width});
  const std::size_t hw = pixels();
  for (std::size_t i = 0; i < hw; ++i) t.data()[labels[i] * hw + i] = 1.0;
  return t;
}

ClassMask ClassMask::from_probabilities(const nn::Tensor& probs, int n) {
  if (probs.rank() != 4 || probs.dim(1) != kNumClasses) throw std::invalid_argument("ClassMask: expected [N, 3, H, W]");
  ClassMask m(probs.dim(3), probs.dim(2));
  const std::size_t hw = m.pixels();
  const double* p0 = probs.plane(n, 0);
  for (std::size_t i = 0; i < hw; ++i) {
    int best = 0;
    for (int c = 1; c < kNumClasses; ++c)
      if (p0[c * hw + i] > p0[static_cast<std::size_t>(best) * hw + i]) best = c;
    m.labels[i] = static_cast<std::uint8_t>(best);
  }
  return m;
}

nn::Tensor AetTarget::tensor() const { return nn::Tensor({1, 1, height, width}, values); }

double sample_x_aet(Rng& rng) {
  std::uniform_real_distribution<double> u(kMinStops, kMaxStops);
  double x;
  do x = u(rng);
  while (x <= kMinStops);  // open interval
  return x;
}

double sample_x_class(ShiftClass c, const ThresholdPair& thresholds, Rng& rng, double rate) {
  thresholds.validate();
  const double lo = thresholds.neg.mean, hi = thresholds.pos.mean;
  if (!(lo > kMinStops && hi < kMaxStops)) throw std::invalid_argument("sample_x_class: thresholds outside the sampling range");
  if (!(rate > 0)) throw std::invalid_argument("sample_x_class: rate must be positive");
  if (c == ShiftClass::None) return std::uniform_real_distribution<double>(lo, hi)(rng);

  // Truncated exponential distance from the threshold, inverse-CDF sampled.
  const double span = c == ShiftClass::Negative ? lo - kMinStops : kMaxStops - hi;
  const double mass = -std::expm1(-rate * span);
  for (;;) {
    const double u = uniform01(rng);
    const double d = -std::log1p(-u * mass) / rate;
    if (!(d > 0.0 && d < span)) continue;
    const double x = c == ShiftClass::Negative ? lo - d : hi + d;
    if (x > kMinStops && x < kMaxStops && (c == ShiftClass::Negative ? x < lo : x > hi)) return x;
  }
}

double sample_x_class(int class_id, const ThresholdPair& thresholds, Rng& rng, double rate) {
  if (class_id < 0 || class_id >= kNumClasses) throw std::invalid_argument("sample_x_class: unknown class " + std::to_string(class_id));
  return sample_x_class(static_cast<ShiftClass>(class_id), thresholds, rng, rate);
}

ClassMask make_class_mask(const BinaryMask& mask, double x, const ThresholdPair& thresholds) {
  thresholds.validate();
  ShiftClass inside = ShiftClass::None;
  if (x < thresholds.neg.mean)
    inside = ShiftClass::Negative;
  else if (x > thresholds.pos.mean)
    inside = ShiftClass::Positive;
  ClassMask out(mask.width, mask.height);
  for (std::size_t i = 0; i < mask.pixels(); ++i)
    if (mask.data[i]) out.labels[i] = static_cast<std::uint8_t>(inside);
  return out;
}

AetPair make_aet_pair(const RgbImage& img, const BinaryMask& mask, double x, int size) {
  if (mask.area_fraction() <= kMinMaskFraction) throw DataError("make_aet_pair: mask covers 1% of the image or less");
  AetPair pair;
  pair.x = x;
  pair.original = standardize(img, size);
  pair.transformed = standardize(apply_exposure_shift(img, mask, x), size);
  const BinaryMask m = resize_nearest(mask, pair.original.dim(3), pair.original.dim(2));
  pair.target = {m.width, m.height, std::vector<double>(m.pixels())};
  for (std::size_t i = 0; i < m.pixels(); ++i) pair.target.values[i] = m.data[i] ? x : 0.0;
  return pair;
}

AetPair make_aet_pair(const RgbImage& img, const BinaryMask& mask, Rng& rng, int size) {
  return make_aet_pair(img, mask, sample_x_aet(rng), size);
}

const BinaryMask& choose_mask(std::span<const BinaryMask> masks, Rng& rng) {
  std::vector<std::size_t> valid;
  for (std::size_t i = 0; i < masks.size(); ++i)
    if (masks[i].area_fraction() > kMinMaskFraction) valid.push_back(i);
  if (valid.empty()) throw DataError("choose_mask: no mask covers more than 1% of the image");
  return masks[valid[std::uniform_int_distribution<std::size_t>(0, valid.size() - 1)(rng)]];
}

LabeledSample make_ptc_sample(const DatasetItem& item, double x, int size) {
  if (!item.thresholds) throw DataError("image " + item.id + " has no thresholds");
  LabeledSample s;
  s.input = standardize(apply_exposure_shift(item.image, item.mask, x), size);
  const BinaryMask m = resize_nearest(item.mask, s.input.dim(3), s.input.dim(2));
  s.target = make_class_mask(m, x, *item.thresholds);
  s.x = x;
  s.image_id = item.id;
  return s;
}

std::vector<LabeledSample> make_ptc_batch(std::span<const DatasetItem> items, int batch_size, Rng& rng, int size,
                                          double rate) {
  if (batch_size <= 0 || batch_size % kNumClasses != 0)
    throw std::invalid_argument("make_ptc_batch: batch_size must be a positive multiple of 3");
  if (items.empty()) throw DataError("make_ptc_batch: no images");
  std::uniform_int_distribution<std::size_t> pick(0, items.size() - 1);
  std::vector<LabeledSample> batch;
  batch.reserve(static_cast<std::size_t>(batch_size));
  for (int b = 0; b < batch_size / kNumClasses; ++b) {
    const DatasetItem& item = items[pick(rng)];
    if (!item.thresholds) throw DataError("image " + item.id + " has no thresholds");
    for (int c = 0; c < kNumClasses; ++c)
      batch.push_back(make_ptc_sample(item, sample_x_class(c, *item.thresholds, rng, rate), size));
  }
  return batch;
}

AugmentPlan draw_augmentation(Rng& rng) {
  AugmentPlan plan;
  plan.flip_horizontal = coin(rng);
  plan.flip_vertical = coin(rng);
  plan.zoom = coin(rng);
  plan.zoom_factor = std::uniform_real_distribution<double>(1.1, 1.5)(rng);
  plan.crop_x = uniform01(rng);
  plan.crop_y = uniform01(rng);
  if (!plan.zoom) plan.zoom_factor = 1.0;
  return plan;
}

namespace {

// Maps an output pixel index to a continuous source coordinate.
struct Axis {
  int size;
  bool flip;
  double factor;
  double offset;  // crop origin in zoomed pixels

  double source(int i) const {
    const double zoomed = offset + i + 0.5;
    double s = zoomed / factor - 0.5;
    if (flip) s = (size - 1) - s;
    return s;
  }
  int nearest(int i) const { return std::clamp(static_cast<int>(std::lround(source(i))), 0, size - 1); }
};

template <typename Get, typename Set>
void resample_bilinear(const Axis& ax, const Axis& ay, Get get, Set set) {
  for (int y = 0; y < ay.size; ++y) {
    const double sy = std::clamp(ay.source(y), 0.0, ay.size - 1.0);
    const int y0 = static_cast<int>(sy), y1 = std::min(y0 + 1, ay.size - 1);
    const double wy = sy - y0;
    for (int x = 0; x < ax.size; ++x) {
      const double sx = std::clamp(ax.source(x), 0.0, ax.size - 1.0);
      const int x0 = static_cast<int>(sx), x1 = std::min(x0 + 1, ax.size - 1);
      const double wx = sx - x0;
      set(x, y, (get(x0, y0) * (1 - wx) + get(x1, y0) * wx) * (1 - wy) + (get(x0, y1) * (1 - wx) + get(x1, y1) * wx) * wy);
    }
  }
}

}  // namespace

LabeledSample apply_augmentation(const LabeledSample& sample, const AugmentPlan& plan) {
  const int h = sample.input.dim(2), w = sample.input.dim(3);
  const double f = plan.zoom ? plan.zoom_factor : 1.0;
  const double slack_x = w * f - w, slack_y = h * f - h;
  const Axis ax{w, plan.flip_horizontal, f, std::floor(plan.crop_x * slack_x)};
  const Axis ay{h, plan.flip_vertical, f, std::floor(plan.crop_y * slack_y)};

  LabeledSample out = sample;
  const bool exact = !plan.zoom;  // pure flips permute pixels
  for (int c = 0; c < sample.input.dim(1); ++c) {
    const double* src = sample.input.plane(0, c);
    double* dst = out.input.plane(0, c);
    if (exact) {
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) dst[y * w + x] = src[ay.nearest(y) * w + ax.nearest(x)];
    } else {
      resample_bilinear(ax, ay, [&](int x, int y) { return src[y * w + x]; }, [&](int x, int y, double v) { dst[y * w + x] = v; });
    }
  }
  std::visit(
      [&](auto& target) {
        using T = std::decay_t<decltype(target)>;
        if constexpr (std::is_same_v<T, ClassMask>) {
          const ClassMask& in = std::get<ClassMask>(sample.target);
          for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
              target.labels[static_cast<std::size_t>(y) * w + x] = in.labels[static_cast<std::size_t>(ay.nearest(y)) * w + ax.nearest(x)];
        } else {
          const AetTarget& in = std::get<AetTarget>(sample.target);
          for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
              target.values[static_cast<std::size_t>(y) * w + x] = in.values[static_cast<std::size_t>(ay.nearest(y)) * w + ax.nearest(x)];
        }
      },
      out.target);
  return out;
}

LabeledSample augment(const LabeledSample& sample, Rng& rng) { return apply_augmentation(sample, draw_augmentation(rng)); }

}  // namespace ptl
