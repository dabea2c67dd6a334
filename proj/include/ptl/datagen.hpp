#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "ptl/color.hpp"
#include "ptl/nn/tensor.hpp"
#include "ptl/psychometric.hpp"
#include "ptl/random.hpp"

namespace ptl {

enum class ShiftClass : std::uint8_t { Negative = 0, Positive = 1, None = 2 };
inline constexpr int kNumClasses = 3;

/// Exposure range sampled for training, (log2 0.1, log2 10) stops.
inline const double kMinStops = std::log2(0.1);
inline const double kMaxStops = std::log2(10.0);

/// Per-pixel class labels; one_hot() yields the 3-plane target.
struct ClassMask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> labels;  // values in {0, 1, 2}

  ClassMask() = default;
  ClassMask(int w, int h, ShiftClass fill = ShiftClass::None);

  std::size_t pixels() const { return labels.size(); }
  std::uint8_t at(int x, int y) const { return labels[static_cast<std::size_t>(y) * width + x]; }
  /// [1, 3, height, width] one-hot tensor.
  nn::Tensor one_hot() const;
  static ClassMask from_probabilities(const nn::Tensor& probs, int n = 0);
};

/// AET regression target Y = x * M, in stops.
struct AetTarget {
  int width = 0;
  int height = 0;
  std::vector<double> values;

  /// [1, 1, height, width]
  nn::Tensor tensor() const;
};

struct LabeledSample {
  nn::Tensor input;  // [1, 3, H, W], standardised
  std::variant<ClassMask, AetTarget> target;
  double x = 0.0;
  std::string image_id;
};

/// One dataset record: the image, its object mask and, when known, the
/// pooled perceptual thresholds.
struct DatasetItem {
  std::string id;
  RgbImage image;
  BinaryMask mask;
  std::optional<ThresholdPair> thresholds;
};

inline constexpr double kMinMaskFraction = 0.01;

/// Uniform in stops over (log2 0.1, log2 10), i.e. log-uniform in scale.
double sample_x_aet(Rng& rng);

/// Class-conditional exposure sampling. The suprathreshold classes use a
/// truncated exponential (rate per stop) anchored at the class threshold; the
/// in-between class is uniform in stops on [x_t-, x_t+].
double sample_x_class(ShiftClass c, const ThresholdPair& thresholds, Rng& rng, double rate = 2.0);
double sample_x_class(int class_id, const ThresholdPair& thresholds, Rng& rng, double rate = 2.0);

/// Pixel classes for a shift x: inside the mask, x < x_t- is Negative and
/// x > x_t+ is Positive; every other pixel is None.
ClassMask make_class_mask(const BinaryMask& mask, double x, const ThresholdPair& thresholds);

struct AetPair {
  nn::Tensor original;     // [1, 3, S, S]
  nn::Tensor transformed;  // [1, 3, S, S]
  AetTarget target;        // S x S
  double x = 0.0;
};

/// Builds an AET input pair and Y = x M at the model resolution `size`.
/// Throws DataError if the mask covers no more than 1% of the image.
AetPair make_aet_pair(const RgbImage& img, const BinaryMask& mask, double x, int size);
AetPair make_aet_pair(const RgbImage& img, const BinaryMask& mask, Rng& rng, int size);

/// Picks uniformly among masks larger than 1% of the image; DataError if none.
const BinaryMask& choose_mask(std::span<const BinaryMask> masks, Rng& rng);

/// A single PTC sample for a given exposure.
LabeledSample make_ptc_sample(const DatasetItem& item, double x, int size);

/// Class-balanced PTC batch: batch_size / 3 base images are drawn and each is
/// transformed once per class. Throws std::invalid_argument when batch_size is
/// not a positive multiple of 3 and DataError when an item lacks thresholds.
std::vector<LabeledSample> make_ptc_batch(std::span<const DatasetItem> items, int batch_size, Rng& rng, int size,
                                          double rate = 2.0);

struct AugmentPlan {
  bool flip_horizontal = false;
  bool flip_vertical = false;
  bool zoom = false;
  double zoom_factor = 1.0;  // in [1.1, 1.5] when zoom is set
  double crop_x = 0.0;       // crop window origin as a fraction of the slack, [0, 1]
  double crop_y = 0.0;
};

AugmentPlan draw_augmentation(Rng& rng);

/// Geometric augmentation, applied identically to input and target; bilinear
/// for the input, nearest-neighbour for labels.
LabeledSample apply_augmentation(const LabeledSample& sample, const AugmentPlan& plan);
LabeledSample augment(const LabeledSample& sample, Rng& rng);

}  // namespace ptl
