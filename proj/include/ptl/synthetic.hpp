#pragma once

#include <cstdint>
#include <vector>

#include "ptl/datagen.hpp"

namespace ptl {

/// Procedural scenes: a textured lightness field shared by background and an
/// elliptical object that differs only in chroma, so an unshifted object has
/// no lightness edge. Each scene is assigned thresholds that grow with texture
/// contrast and shrink with brightness.
struct SyntheticConfig {
  int size = 64;
  int count = 200;
  std::uint64_t seed = 1;
  bool with_thresholds = true;
  double min_radius = 0.15;  // object semi-axes as fractions of size
  double max_radius = 0.32;
};

std::vector<DatasetItem> generate_synthetic_dataset(const SyntheticConfig& config);

/// Threshold rule used by the generator, exposed for tests.
ThresholdPair synthetic_thresholds(double texture_amplitude, double base_lightness, double jitter_neg = 0.0,
                                   double jitter_pos = 0.0);

}  // namespace ptl
