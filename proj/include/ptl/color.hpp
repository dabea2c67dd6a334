#pragma once

#include <cstdint>
#include <vector>

#include "ptl/nn/tensor.hpp"

namespace ptl {

/// sRGB image with interleaved channels, each a real in [0, 1].
struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<double> data;  // width * height * 3, row-major, RGB interleaved

  RgbImage() = default;
  RgbImage(int w, int h, double fill = 0.0);

  std::size_t pixels() const { return static_cast<std::size_t>(width) * height; }
  double& at(int x, int y, int c) { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  double at(int x, int y, int c) const { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }

  /// Throws std::invalid_argument when sizes disagree or a channel leaves [0, 1].
  void validate() const;
};

/// CIELAB planes (D65 white).
struct LabImage {
  int width = 0;
  int height = 0;
  std::vector<double> L, a, b;

  LabImage() = default;
  LabImage(int w, int h);
  std::size_t pixels() const { return static_cast<std::size_t>(width) * height; }
};

struct BinaryMask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> data;  // 0 or 1

  BinaryMask() = default;
  BinaryMask(int w, int h, std::uint8_t fill = 0);

  std::size_t pixels() const { return static_cast<std::size_t>(width) * height; }
  std::uint8_t& at(int x, int y) { return data[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }
  std::size_t area() const;
  double area_fraction() const { return pixels() ? static_cast<double>(area()) / pixels() : 0.0; }
  void validate() const;
};

struct Lab {
  double L, a, b;
};

// Per-pixel conversions: sRGB transfer function, IEC 61966-2-1 primaries, D65.
Lab srgb_to_lab(double r, double g, double b);
/// Returns linear-light-clipped, gamma-encoded sRGB in [0, 1].
void lab_to_srgb(const Lab& lab, double rgb[3]);

LabImage srgb_to_lab(const RgbImage& img);
/// Out-of-gamut channels are clipped to [0, 1].
RgbImage lab_to_srgb(const LabImage& img);

/// Scales lightness by 2^stops inside the mask and clamps L to [0, 100].
LabImage shift_luminance(const LabImage& img, const BinaryMask& mask, double stops);

/// Local exposure shift: Lab round trip with L scaled by 2^stops where the
/// mask is set. Throws std::invalid_argument on dimension mismatch or
/// non-finite stops.
RgbImage apply_exposure_shift(const RgbImage& img, const BinaryMask& mask, double stops);

/// Bilinear resize (pixel-centre aligned).
RgbImage resize_bilinear(const RgbImage& img, int width, int height);
BinaryMask resize_nearest(const BinaryMask& mask, int width, int height);

/// Zero-mean, unit-variance tensor of shape [1, 3, size, size]; a constant
/// image maps to all zeros. `size == 0` keeps the native resolution.
nn::Tensor standardize(const RgbImage& img, int size = 0);

}  // namespace ptl
