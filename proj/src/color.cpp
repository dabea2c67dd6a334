#include "ptl/color.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace ptl {

namespace {

// IEC 61966-2-1 linear sRGB -> XYZ.
const Eigen::Matrix3d& rgb_to_xyz() {
  static const Eigen::Matrix3d m = (Eigen::Matrix3d() << 0.4124564, 0.3575761, 0.1804375,  //
                                    0.2126729, 0.7151522, 0.0721750,                       //
                                    0.0193339, 0.1191920, 0.9503041)
                                       .finished();
  return m;
}

const Eigen::Matrix3d& xyz_to_rgb() {
  static const Eigen::Matrix3d m = rgb_to_xyz().inverse();
  return m;
}

// Reference white is the image of RGB (1, 1, 1), so white maps to a = b = 0.
const Eigen::Vector3d& white() {
  static const Eigen::Vector3d w = rgb_to_xyz() * Eigen::Vector3d::Ones();
  return w;
}

constexpr double kDelta = 6.0 / 29.0;

double srgb_decode(double c) { return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4); }
double srgb_encode(double c) { return c <= 0.0031308 ? 12.92 * c : 1.055 * std::pow(c, 1.0 / 2.4) - 0.055; }

double lab_f(double t) { return t > kDelta * kDelta * kDelta ? std::cbrt(t) : t / (3 * kDelta * kDelta) + 4.0 / 29.0; }
double lab_finv(double f) { return f > kDelta ? f * f * f : 3 * kDelta * kDelta * (f - 4.0 / 29.0); }

void check_same_size(int w1, int h1, int w2, int h2, const char* what) {
  if (w1 != w2 || h1 != h2)
    throw std::invalid_argument(std::string(what) + ": dimension mismatch " + std::to_string(w1) + "x" +
                                std::to_string(h1) + " vs " + std::to_string(w2) + "x" + std::to_string(h2));
}

}  // namespace

RgbImage::RgbImage(int w, int h, double fill) : width(w), height(h), data(static_cast<std::size_t>(w) * h * 3, fill) {}

void RgbImage::validate() const {
  if (width < 0 || height < 0 || data.size() != pixels() * 3) throw std::invalid_argument("RgbImage: data size mismatch");
  for (double v : data)
    if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("RgbImage: channel value outside [0, 1]");
}

LabImage::LabImage(int w, int h)
    : width(w), height(h), L(pixels()), a(pixels()), b(pixels()) {}

BinaryMask::BinaryMask(int w, int h, std::uint8_t fill) : width(w), height(h), data(static_cast<std::size_t>(w) * h, fill) {}

std::size_t BinaryMask::area() const { return static_cast<std::size_t>(std::count(data.begin(), data.end(), 1)); }

void BinaryMask::validate() const {
  if (width < 0 || height < 0 || data.size() != pixels()) throw std::invalid_argument("BinaryMask: data size mismatch");
  for (auto v : data)
    if (v > 1) throw std::invalid_argument("BinaryMask: values must be 0 or 1");
}

Lab srgb_to_lab(double r, double g, double b) {
  const Eigen::Vector3d lin(srgb_decode(r), srgb_decode(g), srgb_decode(b));
  const Eigen::Vector3d xyz = rgb_to_xyz() * lin;
  const double fx = lab_f(xyz[0] / white()[0]);
  const double fy = lab_f(xyz[1] / white()[1]);
  const double fz = lab_f(xyz[2] / white()[2]);
  return {116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)};
}

void lab_to_srgb(const Lab& lab, double rgb[3]) {
  const double fy = (lab.L + 16.0) / 116.0;
  const double fx = fy + lab.a / 500.0;
  const double fz = fy - lab.b / 200.0;
  const Eigen::Vector3d xyz(white()[0] * lab_finv(fx), white()[1] * lab_finv(fy), white()[2] * lab_finv(fz));
  const Eigen::Vector3d lin = xyz_to_rgb() * xyz;
  for (int c = 0; c < 3; ++c) rgb[c] = std::clamp(srgb_encode(std::clamp(lin[c], 0.0, 1.0)), 0.0, 1.0);
}

LabImage srgb_to_lab(const RgbImage& img) {
  LabImage out(img.width, img.height);
  for (std::size_t i = 0; i < img.pixels(); ++i) {
    const Lab lab = srgb_to_lab(img.data[3 * i], img.data[3 * i + 1], img.data[3 * i + 2]);
    out.L[i] = lab.L;
    out.a[i] = lab.a;
    out.b[i] = lab.b;
  }
  return out;
}

RgbImage lab_to_srgb(const LabImage& img) {
  RgbImage out(img.width, img.height);
  for (std::size_t i = 0; i < img.pixels(); ++i) lab_to_srgb({img.L[i], img.a[i], img.b[i]}, &out.data[3 * i]);
  return out;
}

LabImage shift_luminance(const LabImage& img, const BinaryMask& mask, double stops) {
  check_same_size(img.width, img.height, mask.width, mask.height, "shift_luminance");
  if (!std::isfinite(stops)) throw std::invalid_argument("shift_luminance: stops must be finite");
  LabImage out = img;
  const double scale = std::exp2(stops);
  for (std::size_t i = 0; i < img.pixels(); ++i)
    if (mask.data[i]) out.L[i] = std::clamp(img.L[i] * scale, 0.0, 100.0);
  return out;
}

RgbImage apply_exposure_shift(const RgbImage& img, const BinaryMask& mask, double stops) {
  check_same_size(img.width, img.height, mask.width, mask.height, "apply_exposure_shift");
  if (!std::isfinite(stops)) throw std::invalid_argument("apply_exposure_shift: stops must be finite");
  return lab_to_srgb(shift_luminance(srgb_to_lab(img), mask, stops));
}

RgbImage resize_bilinear(const RgbImage& img, int width, int height) {
  if (width <= 0 || height <= 0) throw std::invalid_argument("resize_bilinear: target size must be positive");
  if (width == img.width && height == img.height) return img;
  if (img.width <= 0 || img.height <= 0) throw std::invalid_argument("resize_bilinear: empty source");
  RgbImage out(width, height);
  const double sx = static_cast<double>(img.width) / width;
  const double sy = static_cast<double>(img.height) / height;
  for (int y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, img.height - 1.0);
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, img.height - 1);
    const double wy = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, img.width - 1.0);
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, img.width - 1);
      const double wx = fx - x0;
      for (int c = 0; c < 3; ++c) {
        const double top = img.at(x0, y0, c) * (1 - wx) + img.at(x1, y0, c) * wx;
        const double bot = img.at(x0, y1, c) * (1 - wx) + img.at(x1, y1, c) * wx;
        out.at(x, y, c) = top * (1 - wy) + bot * wy;
      }
    }
  }
  return out;
}

BinaryMask resize_nearest(const BinaryMask& mask, int width, int height) {
  if (width <= 0 || height <= 0) throw std::invalid_argument("resize_nearest: target size must be positive");
  if (width == mask.width && height == mask.height) return mask;
  BinaryMask out(width, height);
  for (int y = 0; y < height; ++y) {
    const int sy = std::min(static_cast<int>((y + 0.5) * mask.height / height), mask.height - 1);
    for (int x = 0; x < width; ++x) {
      const int sx = std::min(static_cast<int>((x + 0.5) * mask.width / width), mask.width - 1);
      out.at(x, y) = mask.at(sx, sy);
    }
  }
  return out;
}

nn::Tensor standardize(const RgbImage& img, int size) {
  if (img.pixels() == 0) throw std::invalid_argument("standardize: empty image");
  RgbImage resized;
  const RgbImage* p = &img;
  if (size > 0 && (img.width != size || img.height != size)) {
    resized = resize_bilinear(img, size, size);
    p = &resized;
  }
  const RgbImage& im = *p;
  const int w = im.width, h = im.height;
  nn::Tensor out({1, 3, h, w});
  double mean = 0.0;
  for (double v : im.data) mean += v;
  mean /= static_cast<double>(im.data.size());
  double var = 0.0;
  for (double v : im.data) var += (v - mean) * (v - mean);
  var /= static_cast<double>(im.data.size());
  if (var <= 0.0) return out;
  const double inv = 1.0 / std::sqrt(var);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) out.at(0, c, y, x) = (im.at(x, y, c) - mean) * inv;
  return out;
}

}  // namespace ptl
