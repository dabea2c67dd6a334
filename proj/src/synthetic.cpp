#include "ptl/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "ptl/image_io.hpp"

namespace ptl {

ThresholdPair synthetic_thresholds(double texture_amplitude, double base_lightness, double jitter_neg, double jitter_pos) {
  const double texture = std::clamp(texture_amplitude / 12.0, 0.0, 1.0);
  const double dark = std::clamp((70.0 - base_lightness) / 40.0, 0.0, 1.0);
  const double neg = -(0.14 + 0.40 * texture + 0.10 * dark) + jitter_neg;
  const double pos = 0.12 + 0.38 * texture + 0.12 * dark + jitter_pos;
  return ThresholdPair::from_means(neg, pos);
}

std::vector<DatasetItem> generate_synthetic_dataset(const SyntheticConfig& config) {
  if (config.size < 8 || config.count < 0 || !(config.min_radius > 0.0) || config.max_radius < config.min_radius ||
      config.max_radius > 0.5)
    throw std::invalid_argument("generate_synthetic_dataset: bad config");
  Rng rng(config.seed);
  auto uni = [&](double a, double b) { return std::uniform_real_distribution<double>(a, b)(rng); };
  const int s = config.size;
  std::vector<DatasetItem> items;
  items.reserve(static_cast<std::size_t>(config.count));
  for (int n = 0; n < config.count; ++n) {
    const double base = uni(30.0, 70.0);
    const double amplitude = uni(1.0, 12.0);
    const double grad_x = uni(-10.0, 10.0), grad_y = uni(-10.0, 10.0);
    struct Wave {
      double fx, fy, phase, weight;
    };
    std::vector<Wave> waves(4);
    double weight_sum = 0.0;
    for (auto& w : waves) {
      const double freq = uni(1.5, 6.0), angle = uni(0.0, std::numbers::pi);
      w = {freq * std::cos(angle), freq * std::sin(angle), uni(0.0, 2 * std::numbers::pi), uni(0.5, 1.0)};
      weight_sum += w.weight;
    }
    const double bg_a = uni(-20.0, 20.0), bg_b = uni(-20.0, 20.0);
    const double obj_a = uni(-30.0, 30.0), obj_b = uni(-30.0, 30.0);
    const double cx = uni(0.3, 0.7) * s, cy = uni(0.3, 0.7) * s;
    const double rx = uni(config.min_radius, config.max_radius) * s, ry = uni(config.min_radius, config.max_radius) * s;
    const double rot = uni(0.0, std::numbers::pi);

    LabImage lab(s, s);
    BinaryMask mask(s, s);
    for (int y = 0; y < s; ++y)
      for (int x = 0; x < s; ++x) {
        const double u = (x + 0.5) / s, v = (y + 0.5) / s;
        double tex = 0.0;
        for (const auto& w : waves) tex += w.weight * std::sin(2 * std::numbers::pi * (w.fx * u + w.fy * v) + w.phase);
        const std::size_t i = static_cast<std::size_t>(y) * s + x;
        lab.L[i] = std::clamp(base + grad_x * (u - 0.5) + grad_y * (v - 0.5) + amplitude * tex / weight_sum * 2.0, 5.0, 95.0);
        const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
        const double px = dx * std::cos(rot) + dy * std::sin(rot), py = -dx * std::sin(rot) + dy * std::cos(rot);
        const bool inside = (px * px) / (rx * rx) + (py * py) / (ry * ry) <= 1.0;
        mask.data[i] = inside;
        lab.a[i] = inside ? obj_a : bg_a;
        lab.b[i] = inside ? obj_b : bg_b;
      }
    DatasetItem item;
    item.id = "syn" + std::string(4 - std::min<std::size_t>(4, std::to_string(n).size()), '0') + std::to_string(n);
    item.image = quantize_8bit(lab_to_srgb(lab));
    item.mask = std::move(mask);
    const double jn = uni(-0.03, 0.03), jp = uni(-0.03, 0.03);
    if (config.with_thresholds) item.thresholds = synthetic_thresholds(amplitude, base, jn, jp);
    items.push_back(std::move(item));
  }
  return items;
}

}  // namespace ptl
