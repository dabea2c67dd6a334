#include "ptl/nn/loss.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ptl::nn {

namespace {
constexpr double kProbFloor = 1e-12;

std::size_t pixel_count(const Tensor& t) {
  if (t.rank() != 4) throw std::invalid_argument("expected NCHW class probabilities");
  return static_cast<std::size_t>(t.dim(0)) * t.dim(2) * t.dim(3);
}
}  // namespace

LossResult mse_loss(const Tensor& pred, const Tensor& target) {
  require_same_shape(pred, target, "mse_loss");
  if (pred.empty()) throw std::invalid_argument("mse_loss: empty tensors");
  LossResult r{0.0, Tensor(pred.shape())};
  const double inv_n = 1.0 / static_cast<double>(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - target[i];
    r.value += d * d;
    r.grad[i] = 2.0 * d * inv_n;
  }
  r.value *= inv_n;
  return r;
}

LossResult focal_loss(const Tensor& probs, const Tensor& target, double focusing) {
  require_same_shape(probs, target, "focal_loss");
  if (focusing < 0) throw std::invalid_argument("focal_loss: focusing must be non-negative");
  const std::size_t pixels = pixel_count(probs);
  const double inv_n = 1.0 / static_cast<double>(pixels);
  LossResult r{0.0, Tensor(probs.shape())};
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double y = target[i];
    if (y == 0.0) continue;
    const double p = std::max(probs[i], kProbFloor);
    const double q = 1.0 - p;
    const double lnp = std::log(p);
    const double mod = focusing == 0.0 ? 1.0 : std::pow(q, focusing);
    r.value += -y * mod * lnp;
    // d/dp [-(1-p)^g ln p] = g (1-p)^(g-1) ln p - (1-p)^g / p
    const double dmod = focusing == 0.0 ? 0.0 : focusing * std::pow(q, focusing - 1.0);
    r.grad[i] = y * (dmod * lnp - mod / p) * inv_n;
  }
  r.value *= inv_n;
  return r;
}

double cross_entropy(const Tensor& probs, const Tensor& target) {
  require_same_shape(probs, target, "cross_entropy");
  const std::size_t pixels = pixel_count(probs);
  double total = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i)
    if (target[i] != 0.0) total -= target[i] * std::log(std::max(probs[i], kProbFloor));
  return total / static_cast<double>(pixels);
}

}  // namespace ptl::nn
