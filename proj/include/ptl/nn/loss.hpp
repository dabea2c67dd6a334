#pragma once

#include "ptl/nn/tensor.hpp"

namespace ptl::nn {

struct LossResult {
  double value = 0.0;
  Tensor grad;  // dLoss/dInput, same shape as the prediction
};

/// Mean of squared differences over every element.
LossResult mse_loss(const Tensor& pred, const Tensor& target);

/// Focal loss on per-pixel class probabilities (NCHW, channels summing to one)
/// against a one-hot target of the same shape. Mean over pixels of
/// -(1 - p_true)^focusing * ln(p_true); p is floored at 1e-12.
LossResult focal_loss(const Tensor& probs, const Tensor& target, double focusing = 2.0);

/// Categorical cross-entropy, mean over pixels.
double cross_entropy(const Tensor& probs, const Tensor& target);

}  // namespace ptl::nn
