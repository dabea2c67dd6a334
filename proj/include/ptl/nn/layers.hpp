#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ptl/nn/tensor.hpp"
#include "ptl/random.hpp"

// Layer zoo for the toy networks. Every layer is a copyable value with an
// explicit forward/backward pair. A forward pass with `record == true` pushes
// the activations needed for the gradient onto a per-layer stack and the next
// backward() pops them, so a layer may be applied several times (shared
// weights) as long as the backward calls come in reverse order.

namespace ptl::nn {

class Conv2d {
 public:
  Conv2d() = default;
  /// Square kernel, "same" padding (kernel / 2), He-normal weights, zero bias.
  Conv2d(const std::string& name, int in_channels, int out_channels, int kernel, int stride, Rng& rng);

  Tensor forward(const Tensor& x, bool record);
  /// Accumulates parameter gradients (when trainable) and returns dL/dx, or an
  /// empty tensor when input gradients are disabled.
  Tensor backward(const Tensor& grad_out);

  void set_input_grad(bool enabled) { input_grad_ = enabled; }
  void clear() { inputs_.clear(); }
  int in_channels() const { return in_; }
  int out_channels() const { return out_; }
  int kernel() const { return k_; }
  int stride() const { return stride_; }
  int output_size(int input) const { return (input + 2 * pad_ - k_) / stride_ + 1; }

  Parameter weight;  // [out, in, k, k]
  Parameter bias;    // [out]

 private:
  int in_ = 0, out_ = 0, k_ = 1, stride_ = 1, pad_ = 0;
  bool input_grad_ = true;
  std::vector<Tensor> inputs_;
};

class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  BatchNorm2d(const std::string& name, int channels, double momentum = 0.99, double epsilon = 1e-3);

  /// `training` selects batch statistics (and records for backward); otherwise
  /// the running averages are used.
  Tensor forward(const Tensor& x, bool training);
  Tensor backward(const Tensor& grad_out);
  void clear() { caches_.clear(); }

  Parameter gamma, beta;
  Tensor running_mean, running_var;

 private:
  struct Cache {
    Tensor xhat;
    std::vector<double> inv_std;
  };
  double momentum_ = 0.99, epsilon_ = 1e-3;
  std::vector<Cache> caches_;
};

class ReLU {
 public:
  Tensor forward(const Tensor& x, bool record);
  Tensor backward(const Tensor& grad_out);
  void clear() { outputs_.clear(); }

 private:
  std::vector<Tensor> outputs_;
};

/// 2x2 max pooling with stride 2; odd trailing rows/columns are dropped.
class MaxPool2d {
 public:
  Tensor forward(const Tensor& x, bool record);
  Tensor backward(const Tensor& grad_out);
  void clear() { caches_.clear(); }

 private:
  struct Cache {
    std::vector<int> input_shape;
    std::vector<std::uint32_t> argmax;
  };
  std::vector<Cache> caches_;
};

/// Nearest-neighbour upsampling by an integer factor.
class Upsample {
 public:
  explicit Upsample(int factor = 2) : factor_(factor) {}
  Tensor forward(const Tensor& x, bool record);
  Tensor backward(const Tensor& grad_out);
  void clear() { depth_ = 0; }
  int factor() const { return factor_; }

 private:
  int factor_;
  int depth_ = 0;
};

/// Drops whole feature maps with probability `rate` during training and
/// rescales survivors by 1 / (1 - rate); identity at inference.
class SpatialDropout {
 public:
  SpatialDropout() = default;
  SpatialDropout(double rate, std::uint64_t seed) : rate_(rate), rng_(seed) {}

  Tensor forward(const Tensor& x, bool training);
  Tensor backward(const Tensor& grad_out);
  void clear() { masks_.clear(); }
  double rate() const { return rate_; }

 private:
  double rate_ = 0.0;
  Rng rng_;
  std::vector<std::vector<double>> masks_;  // per (n, c) scale
};

/// Softmax across channels, independently at every pixel.
class ChannelSoftmax {
 public:
  Tensor forward(const Tensor& logits, bool record);
  Tensor backward(const Tensor& grad_out);
  void clear() { outputs_.clear(); }

 private:
  std::vector<Tensor> outputs_;
};

}  // namespace ptl::nn
