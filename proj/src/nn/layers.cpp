#include "ptl/nn/layers.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace ptl::nn {

namespace {

using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

void require_rank4(const Tensor& x, const char* layer) {
  if (x.rank() != 4) throw std::invalid_argument(std::string(layer) + ": expected NCHW input, got " + shape_string(x.shape()));
}

template <typename Stack>
auto pop(Stack& stack, const char* layer) {
  if (stack.empty()) throw std::logic_error(std::string(layer) + ": backward without a recorded forward pass");
  auto item = std::move(stack.back());
  stack.pop_back();
  return item;
}

// Column layout: row (c * k + ky) * k + kx, column oy * wo + ox.
void im2col(const Scalar* x, int channels, int h, int w, int k, int stride, int pad, int ho, int wo, Scalar* col) {
  for (int c = 0; c < channels; ++c) {
    const Scalar* plane = x + static_cast<std::size_t>(c) * h * w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        Scalar* row = col + (static_cast<std::size_t>(c * k + ky) * k + kx) * ho * wo;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          Scalar* dst = row + static_cast<std::size_t>(oy) * wo;
          if (iy < 0 || iy >= h) {
            std::fill_n(dst, wo, Scalar{0});
            continue;
          }
          const Scalar* src = plane + static_cast<std::size_t>(iy) * w;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            dst[ox] = (ix >= 0 && ix < w) ? src[ix] : Scalar{0};
          }
        }
      }
    }
  }
}

void col2im(const Scalar* col, int channels, int h, int w, int k, int stride, int pad, int ho, int wo, Scalar* x) {
  for (int c = 0; c < channels; ++c) {
    Scalar* plane = x + static_cast<std::size_t>(c) * h * w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const Scalar* row = col + (static_cast<std::size_t>(c * k + ky) * k + kx) * ho * wo;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          const Scalar* src = row + static_cast<std::size_t>(oy) * wo;
          Scalar* dst = plane + static_cast<std::size_t>(iy) * w;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

// ---------------------------------------------------------------- Conv2d

Conv2d::Conv2d(const std::string& name, int in_channels, int out_channels, int kernel, int stride, Rng& rng)
    : weight(name + ".weight", Tensor({out_channels, in_channels, kernel, kernel})),
      bias(name + ".bias", Tensor({out_channels})),
      in_(in_channels),
      out_(out_channels),
      k_(kernel),
      stride_(stride),
      pad_(kernel / 2) {
  if (in_channels <= 0 || out_channels <= 0 || kernel <= 0 || stride <= 0)
    throw std::invalid_argument("Conv2d " + name + ": invalid geometry");
  const double fan_in = static_cast<double>(in_channels) * kernel * kernel;
  std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / fan_in));
  for (auto& v : weight.value.values()) v = static_cast<float>(normal(rng));
}

Tensor Conv2d::forward(const Tensor& x, bool record) {
  require_rank4(x, "Conv2d");
  if (x.dim(1) != in_)
    throw std::invalid_argument("Conv2d " + weight.name + ": expected " + std::to_string(in_) + " input channels, got " +
                                std::to_string(x.dim(1)));
  const int n = x.dim(0), h = x.dim(2), w = x.dim(3);
  const int ho = output_size(h), wo = output_size(w);
  const int kk = in_ * k_ * k_;
  const int p = ho * wo;
  Tensor out({n, out_, ho, wo});
  const bool direct = (k_ == 1 && stride_ == 1);
  std::vector<Scalar> col(direct ? 0 : static_cast<std::size_t>(kk) * p);
  ConstMatrixMap wmat(weight.value.data(), out_, kk);
  Eigen::Map<const Eigen::VectorXd> b(bias.value.data(), out_);
  for (int i = 0; i < n; ++i) {
    const Scalar* src = x.plane(i, 0);
    if (!direct) {
      im2col(src, in_, h, w, k_, stride_, pad_, ho, wo, col.data());
      src = col.data();
    }
    MatrixMap o(out.plane(i, 0), out_, p);
    o.noalias() = wmat * ConstMatrixMap(src, kk, p);
    o.colwise() += b;
  }
  if (record) inputs_.push_back(x);
  return out;
}

Tensor Conv2d::backward(const Tensor& grad_out) {
  Tensor x = pop(inputs_, "Conv2d");
  const int n = x.dim(0), h = x.dim(2), w = x.dim(3);
  const int ho = output_size(h), wo = output_size(w);
  if (grad_out.rank() != 4 || grad_out.dim(0) != n || grad_out.dim(1) != out_ || grad_out.dim(2) != ho ||
      grad_out.dim(3) != wo)
    throw std::invalid_argument("Conv2d backward: gradient shape " + shape_string(grad_out.shape()));
  const int kk = in_ * k_ * k_;
  const int p = ho * wo;
  const bool direct = (k_ == 1 && stride_ == 1);
  const bool param_grad = weight.trainable;
  Tensor dx;
  if (input_grad_) dx = Tensor(x.shape());
  if (!param_grad && !input_grad_) return dx;

  std::vector<Scalar> col(direct ? 0 : static_cast<std::size_t>(kk) * p);
  std::vector<Scalar> dcol(direct ? 0 : static_cast<std::size_t>(kk) * p);
  ConstMatrixMap wmat(weight.value.data(), out_, kk);
  MatrixMap dw(weight.grad.data(), out_, kk);
  for (int i = 0; i < n; ++i) {
    ConstMatrixMap g(grad_out.plane(i, 0), out_, p);
    if (param_grad) {
      const Scalar* src = x.plane(i, 0);
      if (!direct) {
        im2col(src, in_, h, w, k_, stride_, pad_, ho, wo, col.data());
        src = col.data();
      }
      dw.noalias() += g * ConstMatrixMap(src, kk, p).transpose();
      // Plain loop: Eigen's vectorised reductions depend on the buffer's
      // alignment, which would make repeated runs differ in the last bits.
      for (int o = 0; o < out_; ++o) {
        const Scalar* row = grad_out.plane(i, o);
        Scalar s = 0;
        for (int j = 0; j < p; ++j) s += row[j];
        bias.grad[o] += s;
      }
    }
    if (input_grad_) {
      if (direct) {
        MatrixMap(dx.plane(i, 0), kk, p).noalias() = wmat.transpose() * g;
      } else {
        MatrixMap(dcol.data(), kk, p).noalias() = wmat.transpose() * g;
        col2im(dcol.data(), in_, h, w, k_, stride_, pad_, ho, wo, dx.plane(i, 0));
      }
    }
  }
  return dx;
}

// ----------------------------------------------------------- BatchNorm2d

BatchNorm2d::BatchNorm2d(const std::string& name, int channels, double momentum, double epsilon)
    : gamma(name + ".gamma", Tensor({channels}, 1.0)),
      beta(name + ".beta", Tensor({channels})),
      running_mean({channels}),
      running_var({channels}, 1.0),
      momentum_(momentum),
      epsilon_(epsilon) {}

Tensor BatchNorm2d::forward(const Tensor& x, bool training) {
  require_rank4(x, "BatchNorm2d");
  const int n = x.dim(0), c = x.dim(1);
  const std::size_t hw = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  if (c != static_cast<int>(gamma.value.size()))
    throw std::invalid_argument("BatchNorm2d " + gamma.name + ": channel mismatch");
  Tensor out(x.shape());
  if (!training) {
    for (int ch = 0; ch < c; ++ch) {
      const double inv = 1.0 / std::sqrt(running_var[ch] + epsilon_);
      const double scale = gamma.value[ch] * inv;
      const double shift = beta.value[ch] - running_mean[ch] * scale;
      for (int b = 0; b < n; ++b) {
        const Scalar* src = x.plane(b, ch);
        Scalar* dst = out.plane(b, ch);
        for (std::size_t i = 0; i < hw; ++i) dst[i] = src[i] * scale + shift;
      }
    }
    return out;
  }

  Cache cache{Tensor(x.shape()), std::vector<double>(static_cast<std::size_t>(c))};
  const double count = static_cast<double>(n) * hw;
  for (int ch = 0; ch < c; ++ch) {
    double mean = 0.0;
    for (int b = 0; b < n; ++b) {
      const Scalar* src = x.plane(b, ch);
      for (std::size_t i = 0; i < hw; ++i) mean += src[i];
    }
    mean /= count;
    double var = 0.0;
    for (int b = 0; b < n; ++b) {
      const Scalar* src = x.plane(b, ch);
      for (std::size_t i = 0; i < hw; ++i) var += (src[i] - mean) * (src[i] - mean);
    }
    var /= count;
    const double inv = 1.0 / std::sqrt(var + epsilon_);
    cache.inv_std[static_cast<std::size_t>(ch)] = inv;
    for (int b = 0; b < n; ++b) {
      const Scalar* src = x.plane(b, ch);
      Scalar* xh = cache.xhat.plane(b, ch);
      Scalar* dst = out.plane(b, ch);
      for (std::size_t i = 0; i < hw; ++i) {
        xh[i] = (src[i] - mean) * inv;
        dst[i] = gamma.value[ch] * xh[i] + beta.value[ch];
      }
    }
    // Running statistics are stored at f32 precision like the weights.
    running_mean[ch] = static_cast<float>(momentum_ * running_mean[ch] + (1.0 - momentum_) * mean);
    running_var[ch] = static_cast<float>(momentum_ * running_var[ch] + (1.0 - momentum_) * var);
  }
  caches_.push_back(std::move(cache));
  return out;
}

Tensor BatchNorm2d::backward(const Tensor& grad_out) {
  Cache cache = pop(caches_, "BatchNorm2d");
  require_same_shape(grad_out, cache.xhat, "BatchNorm2d backward");
  const int n = grad_out.dim(0), c = grad_out.dim(1);
  const std::size_t hw = static_cast<std::size_t>(grad_out.dim(2)) * grad_out.dim(3);
  const double count = static_cast<double>(n) * hw;
  Tensor dx(grad_out.shape());
  for (int ch = 0; ch < c; ++ch) {
    double sum_g = 0.0, sum_gx = 0.0;
    for (int b = 0; b < n; ++b) {
      const Scalar* g = grad_out.plane(b, ch);
      const Scalar* xh = cache.xhat.plane(b, ch);
      for (std::size_t i = 0; i < hw; ++i) {
        sum_g += g[i];
        sum_gx += g[i] * xh[i];
      }
    }
    if (gamma.trainable) {
      gamma.grad[ch] += sum_gx;
      beta.grad[ch] += sum_g;
    }
    const double scale = gamma.value[ch] * cache.inv_std[static_cast<std::size_t>(ch)] / count;
    for (int b = 0; b < n; ++b) {
      const Scalar* g = grad_out.plane(b, ch);
      const Scalar* xh = cache.xhat.plane(b, ch);
      Scalar* d = dx.plane(b, ch);
      for (std::size_t i = 0; i < hw; ++i) d[i] = scale * (count * g[i] - sum_g - xh[i] * sum_gx);
    }
  }
  return dx;
}

// ------------------------------------------------------------------ ReLU

Tensor ReLU::forward(const Tensor& x, bool record) {
  Tensor out(x.shape());
  const auto in = x.values();
  auto o = out.values();
  for (std::size_t i = 0; i < in.size(); ++i) o[i] = in[i] > 0 ? in[i] : 0;
  if (record) outputs_.push_back(out);
  return out;
}

Tensor ReLU::backward(const Tensor& grad_out) {
  Tensor y = pop(outputs_, "ReLU");
  require_same_shape(grad_out, y, "ReLU backward");
  Tensor dx(y.shape());
  for (std::size_t i = 0; i < y.size(); ++i) dx[i] = y[i] > 0 ? grad_out[i] : 0;
  return dx;
}

// ------------------------------------------------------------- MaxPool2d

Tensor MaxPool2d::forward(const Tensor& x, bool record) {
  require_rank4(x, "MaxPool2d");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int ho = h / 2, wo = w / 2;
  if (ho == 0 || wo == 0) throw std::invalid_argument("MaxPool2d: input too small " + shape_string(x.shape()));
  Tensor out({n, c, ho, wo});
  Cache cache;
  if (record) {
    cache.input_shape = x.shape();
    cache.argmax.resize(out.size());
  }
  std::size_t o = 0;
  for (int b = 0; b < n; ++b) {
    for (int ch = 0; ch < c; ++ch) {
      const Scalar* src = x.plane(b, ch);
      for (int oy = 0; oy < ho; ++oy) {
        for (int ox = 0; ox < wo; ++ox, ++o) {
          std::uint32_t best = static_cast<std::uint32_t>(2 * oy * w + 2 * ox);
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
              const auto idx = static_cast<std::uint32_t>((2 * oy + dy) * w + 2 * ox + dx);
              if (src[idx] > src[best]) best = idx;
            }
          out[o] = src[best];
          if (record) cache.argmax[o] = best;
        }
      }
    }
  }
  if (record) caches_.push_back(std::move(cache));
  return out;
}

Tensor MaxPool2d::backward(const Tensor& grad_out) {
  Cache cache = pop(caches_, "MaxPool2d");
  if (grad_out.size() != cache.argmax.size()) throw std::invalid_argument("MaxPool2d backward: gradient size mismatch");
  Tensor dx(cache.input_shape);
  const int n = dx.dim(0), c = dx.dim(1);
  const std::size_t per_plane = grad_out.size() / (static_cast<std::size_t>(n) * c);
  std::size_t o = 0;
  for (int b = 0; b < n; ++b)
    for (int ch = 0; ch < c; ++ch) {
      Scalar* dst = dx.plane(b, ch);
      for (std::size_t i = 0; i < per_plane; ++i, ++o) dst[cache.argmax[o]] += grad_out[o];
    }
  return dx;
}

// -------------------------------------------------------------- Upsample

Tensor Upsample::forward(const Tensor& x, bool record) {
  require_rank4(x, "Upsample");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int f = factor_;
  Tensor out({n, c, h * f, w * f});
  for (int b = 0; b < n; ++b)
    for (int ch = 0; ch < c; ++ch) {
      const Scalar* src = x.plane(b, ch);
      Scalar* dst = out.plane(b, ch);
      for (int y = 0; y < h * f; ++y)
        for (int xx = 0; xx < w * f; ++xx) dst[y * w * f + xx] = src[(y / f) * w + xx / f];
    }
  if (record) ++depth_;
  return out;
}

Tensor Upsample::backward(const Tensor& grad_out) {
  if (depth_ == 0) throw std::logic_error("Upsample: backward without a recorded forward pass");
  --depth_;
  require_rank4(grad_out, "Upsample backward");
  const int f = factor_;
  const int n = grad_out.dim(0), c = grad_out.dim(1), h = grad_out.dim(2) / f, w = grad_out.dim(3) / f;
  Tensor dx({n, c, h, w});
  for (int b = 0; b < n; ++b)
    for (int ch = 0; ch < c; ++ch) {
      const Scalar* src = grad_out.plane(b, ch);
      Scalar* dst = dx.plane(b, ch);
      for (int y = 0; y < h * f; ++y)
        for (int xx = 0; xx < w * f; ++xx) dst[(y / f) * w + xx / f] += src[y * w * f + xx];
    }
  return dx;
}

// -------------------------------------------------------- SpatialDropout

Tensor SpatialDropout::forward(const Tensor& x, bool training) {
  require_rank4(x, "SpatialDropout");
  if (!training || rate_ <= 0.0) {
    if (training) masks_.emplace_back(static_cast<std::size_t>(x.dim(0)) * x.dim(1), 1.0);
    return x;
  }
  const int n = x.dim(0), c = x.dim(1);
  const std::size_t hw = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  std::vector<double> mask(static_cast<std::size_t>(n) * c);
  const double keep_scale = 1.0 / (1.0 - rate_);
  for (auto& m : mask) m = uniform01(rng_) < rate_ ? 0.0 : keep_scale;
  Tensor out(x.shape());
  for (int b = 0; b < n; ++b)
    for (int ch = 0; ch < c; ++ch) {
      const double m = mask[static_cast<std::size_t>(b) * c + ch];
      const Scalar* src = x.plane(b, ch);
      Scalar* dst = out.plane(b, ch);
      for (std::size_t i = 0; i < hw; ++i) dst[i] = src[i] * m;
    }
  masks_.push_back(std::move(mask));
  return out;
}

Tensor SpatialDropout::backward(const Tensor& grad_out) {
  std::vector<double> mask = pop(masks_, "SpatialDropout");
  const int n = grad_out.dim(0), c = grad_out.dim(1);
  const std::size_t hw = static_cast<std::size_t>(grad_out.dim(2)) * grad_out.dim(3);
  Tensor dx(grad_out.shape());
  for (int b = 0; b < n; ++b)
    for (int ch = 0; ch < c; ++ch) {
      const double m = mask[static_cast<std::size_t>(b) * c + ch];
      const Scalar* src = grad_out.plane(b, ch);
      Scalar* dst = dx.plane(b, ch);
      for (std::size_t i = 0; i < hw; ++i) dst[i] = src[i] * m;
    }
  return dx;
}

// -------------------------------------------------------- ChannelSoftmax

Tensor ChannelSoftmax::forward(const Tensor& logits, bool record) {
  require_rank4(logits, "ChannelSoftmax");
  const int n = logits.dim(0), c = logits.dim(1);
  const std::size_t hw = static_cast<std::size_t>(logits.dim(2)) * logits.dim(3);
  Tensor out(logits.shape());
  for (int b = 0; b < n; ++b) {
    for (std::size_t i = 0; i < hw; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (int ch = 0; ch < c; ++ch) mx = std::max(mx, logits.plane(b, ch)[i]);
      double sum = 0.0;
      for (int ch = 0; ch < c; ++ch) {
        const double e = std::exp(logits.plane(b, ch)[i] - mx);
        out.plane(b, ch)[i] = e;
        sum += e;
      }
      for (int ch = 0; ch < c; ++ch) out.plane(b, ch)[i] /= sum;
    }
  }
  if (record) outputs_.push_back(out);
  return out;
}

Tensor ChannelSoftmax::backward(const Tensor& grad_out) {
  Tensor s = pop(outputs_, "ChannelSoftmax");
  require_same_shape(grad_out, s, "ChannelSoftmax backward");
  const int n = s.dim(0), c = s.dim(1);
  const std::size_t hw = static_cast<std::size_t>(s.dim(2)) * s.dim(3);
  Tensor dx(s.shape());
  for (int b = 0; b < n; ++b)
    for (std::size_t i = 0; i < hw; ++i) {
      double dot = 0.0;
      for (int ch = 0; ch < c; ++ch) dot += grad_out.plane(b, ch)[i] * s.plane(b, ch)[i];
      for (int ch = 0; ch < c; ++ch) dx.plane(b, ch)[i] = s.plane(b, ch)[i] * (grad_out.plane(b, ch)[i] - dot);
    }
  return dx;
}

}  // namespace ptl::nn
