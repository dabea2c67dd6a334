#include "ptl/nn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace ptl::nn {

namespace {

std::size_t element_count(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw std::invalid_argument("negative tensor dimension in " + shape_string(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

}  // namespace

Tensor::Tensor(std::vector<int> shape, Scalar fill)
    : shape_(std::move(shape)), values_(element_count(shape_), fill) {}

Tensor::Tensor(std::vector<int> shape, std::vector<Scalar> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  if (values_.size() != element_count(shape_))
    throw std::invalid_argument("tensor value count does not match shape " + shape_string(shape_));
}

void Tensor::fill(Scalar v) { std::fill(values_.begin(), values_.end(), v); }

void Tensor::reshape(std::vector<int> shape) {
  if (element_count(shape) != values_.size())
    throw std::invalid_argument("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  shape_ = std::move(shape);
}

Tensor Tensor::sample(int n) const {
  if (rank() != 4) throw std::invalid_argument("sample() needs a rank-4 tensor");
  const std::size_t per = values_.size() / static_cast<std::size_t>(shape_[0]);
  Tensor out({1, shape_[1], shape_[2], shape_[3]});
  std::copy_n(values_.begin() + static_cast<std::ptrdiff_t>(per * n), per, out.values_.begin());
  return out;
}

bool Tensor::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](Scalar v) { return std::isfinite(v); });
}

std::string shape_string(const std::vector<int>& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (!a.same_shape(b))
    throw std::invalid_argument(std::string(what) + ": shape mismatch " + shape_string(a.shape()) +
                                " vs " + shape_string(b.shape()));
}

Tensor stack(std::span<const Tensor> items) {
  if (items.empty()) throw std::invalid_argument("stack: no tensors");
  std::vector<int> inner = items.front().shape();
  if (inner.size() == 4) {
    if (inner[0] != 1) throw std::invalid_argument("stack: rank-4 items must have batch size 1");
    inner.erase(inner.begin());
  }
  if (inner.size() != 3) throw std::invalid_argument("stack: expected CHW items");
  const std::size_t per = items.front().size();
  std::vector<int> shape{static_cast<int>(items.size()), inner[0], inner[1], inner[2]};
  Tensor out(shape);
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (items[i].size() != per) throw std::invalid_argument("stack: inconsistent item shapes");
    std::copy_n(items[i].data(), per, out.data() + i * per);
  }
  return out;
}

Tensor concat_channels(std::span<const Tensor* const> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_channels: nothing to concatenate");
  const Tensor& first = *parts.front();
  const int n = first.dim(0), h = first.dim(2), w = first.dim(3);
  int c_total = 0;
  for (const Tensor* p : parts) {
    if (p->rank() != 4 || p->dim(0) != n || p->dim(2) != h || p->dim(3) != w)
      throw std::invalid_argument("concat_channels: incompatible shape " + shape_string(p->shape()));
    c_total += p->dim(1);
  }
  Tensor out({n, c_total, h, w});
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  for (int b = 0; b < n; ++b) {
    Scalar* dst = out.plane(b, 0);
    for (const Tensor* p : parts) {
      const std::size_t count = hw * p->dim(1);
      std::copy_n(p->plane(b, 0), count, dst);
      dst += count;
    }
  }
  return out;
}

std::vector<Tensor> split_channels(const Tensor& t, std::span<const int> channels) {
  const int n = t.dim(0), h = t.dim(2), w = t.dim(3);
  if (std::accumulate(channels.begin(), channels.end(), 0) != t.dim(1))
    throw std::invalid_argument("split_channels: channel counts do not sum to " + std::to_string(t.dim(1)));
  std::vector<Tensor> out;
  out.reserve(channels.size());
  for (int c : channels) out.emplace_back(std::vector<int>{n, c, h, w});
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  for (int b = 0; b < n; ++b) {
    const Scalar* src = t.plane(b, 0);
    for (std::size_t i = 0; i < channels.size(); ++i) {
      const std::size_t count = hw * channels[i];
      std::copy_n(src, count, out[i].plane(b, 0));
      src += count;
    }
  }
  return out;
}

}  // namespace ptl::nn
