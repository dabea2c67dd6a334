#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace ptl::nn {

using Scalar = double;

/// Dense row-major tensor. Image batches use NCHW.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape, Scalar fill = 0);
  Tensor(std::vector<int> shape, std::vector<Scalar> values);

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  Scalar* data() { return values_.data(); }
  const Scalar* data() const { return values_.data(); }
  std::span<Scalar> values() { return values_; }
  std::span<const Scalar> values() const { return values_; }

  Scalar& operator[](std::size_t i) { return values_[i]; }
  Scalar operator[](std::size_t i) const { return values_[i]; }

  // NCHW accessors; only valid for rank-4 tensors.
  Scalar& at(int n, int c, int h, int w) { return values_[offset(n, c, h, w)]; }
  Scalar at(int n, int c, int h, int w) const { return values_[offset(n, c, h, w)]; }

  /// Pointer to the (n, c) plane of a rank-4 tensor.
  Scalar* plane(int n, int c) { return data() + offset(n, c, 0, 0); }
  const Scalar* plane(int n, int c) const { return data() + offset(n, c, 0, 0); }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  void fill(Scalar v);
  void reshape(std::vector<int> shape);

  /// Extracts sample n of a batch as a batch of one.
  Tensor sample(int n) const;

  bool all_finite() const;

 private:
  std::size_t offset(int n, int c, int h, int w) const {
    return ((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w;
  }

  std::vector<int> shape_;
  std::vector<Scalar> values_;
};

std::string shape_string(const std::vector<int>& shape);

/// Throws std::invalid_argument naming `what` if the shapes differ.
void require_same_shape(const Tensor& a, const Tensor& b, const char* what);

/// Stacks rank-4 single-sample tensors (or rank-3 CHW tensors) into a batch.
Tensor stack(std::span<const Tensor> items);

Tensor concat_channels(std::span<const Tensor* const> parts);
std::vector<Tensor> split_channels(const Tensor& t, std::span<const int> channels);

/// A trainable tensor together with its accumulated gradient.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = true;

  Parameter() = default;
  Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

  void zero_grad() { grad.fill(0); }
};

}  // namespace ptl::nn
