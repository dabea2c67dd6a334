#pragma once

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>

#include "ptl/nn/tensor.hpp"
#include "ptl/random.hpp"

namespace ptl::test {

inline nn::Tensor random_tensor(std::vector<int> shape, Rng& rng, double sd = 1.0) {
  nn::Tensor t(std::move(shape));
  std::normal_distribution<double> d(0.0, sd);
  for (auto& v : t.values()) v = d(rng);
  return t;
}

inline double dot(const nn::Tensor& a, const nn::Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

/// Largest relative error between an analytic gradient and central
/// differences of `loss` with respect to `x`, over at most `max_checks`
/// evenly spaced coordinates.
inline double gradient_error(nn::Tensor& x, const nn::Tensor& analytic, const std::function<double()>& loss,
                             std::size_t max_checks = 64, double h = 1e-5) {
  REQUIRE(x.size() == analytic.size());
  const std::size_t stride = std::max<std::size_t>(1, x.size() / max_checks);
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); i += stride) {
    const double saved = x[i];
    x[i] = saved + h;
    const double up = loss();
    x[i] = saved - h;
    const double down = loss();
    x[i] = saved;
    const double numeric = (up - down) / (2 * h);
    const double err = std::abs(numeric - analytic[i]) / std::max(1e-4, std::abs(numeric) + std::abs(analytic[i]));
    worst = std::max(worst, err);
  }
  return worst;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("ptl_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace ptl::test
