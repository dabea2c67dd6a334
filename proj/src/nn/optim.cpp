#include "ptl/nn/optim.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace ptl::nn {

void adam_step(std::span<Parameter* const> params, AdamState& state, double lr) {
  if (state.m.size() != params.size()) {
    if (!state.m.empty()) throw std::invalid_argument("adam_step: parameter list changed between steps");
    for (const Parameter* p : params) {
      state.m.emplace_back(p->value.shape());
      state.v.emplace_back(p->value.shape());
    }
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter& p = *params[k];
    if (!p.trainable) continue;
    require_same_shape(p.value, p.grad, "adam_step");
    Tensor& m = state.m[k];
    Tensor& v = state.v[k];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g;
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      p.value[i] -= lr * mhat / (std::sqrt(vhat) + state.epsilon);
    }
  }
}

void zero_grads(std::span<Parameter* const> params) {
  for (Parameter* p : params) p->zero_grad();
}

void round_to_f32(std::span<Parameter* const> params) {
  for (Parameter* p : params)
    for (auto& v : p->value.values()) v = static_cast<float>(v);
}

void LrSchedule::validate() const {
  if (!(lr_min > 0 && lr_min < lr_max)) throw std::invalid_argument("LrSchedule: need 0 < lr_min < lr_max");
  if (!(cycle_epochs > 0)) throw std::invalid_argument("LrSchedule: cycle_epochs must be positive");
  if (!(cycle_growth >= 1)) throw std::invalid_argument("LrSchedule: cycle_growth must be >= 1");
  if (!(max_decay > 0 && max_decay <= 1)) throw std::invalid_argument("LrSchedule: max_decay must be in (0, 1]");
}

double lr_at(const LrSchedule& s, double epoch) {
  if (epoch < 0) throw std::invalid_argument("lr_at: negative epoch");
  double start = 0.0, length = s.cycle_epochs, peak = s.lr_max;
  while (epoch >= start + length) {
    start += length;
    length *= s.cycle_growth;
    peak *= s.max_decay;
  }
  peak = std::max(peak, s.lr_min);
  const double phase = (epoch - start) / length;
  return s.lr_min + 0.5 * (peak - s.lr_min) * (1.0 + std::cos(std::numbers::pi * phase));
}

}  // namespace ptl::nn
