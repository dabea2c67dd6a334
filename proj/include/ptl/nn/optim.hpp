#pragma once

#include <span>
#include <vector>

#include "ptl/nn/tensor.hpp"

namespace ptl::nn {

struct AdamState {
  long step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::vector<Tensor> m, v;  // one pair per parameter, created on first step
};

/// One bias-corrected Adam update of every trainable parameter. Frozen
/// parameters are skipped but keep their moment slots.
void adam_step(std::span<Parameter* const> params, AdamState& state, double lr);

void zero_grads(std::span<Parameter* const> params);

/// Rounds parameter values to f32 so a checkpoint reload is exact.
void round_to_f32(std::span<Parameter* const> params);

/// Cosine annealing with warm restarts. Each cycle starts at its maximum and
/// anneals to lr_min; afterwards the maximum shrinks by max_decay and the
/// cycle grows by cycle_growth.
struct LrSchedule {
  double lr_min = 1e-6;
  double lr_max = 1e-4;
  double cycle_epochs = 5.0;
  double max_decay = 0.9;
  double cycle_growth = 1.5;

  void validate() const;
};

/// Learning rate at a (fractional) epoch.
double lr_at(const LrSchedule& schedule, double epoch);

}  // namespace ptl::nn
