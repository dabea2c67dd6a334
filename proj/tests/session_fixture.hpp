#pragma once

#include "ptl/session.hpp"
#include "ptl/synthetic.hpp"

namespace ptl::test {

inline ImageLibrary small_library(int count = 4) {
  SyntheticConfig c;
  c.count = count;
  c.size = 16;
  c.seed = 21;
  return ImageLibrary(generate_synthetic_dataset(c));
}

inline SessionConfig small_session_config() {
  SessionConfig c;
  c.images_per_session = 2;
  c.trials_per_direction = 6;
  c.calibration_trials = 4;
  return c;
}

}  // namespace ptl::test
