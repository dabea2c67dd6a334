#pragma once

#include <stdexcept>
#include <string>

namespace ptl {

/// Input data that cannot be processed: malformed files, missing thresholds,
/// masks that are too small, and similar.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An observer-image-direction response set that carries no information about
/// the threshold (all responses correct or all incorrect).
class UnfittableError : public DataError {
 public:
  using DataError::DataError;
};

}  // namespace ptl
