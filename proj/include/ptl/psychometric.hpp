#pragma once

#include <span>
#include <vector>

#include "ptl/random.hpp"

namespace ptl {

/// Weibull psychometric function parameters for one stimulus direction.
///   Psi(x) = 1 - (1 - gamma) * exp(-(k x / t)^beta)
///   k      = (-ln((1 - alpha) / (1 - gamma)))^(1 / beta)
/// so that Psi(t) == alpha. Thresholds are magnitudes in stops.
struct PsychometricParams {
  double gamma = 0.5;   // guess rate
  double alpha = 0.75;  // performance level that defines the threshold
  double beta = 3.5;    // slope
  double t = 0.25;      // threshold location (stops, > 0)

  /// Throws std::invalid_argument unless 0 <= gamma < alpha < 1, beta > 0, t > 0.
  void validate() const;
};

/// One 2AFC response.
struct TrialRecord {
  double x = 0.0;  // signed stimulus magnitude in stops
  bool correct = false;
  double response_time = 0.0;  // seconds, informational only
};

struct ThresholdEstimate {
  double mean = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  int n_observers = 0;
  int n_bootstrap = 0;
};

/// Pooled thresholds for the darkening (neg) and brightening (pos) direction.
struct ThresholdPair {
  ThresholdEstimate neg;
  ThresholdEstimate pos;

  static ThresholdPair from_means(double neg, double pos);
  /// Throws std::invalid_argument unless neg.mean < 0 < pos.mean.
  void validate() const;
};

double weibull_k(const PsychometricParams& p);

/// Psi at a stimulus magnitude x >= 0.
double weibull_eval(const PsychometricParams& p, double x);

/// The magnitude x with Psi(x) == y, for gamma < y < 1.
double inverse_threshold(const PsychometricParams& p, double y);

/// Bernoulli log-likelihood of the trials under `p`, using |x|.
double log_likelihood(const PsychometricParams& p, std::span<const TrialRecord> trials);

struct FitBounds {
  double t_min = 0.01, t_max = 3.4;
  double beta_min = 0.5, beta_max = 20.0;
};

/// Maximum-likelihood (t, beta) for trials of a single direction, with gamma
/// and alpha held fixed. The returned t is a magnitude; callers reattach the
/// direction's sign. Throws UnfittableError when all responses agree and
/// std::invalid_argument for mixed signs or fewer than two distinct |x|.
PsychometricParams fit_weibull(std::span<const TrialRecord> trials, double gamma = 0.5, double alpha = 0.75,
                               const FitBounds& bounds = {});

/// Bootstrap of the mean: `n_bootstrap` resampled means; `mean` is their
/// average and the CI their 2.5 / 97.5 percentiles.
ThresholdEstimate bootstrap_mean(std::span<const double> values, int n_bootstrap, Rng& rng);

/// Keeps values within mean +/- k_sd * sd (population sd, single pass). Never
/// returns an empty list: the element nearest the mean always survives.
std::vector<double> remove_outliers(std::span<const double> values, double k_sd = 3.0);

/// Observer that answers 2AFC trials by drawing from a Weibull Psi.
class SimulatedObserver {
 public:
  explicit SimulatedObserver(PsychometricParams params) : params_(params) { params_.validate(); }
  bool respond(double x, Rng& rng) const { return uniform01(rng) < weibull_eval(params_, std::abs(x)); }
  const PsychometricParams& params() const { return params_; }

 private:
  PsychometricParams params_;
};

}  // namespace ptl
