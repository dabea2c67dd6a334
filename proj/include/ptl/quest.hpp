#pragma once

#include <json.hpp>
#include <vector>

namespace ptl {

/// Bayesian adaptive staircase over a log-spaced grid of candidate threshold
/// magnitudes (stops). The state is a value; updates return a new state.
struct QuestState {
  std::vector<double> grid;           // strictly increasing candidate thresholds
  std::vector<double> log_posterior;  // unnormalised, one per grid point
  double assumed_beta = 3.5;
  double assumed_gamma = 0.5;
  double assumed_alpha = 0.75;
  int trial_count = 0;
  bool place_at_mean = false;  // classic QUEST places at the mode

  void validate() const;
};

struct QuestConfig {
  double grid_min = 0.01;
  double grid_max = 3.4;
  int grid_size = 256;
  double assumed_beta = 3.5;
  double assumed_gamma = 0.5;
  double assumed_alpha = 0.75;
  bool place_at_mean = false;
};

/// Gaussian prior over log2 of the threshold, centred on log2(prior_mean);
/// prior_sd is in log2 units. Throws std::invalid_argument for
/// prior_mean <= 0, prior_sd <= 0 or grid_size < 16.
QuestState quest_init(double prior_mean, double prior_sd, const QuestConfig& config = {});

/// Stimulus magnitude for the next trial: the posterior mode (or mean when
/// the state asks for it).
double quest_next(const QuestState& state);

/// Bayes update with the Weibull likelihood at magnitude x > 0.
QuestState quest_update(const QuestState& state, double x, bool correct);

/// Posterior-mean threshold; throws std::logic_error before the first trial.
double quest_estimate(const QuestState& state);

double quest_mode(const QuestState& state);

/// Normalised posterior probabilities.
std::vector<double> quest_posterior(const QuestState& state);

nlohmann::json quest_to_json(const QuestState& state);
QuestState quest_from_json(const nlohmann::json& j);

}  // namespace ptl
