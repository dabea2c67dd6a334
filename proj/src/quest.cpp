#include "ptl/quest.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "ptl/psychometric.hpp"

namespace ptl {

namespace {
constexpr double kLikelihoodFloor = 1e-12;
constexpr int kMinGrid = 16;

std::vector<double> log_grid(double lo, double hi, int n) {
  std::vector<double> g(static_cast<std::size_t>(n));
  const double a = std::log(lo), b = std::log(hi);
  for (int i = 0; i < n; ++i) g[static_cast<std::size_t>(i)] = std::exp(a + (b - a) * i / (n - 1));
  g.back() = hi;
  g.front() = lo;
  return g;
}
}  // namespace

void QuestState::validate() const {
  if (grid.size() < 2 || grid.size() != log_posterior.size()) throw std::invalid_argument("QuestState: grid/posterior size");
  for (std::size_t i = 1; i < grid.size(); ++i)
    if (!(grid[i] > grid[i - 1])) throw std::invalid_argument("QuestState: grid must be strictly increasing");
  for (double v : log_posterior)
    if (!std::isfinite(v)) throw std::invalid_argument("QuestState: non-finite posterior");
  if (trial_count < 0) throw std::invalid_argument("QuestState: negative trial count");
  PsychometricParams{assumed_gamma, assumed_alpha, assumed_beta, 1.0}.validate();
}

QuestState quest_init(double prior_mean, double prior_sd, const QuestConfig& config) {
  if (!(prior_sd > 0) || !std::isfinite(prior_sd)) throw std::invalid_argument("quest_init: prior_sd must be positive");
  if (!(prior_mean > 0) || !std::isfinite(prior_mean))
    throw std::invalid_argument("quest_init: prior_mean must be positive");
  if (config.grid_size < kMinGrid) throw std::invalid_argument("quest_init: grid_size must be at least 16");
  if (!(config.grid_min > 0 && config.grid_max > config.grid_min)) throw std::invalid_argument("quest_init: bad grid bounds");
  QuestState s;
  s.grid = log_grid(config.grid_min, config.grid_max, config.grid_size);
  s.log_posterior.resize(s.grid.size());
  for (std::size_t i = 0; i < s.grid.size(); ++i) {
    const double z = (std::log2(s.grid[i]) - std::log2(prior_mean)) / prior_sd;
    s.log_posterior[i] = -0.5 * z * z;
  }
  s.assumed_beta = config.assumed_beta;
  s.assumed_gamma = config.assumed_gamma;
  s.assumed_alpha = config.assumed_alpha;
  s.place_at_mean = config.place_at_mean;
  s.validate();
  return s;
}

double quest_mode(const QuestState& state) {
  const auto it = std::max_element(state.log_posterior.begin(), state.log_posterior.end());
  return state.grid[static_cast<std::size_t>(it - state.log_posterior.begin())];
}

std::vector<double> quest_posterior(const QuestState& state) {
  const double mx = *std::max_element(state.log_posterior.begin(), state.log_posterior.end());
  std::vector<double> p(state.log_posterior.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) sum += (p[i] = std::exp(state.log_posterior[i] - mx));
  for (auto& v : p) v /= sum;
  return p;
}

double quest_next(const QuestState& state) {
  if (!state.place_at_mean) return quest_mode(state);
  const auto p = quest_posterior(state);
  double mean = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) mean += p[i] * state.grid[i];
  return mean;
}

QuestState quest_update(const QuestState& state, double x, bool correct) {
  if (!(x > 0) || !std::isfinite(x)) throw std::invalid_argument("quest_update: x must be a positive magnitude");
  QuestState next = state;
  PsychometricParams p{state.assumed_gamma, state.assumed_alpha, state.assumed_beta, 1.0};
  for (std::size_t i = 0; i < next.grid.size(); ++i) {
    p.t = next.grid[i];
    const double psi = weibull_eval(p, x);
    next.log_posterior[i] += std::log(std::max(correct ? psi : 1.0 - psi, kLikelihoodFloor));
  }
  ++next.trial_count;
  return next;
}

double quest_estimate(const QuestState& state) {
  if (state.trial_count < 1) throw std::logic_error("quest_estimate: no trials recorded");
  const auto p = quest_posterior(state);
  double mean = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) mean += p[i] * state.grid[i];
  return mean;
}

nlohmann::json quest_to_json(const QuestState& s) {
  return {{"grid_min", s.grid.front()},
          {"grid_max", s.grid.back()},
          {"grid_size", s.grid.size()},
          {"log_posterior", s.log_posterior},
          {"assumed_beta", s.assumed_beta},
          {"assumed_gamma", s.assumed_gamma},
          {"assumed_alpha", s.assumed_alpha},
          {"place_at_mean", s.place_at_mean},
          {"trial_count", s.trial_count}};
}

QuestState quest_from_json(const nlohmann::json& j) {
  QuestState s;
  s.grid = log_grid(j.at("grid_min").get<double>(), j.at("grid_max").get<double>(), j.at("grid_size").get<int>());
  s.log_posterior = j.at("log_posterior").get<std::vector<double>>();
  s.assumed_beta = j.at("assumed_beta").get<double>();
  s.assumed_gamma = j.at("assumed_gamma").get<double>();
  s.assumed_alpha = j.at("assumed_alpha").get<double>();
  s.place_at_mean = j.value("place_at_mean", false);
  s.trial_count = j.at("trial_count").get<int>();
  s.validate();
  return s;
}

}  // namespace ptl
