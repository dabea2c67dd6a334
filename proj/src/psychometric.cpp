#include "ptl/psychometric.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <set>
#include <stdexcept>

#include "ptl/error.hpp"

namespace ptl {

namespace {

constexpr double kProbFloor = 1e-12;

// Nelder-Mead on two variables inside a box; points are clamped to the box.
template <typename F>
std::array<double, 2> nelder_mead_box(F&& objective, std::array<double, 2> start, std::array<double, 2> step,
                                      std::array<double, 2> lo, std::array<double, 2> hi, int max_iter = 400) {
  using Point = std::array<double, 2>;
  auto clamp = [&](Point p) {
    for (int i = 0; i < 2; ++i) p[i] = std::clamp(p[i], lo[i], hi[i]);
    return p;
  };
  std::array<Point, 3> s{clamp(start), clamp({start[0] + step[0], start[1]}), clamp({start[0], start[1] + step[1]})};
  std::array<double, 3> f{objective(s[0]), objective(s[1]), objective(s[2])};
  for (int iter = 0; iter < max_iter; ++iter) {
    std::array<int, 3> order{0, 1, 2};
    std::sort(order.begin(), order.end(), [&](int a, int b) { return f[a] < f[b]; });
    const Point best = s[order[0]], mid = s[order[1]], worst = s[order[2]];
    const double fb = f[order[0]], fm = f[order[1]], fw = f[order[2]];
    if (std::abs(fw - fb) < 1e-12 && std::abs(worst[0] - best[0]) < 1e-10 && std::abs(worst[1] - best[1]) < 1e-10)
      break;
    const Point centroid{(best[0] + mid[0]) / 2, (best[1] + mid[1]) / 2};
    auto along = [&](double c) { return clamp({centroid[0] + c * (worst[0] - centroid[0]), centroid[1] + c * (worst[1] - centroid[1])}); };
    Point next = along(-1.0);
    double fn = objective(next);
    if (fn < fb) {
      const Point exp = along(-2.0);
      const double fe = objective(exp);
      if (fe < fn) {
        next = exp;
        fn = fe;
      }
    } else if (fn >= fm) {
      const Point con = along(fn < fw ? -0.5 : 0.5);
      const double fc = objective(con);
      if (fc < std::min(fn, fw)) {
        next = con;
        fn = fc;
      } else {
        // Shrink toward the best vertex.
        for (int k : {order[1], order[2]}) {
          s[k] = clamp({best[0] + 0.5 * (s[k][0] - best[0]), best[1] + 0.5 * (s[k][1] - best[1])});
          f[k] = objective(s[k]);
        }
        continue;
      }
    }
    s[order[2]] = next;
    f[order[2]] = fn;
  }
  const auto it = std::min_element(f.begin(), f.end());
  return s[static_cast<std::size_t>(it - f.begin())];
}

double percentile(std::vector<double> sorted, double q) {
  // Linear interpolation between closest ranks.
  if (sorted.size() == 1) return sorted.front();
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

}  // namespace

void PsychometricParams::validate() const {
  if (!(gamma >= 0.0 && gamma < alpha && alpha < 1.0))
    throw std::invalid_argument("PsychometricParams: need 0 <= gamma < alpha < 1");
  if (!(beta > 0.0) || !std::isfinite(beta)) throw std::invalid_argument("PsychometricParams: beta must be positive");
  if (!(t > 0.0) || !std::isfinite(t)) throw std::invalid_argument("PsychometricParams: t must be positive");
}

ThresholdPair ThresholdPair::from_means(double neg, double pos) {
  ThresholdPair p;
  p.neg = {neg, neg, neg, 1, 1};
  p.pos = {pos, pos, pos, 1, 1};
  return p;
}

void ThresholdPair::validate() const {
  if (!(neg.mean < 0.0 && 0.0 < pos.mean)) throw std::invalid_argument("ThresholdPair: need neg < 0 < pos");
}

double weibull_k(const PsychometricParams& p) {
  p.validate();
  return std::pow(-std::log((1.0 - p.alpha) / (1.0 - p.gamma)), 1.0 / p.beta);
}

double weibull_eval(const PsychometricParams& p, double x) {
  if (x < 0.0) throw std::invalid_argument("weibull_eval: x must be a non-negative magnitude");
  const double k = weibull_k(p);
  return 1.0 - (1.0 - p.gamma) * std::exp(-std::pow(k * x / p.t, p.beta));
}

double inverse_threshold(const PsychometricParams& p, double y) {
  if (!(y > p.gamma && y < 1.0)) throw std::invalid_argument("inverse_threshold: y must lie in (gamma, 1)");
  const double k = weibull_k(p);
  return p.t / k * std::pow(-std::log((1.0 - y) / (1.0 - p.gamma)), 1.0 / p.beta);
}

double log_likelihood(const PsychometricParams& p, std::span<const TrialRecord> trials) {
  const double k = weibull_k(p);
  double ll = 0.0;
  for (const auto& tr : trials) {
    const double tail = std::exp(-std::pow(k * std::abs(tr.x) / p.t, p.beta));
    const double psi = 1.0 - (1.0 - p.gamma) * tail;
    ll += tr.correct ? std::log(std::max(psi, kProbFloor)) : std::log(std::max((1.0 - p.gamma) * tail, kProbFloor));
  }
  return ll;
}

PsychometricParams fit_weibull(std::span<const TrialRecord> trials, double gamma, double alpha, const FitBounds& bounds) {
  PsychometricParams base{gamma, alpha, 1.0, 1.0};
  base.validate();
  if (trials.size() < 2) throw std::invalid_argument("fit_weibull: need at least two trials");
  const bool any_pos = std::any_of(trials.begin(), trials.end(), [](const auto& t) { return t.x > 0; });
  const bool any_neg = std::any_of(trials.begin(), trials.end(), [](const auto& t) { return t.x < 0; });
  if (any_pos && any_neg) throw std::invalid_argument("fit_weibull: trials mix both directions");
  std::set<double> levels;
  for (const auto& t : trials) {
    if (!std::isfinite(t.x)) throw std::invalid_argument("fit_weibull: non-finite stimulus");
    levels.insert(std::abs(t.x));
  }
  const auto n_correct = std::count_if(trials.begin(), trials.end(), [](const auto& t) { return t.correct; });
  if (n_correct == 0 || n_correct == static_cast<long>(trials.size()))
    throw UnfittableError("fit_weibull: responses are all " + std::string(n_correct ? "correct" : "incorrect"));
  if (levels.size() < 2) throw std::invalid_argument("fit_weibull: need at least two distinct stimulus magnitudes");

  // Search in (ln t, ln beta).
  const std::array<double, 2> lo{std::log(bounds.t_min), std::log(bounds.beta_min)};
  const std::array<double, 2> hi{std::log(bounds.t_max), std::log(bounds.beta_max)};
  auto nll = [&](const std::array<double, 2>& q) {
    PsychometricParams p = base;
    p.t = std::exp(q[0]);
    p.beta = std::exp(q[1]);
    return -log_likelihood(p, trials);
  };

  // Coarse grid, then local refinement from the best few grid cells.
  constexpr int kT = 48, kB = 16;
  std::vector<std::pair<double, std::array<double, 2>>> cells;
  cells.reserve(kT * kB);
  for (int i = 0; i < kT; ++i)
    for (int j = 0; j < kB; ++j) {
      const std::array<double, 2> q{lo[0] + (hi[0] - lo[0]) * i / (kT - 1), lo[1] + (hi[1] - lo[1]) * j / (kB - 1)};
      cells.emplace_back(nll(q), q);
    }
  std::partial_sort(cells.begin(), cells.begin() + 3, cells.end(),
                    [](const auto& a, const auto& b) { return a.first < b.first; });
  const std::array<double, 2> step{(hi[0] - lo[0]) / (kT - 1), (hi[1] - lo[1]) / (kB - 1)};
  std::array<double, 2> best = cells.front().second;
  double best_nll = cells.front().first;
  for (int c = 0; c < 3; ++c) {
    const auto q = nelder_mead_box(nll, cells[static_cast<std::size_t>(c)].second, step, lo, hi);
    const double v = nll(q);
    if (v < best_nll) {
      best_nll = v;
      best = q;
    }
  }
  PsychometricParams out = base;
  out.t = std::exp(best[0]);
  out.beta = std::exp(best[1]);
  return out;
}

ThresholdEstimate bootstrap_mean(std::span<const double> values, int n_bootstrap, Rng& rng) {
  if (values.empty()) throw std::invalid_argument("bootstrap_mean: no values");
  if (n_bootstrap < 1) throw std::invalid_argument("bootstrap_mean: n_bootstrap must be >= 1");
  std::uniform_int_distribution<std::size_t> pick(0, values.size() - 1);
  std::vector<double> means(static_cast<std::size_t>(n_bootstrap));
  for (auto& m : means) {
    double sum = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) sum += values[pick(rng)];
    m = sum / static_cast<double>(values.size());
  }
  ThresholdEstimate est;
  est.mean = std::accumulate(means.begin(), means.end(), 0.0) / n_bootstrap;
  std::sort(means.begin(), means.end());
  est.ci_low = percentile(means, 0.025);
  est.ci_high = percentile(means, 0.975);
  est.n_observers = static_cast<int>(values.size());
  est.n_bootstrap = n_bootstrap;
  return est;
}

std::vector<double> remove_outliers(std::span<const double> values, double k_sd) {
  if (values.empty()) throw std::invalid_argument("remove_outliers: no values");
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / n);
  std::vector<double> kept;
  for (double v : values)
    if (std::abs(v - mean) <= k_sd * sd) kept.push_back(v);
  if (kept.empty()) {
    const auto nearest = std::min_element(values.begin(), values.end(),
                                          [&](double a, double b) { return std::abs(a - mean) < std::abs(b - mean); });
    kept.push_back(*nearest);
  }
  return kept;
}

}  // namespace ptl
