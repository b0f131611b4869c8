#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include <boost/math/distributions/chi_squared.hpp>

#include "dyadic/error.hpp"

namespace dyadic::stats {

/// Neumaier-compensated running sum.
class CompensatedSum {
 public:
  void add(double v) {
    const double t = sum_ + v;
    if (std::abs(sum_) >= std::abs(v)) {
      comp_ += (sum_ - t) + v;
    } else {
      comp_ += (v - t) + sum_;
    }
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

struct Summary {
  std::size_t count = 0;
  double mean = 0.0;
  double variance = 0.0;  // unbiased
  double se = 0.0;        // standard error of the mean
};

/// Two-pass mean and variance with compensated sums.
inline Summary summarize(std::span<const double> xs) {
  Summary s;
  s.count = xs.size();
  if (xs.empty()) return s;
  CompensatedSum total;
  for (double x : xs) total.add(x);
  s.mean = total.value() / static_cast<double>(xs.size());
  if (xs.size() > 1) {
    CompensatedSum sq;
    for (double x : xs) sq.add((x - s.mean) * (x - s.mean));
    s.variance = sq.value() / static_cast<double>(xs.size() - 1);
    s.se = std::sqrt(s.variance / static_cast<double>(xs.size()));
  }
  return s;
}

/// Linear interpolation quantile on a copy of the data (q in [0, 1]).
inline double quantile(std::vector<double> xs, double q) {
  if (xs.empty()) throw Error(ErrorKind::InsufficientData, "quantile of empty sample");
  std::sort(xs.begin(), xs.end());
  const double pos = q * static_cast<double>(xs.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, xs.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return xs[lo] + frac * (xs[hi] - xs[lo]);
}

inline double median(std::vector<double> xs) { return quantile(std::move(xs), 0.5); }

/// Least-squares slope of y on x.
inline double ols_slope(std::span<const double> x, std::span<const double> y) {
  const std::size_t n = x.size();
  CompensatedSum sx, sy;
  for (std::size_t i = 0; i < n; ++i) {
    sx.add(x[i]);
    sy.add(y[i]);
  }
  const double mx = sx.value() / static_cast<double>(n);
  const double my = sy.value() / static_cast<double>(n);
  CompensatedSum sxy, sxx;
  for (std::size_t i = 0; i < n; ++i) {
    sxy.add((x[i] - mx) * (y[i] - my));
    sxx.add((x[i] - mx) * (x[i] - mx));
  }
  return sxy.value() / sxx.value();
}

/// Asymptotic Kolmogorov survival function P(K > x).
inline double kolmogorov_sf(double x) {
  if (x <= 0.0) return 1.0;
  if (x < 0.27) return 1.0;
  double sum = 0.0;
  for (int k = 1; k <= 100; ++k) {
    const double term = std::exp(-2.0 * k * k * x * x);
    sum += (k % 2 == 1 ? term : -term);
    if (term < 1e-17) break;
  }
  return std::clamp(2.0 * sum, 0.0, 1.0);
}

struct KsResult {
  double statistic = 0.0;  // sup |F_n - F|
  double p_value = 1.0;    // asymptotic
  std::size_t count = 0;
};

inline KsResult ks_test(std::vector<double> xs, const std::function<double(double)>& cdf) {
  if (xs.empty()) throw Error(ErrorKind::InsufficientData, "KS test on empty sample");
  std::sort(xs.begin(), xs.end());
  const double n = static_cast<double>(xs.size());
  double d = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double f = cdf(xs[i]);
    d = std::max({d, static_cast<double>(i + 1) / n - f, f - static_cast<double>(i) / n});
  }
  KsResult r;
  r.statistic = d;
  r.count = xs.size();
  r.p_value = kolmogorov_sf(std::sqrt(n) * d);
  return r;
}

struct ChiSquareResult {
  double statistic = 0.0;
  int dof = 0;
  double p_value = 1.0;
  int bins = 0;
};

/// Pearson chi-square goodness of fit. `probabilities` are the model cell
/// probabilities; trailing cells are pooled until every expected count is at
/// least `min_expected`, and the last pooled cell absorbs the remaining tail.
inline ChiSquareResult chi_square_gof(std::span<const std::size_t> counts, std::span<const double> probabilities,
                                      std::size_t total, double min_expected = 5.0) {
  std::vector<double> obs, expct;
  double obs_acc = 0.0, exp_acc = 0.0;
  double prob_used = 0.0;
  std::size_t obs_used = 0;
  for (std::size_t i = 0; i < probabilities.size(); ++i) {
    const double e = probabilities[i] * static_cast<double>(total);
    const double o = i < counts.size() ? static_cast<double>(counts[i]) : 0.0;
    obs_acc += o;
    exp_acc += e;
    if (exp_acc >= min_expected) {
      obs.push_back(obs_acc);
      expct.push_back(exp_acc);
      obs_used += static_cast<std::size_t>(obs_acc);
      prob_used += exp_acc / static_cast<double>(total);
      obs_acc = exp_acc = 0.0;
    }
  }
  // Tail cell: everything not yet assigned.
  const double tail_obs = static_cast<double>(total - obs_used);
  const double tail_exp = std::max(0.0, (1.0 - prob_used)) * static_cast<double>(total);
  if (tail_exp >= min_expected || obs.empty()) {
    obs.push_back(tail_obs);
    expct.push_back(tail_exp);
  } else {
    obs.back() += tail_obs;
    expct.back() += tail_exp;
  }
  ChiSquareResult r;
  r.bins = static_cast<int>(obs.size());
  for (std::size_t i = 0; i < obs.size(); ++i) {
    if (expct[i] > 0.0) r.statistic += (obs[i] - expct[i]) * (obs[i] - expct[i]) / expct[i];
  }
  r.dof = r.bins - 1;
  if (r.dof < 1) throw Error(ErrorKind::InsufficientData, "chi-square test needs at least two cells");
  boost::math::chi_squared dist(r.dof);
  r.p_value = boost::math::cdf(boost::math::complement(dist, r.statistic));
  return r;
}

/// Effective sample size (sum w)^2 / sum w^2 of importance weights given as logs.
inline double effective_sample_size(std::span<const double> log_weights) {
  if (log_weights.empty()) return 0.0;
  const double top = *std::max_element(log_weights.begin(), log_weights.end());
  CompensatedSum s1, s2;
  for (double lw : log_weights) {
    const double w = std::exp(lw - top);
    s1.add(w);
    s2.add(w * w);
  }
  const double a = s1.value();
  return a * a / s2.value();
}

inline double pearson_correlation(std::span<const double> x, std::span<const double> y) {
  const auto sx = summarize(x);
  const auto sy = summarize(y);
  CompensatedSum c;
  for (std::size_t i = 0; i < x.size(); ++i) c.add((x[i] - sx.mean) * (y[i] - sy.mean));
  const double cov = c.value() / static_cast<double>(x.size() - 1);
  return cov / std::sqrt(sx.variance * sy.variance);
}

}  // namespace dyadic::stats
