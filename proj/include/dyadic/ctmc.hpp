#pragma once

// Event-driven simulation of the minimal birth-and-death chain with rates
// lambda_n = k_n^2 (up) and mu_n = k_{n-1}^2 (down). The chain waits in n an
// Exp(lambda_n + mu_n) time and then moves to n+1 with probability pi_n.

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "dyadic/error.hpp"
#include "dyadic/model.hpp"
#include "dyadic/parallel.hpp"
#include "dyadic/rng.hpp"
#include "dyadic/stats.hpp"

namespace dyadic::ctmc {

struct EscapeSample {
  double tau = 0.0;                // escape time, or time_cap when censored
  bool censored = false;           // time_cap elapsed before leaving 1..cap
  bool cap_reached = false;        // chain jumped above cap
  double tail_bias_bound = 0.0;    // mean time omitted past cap, E_{cap+1}[tau]
  std::vector<double> occupation;  // index n = total time in n (index 0 unused)
  std::vector<std::uint32_t> visits;
  std::vector<std::uint32_t> up_jumps;
  std::vector<int> path;           // visited states, only when requested

  double occupation_at(int n) const { return occupation[static_cast<std::size_t>(n)]; }
  std::uint32_t visits_at(int n) const { return visits[static_cast<std::size_t>(n)]; }
};

struct EscapeConfig {
  int start = 1;
  int cap = 60;
  double time_cap = 0.0;  // <= 0 means 50 nu_inf
  bool record_path = false;
};

/// Precomputed holding rates and up-jump probabilities for levels 1..cap.
class ChainTable {
 public:
  ChainTable(const SpectralModel& model, int cap) : cap_(cap) {
    if (cap < 1 || cap > kMaxLevel) throw Error(ErrorKind::ConfigError, "cap must be in [1, 256]");
    total_rate_.resize(static_cast<std::size_t>(cap) + 1);
    up_prob_.resize(static_cast<std::size_t>(cap) + 1);
    for (int n = 1; n <= cap; ++n) {
      const RateTable r = model.rates(n);
      total_rate_[static_cast<std::size_t>(n)] = r.lambda_n + r.mu_n;
      up_prob_[static_cast<std::size_t>(n)] = r.pi_n;
    }
    tail_bias_ = model.escape_mean_from(cap + 1);
  }

  int cap() const { return cap_; }
  double total_rate(int n) const { return total_rate_[static_cast<std::size_t>(n)]; }
  double up_prob(int n) const { return up_prob_[static_cast<std::size_t>(n)]; }
  double tail_bias() const { return tail_bias_; }

 private:
  int cap_;
  std::vector<double> total_rate_;
  std::vector<double> up_prob_;
  double tail_bias_ = 0.0;
};

inline EscapeSample sample_escape(const ChainTable& table, RandomStream& rng, int start, double time_cap,
                                  bool record_path = false) {
  const int cap = table.cap();
  if (start < 1 || start > cap) throw Error(ErrorKind::ConfigError, "start state must be in [1, cap]");
  EscapeSample s;
  const auto size = static_cast<std::size_t>(cap) + 1;
  s.occupation.assign(size, 0.0);
  s.visits.assign(size, 0);
  s.up_jumps.assign(size, 0);
  s.tail_bias_bound = table.tail_bias();

  int state = start;
  double elapsed = 0.0;
  for (;;) {
    const auto u = static_cast<std::size_t>(state);
    ++s.visits[u];
    if (record_path) s.path.push_back(state);
    const double hold = rng.exponential(table.total_rate(state));
    if (elapsed + hold > time_cap) {
      s.occupation[u] += time_cap - elapsed;
      elapsed = time_cap;
      s.censored = true;
      break;
    }
    s.occupation[u] += hold;
    elapsed += hold;
    if (rng.uniform() < table.up_prob(state)) {
      ++s.up_jumps[u];
      ++state;
      if (state > cap) {
        s.cap_reached = true;
        break;
      }
    } else {
      --state;
    }
  }
  s.tau = elapsed;
  return s;
}

/// Samples 0..count-1, sample i drawing from stream (seed, Escape, i).
inline std::vector<EscapeSample> sample_escapes(const SpectralModel& model, std::uint64_t seed, std::size_t count,
                                                const EscapeConfig& config, unsigned workers = 1) {
  const ChainTable table(model, config.cap);
  const double time_cap = config.time_cap > 0.0 ? config.time_cap : 50.0 * model.nu_infinity();
  std::vector<EscapeSample> out(count);
  parallel_for(count, workers, [&](std::size_t i) {
    RandomStream rng(seed, StreamPurpose::Escape, static_cast<std::uint32_t>(i));
    out[i] = sample_escape(table, rng, config.start, time_cap, config.record_path);
  });
  return out;
}

struct OccupationStatistics {
  std::size_t count = 0;
  double mean = 0.0;
  double variance = 0.0;
  double se = 0.0;
  double expected_mean = 0.0;  // nu_n
  stats::KsResult ks;          // against Exp(mean nu_n)
};

/// Statistics of T_n over uncensored samples that visited n.
inline OccupationStatistics occupation_statistics(const SpectralModel& model, const std::vector<EscapeSample>& samples,
                                                  int n) {
  std::vector<double> values;
  values.reserve(samples.size());
  for (const auto& s : samples) {
    if (s.censored) continue;
    if (static_cast<std::size_t>(n) >= s.visits.size()) {
      throw Error(ErrorKind::InsufficientData, "state beyond the simulated cap");
    }
    if (s.visits_at(n) == 0) continue;
    values.push_back(s.occupation_at(n));
  }
  if (values.size() < 100) throw Error(ErrorKind::InsufficientData, "need at least 100 uncensored samples");
  OccupationStatistics out;
  const auto sm = stats::summarize(values);
  out.count = sm.count;
  out.mean = sm.mean;
  out.variance = sm.variance;
  out.se = sm.se;
  out.expected_mean = model.nu(n);
  const double rate = 1.0 / out.expected_mean;
  out.ks = stats::ks_test(std::move(values), [rate](double x) { return x <= 0.0 ? 0.0 : -std::expm1(-rate * x); });
  return out;
}

/// Chi-square of the visit counts to n against the geometric law on {1, 2, ...}
/// with the model's mean.
inline stats::ChiSquareResult visits_chi_square(const SpectralModel& model, const std::vector<EscapeSample>& samples,
                                                int n) {
  const double mean = model.mean_visits(n);
  const double success = 1.0 / mean;
  std::vector<std::size_t> counts;
  std::size_t total = 0;
  for (const auto& s : samples) {
    if (s.censored) continue;
    const auto v = s.visits_at(n);
    if (v == 0) continue;
    if (counts.size() < v) counts.resize(v, 0);
    ++counts[v - 1];
    ++total;
  }
  if (total < 100) throw Error(ErrorKind::InsufficientData, "need at least 100 uncensored samples");
  std::vector<double> probs;
  for (int k = 1; k <= 200; ++k) {
    const double p = success * std::pow(1.0 - success, k - 1);
    if (p * static_cast<double>(total) < 1e-3 && k > 2) break;
    probs.push_back(p);
  }
  return stats::chi_square_gof(counts, probs, total);
}

struct Proportion {
  double estimate = 0.0;
  double se = 0.0;
  std::size_t trials = 0;
};

/// Fraction of departures from n that go up.
inline Proportion up_jump_frequency(const std::vector<EscapeSample>& samples, int n) {
  std::size_t up = 0, departures = 0;
  for (const auto& s : samples) {
    if (s.censored) continue;
    up += s.up_jumps[static_cast<std::size_t>(n)];
    departures += s.visits_at(n);
  }
  Proportion p;
  p.trials = departures;
  if (departures == 0) return p;
  p.estimate = static_cast<double>(up) / static_cast<double>(departures);
  p.se = std::sqrt(p.estimate * (1.0 - p.estimate) / static_cast<double>(departures));
  return p;
}

/// Fraction of up-crossings i -> i+1 that never come back to i.
inline Proportion never_return_frequency(const std::vector<EscapeSample>& samples, int i) {
  std::size_t crossings = 0, returns = 0;
  for (const auto& s : samples) {
    if (s.censored) continue;
    crossings += s.up_jumps[static_cast<std::size_t>(i)];
    returns += s.visits_at(i + 1) - s.up_jumps[static_cast<std::size_t>(i) + 1];
  }
  Proportion p;
  p.trials = crossings;
  if (crossings == 0) return p;
  p.estimate = 1.0 - static_cast<double>(returns) / static_cast<double>(crossings);
  p.se = std::sqrt(p.estimate * (1.0 - p.estimate) / static_cast<double>(crossings));
  return p;
}

struct SurvivalEstimate {
  std::vector<double> t_grid;
  std::vector<double> s_hat;          // empirical P(tau > t)
  std::vector<double> ci_half_width;  // 95% normal approximation
  std::vector<bool> one_sided;        // s_hat == 0: one-sided 95% bound 3/n instead
  std::vector<double> lower_bound;    // e^{-t/nu_1}
  std::vector<double> upper_bound;    // e^{-t/nu_inf + h}
  std::size_t count = 0;
};

inline SurvivalEstimate survival_curve(const SpectralModel& model, const std::vector<EscapeSample>& samples,
                                       const std::vector<double>& t_grid) {
  SurvivalEstimate est;
  est.t_grid = t_grid;
  est.count = samples.size();
  const double n = static_cast<double>(samples.size());
  for (double t : t_grid) {
    std::size_t alive = 0;
    for (const auto& s : samples) {
      if (s.censored || s.tau > t) ++alive;
    }
    const double p = static_cast<double>(alive) / n;
    est.s_hat.push_back(p);
    if (alive == 0) {
      est.one_sided.push_back(true);
      est.ci_half_width.push_back(-std::log(0.05) / n);
    } else {
      est.one_sided.push_back(false);
      est.ci_half_width.push_back(1.959963984540054 * std::sqrt(p * (1.0 - p) / n));
    }
    const auto b = survival_bounds(model, t);
    est.lower_bound.push_back(b.lower);
    est.upper_bound.push_back(b.upper);
  }
  return est;
}

}  // namespace dyadic::ctmc
