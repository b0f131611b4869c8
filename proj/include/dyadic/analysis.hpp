#pragma once

// Estimators tying simulated paths to the closed-form decay results:
// pathwise decay rates under Q, Girsanov-reweighted means under P, the
// Novikov margin and the growth of int ||X||_V^2 with the truncation level.

#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "dyadic/error.hpp"
#include "dyadic/model.hpp"
#include "dyadic/sde.hpp"
#include "dyadic/stats.hpp"

namespace dyadic::analysis {

using sde::PathRecord;

struct RateReport {
  std::vector<double> slopes;  // per path, -inf when the energy hit zero
  double median_slope = std::numeric_limits<double>::quiet_NaN();
  double max_slope = std::numeric_limits<double>::quiet_NaN();
  double ref_nu1 = 0.0;    // -1/nu_1
  double ref_nuinf = 0.0;  // -1/nu_inf
  std::optional<double> ref_p_rate;
  std::size_t n_paths = 0;
  std::size_t n_hit_zero = 0;
  int modes = 0;
  double horizon = 0.0;
  bool degenerate = false;     // every path starts at zero energy
  bool short_horizon = false;  // horizon < 5 nu_inf
};

/// Per-path tail slopes of log E(t) for runs under Q.
inline RateReport q_decay_report(const SpectralModel& model, const std::vector<PathRecord>& runs, double window) {
  RateReport r;
  r.ref_nu1 = -1.0 / model.nu(1);
  r.ref_nuinf = -1.0 / model.nu_infinity();
  r.n_paths = runs.size();
  if (runs.empty()) throw Error(ErrorKind::InsufficientData, "no runs");
  r.modes = runs.front().modes;
  r.horizon = runs.front().t.back();
  r.short_horizon = r.horizon < 5.0 * model.nu_infinity();
  const double e0 = runs.front().energy.front();
  r.ref_p_rate = model.p_rate_bound(e0);
  if (e0 == 0.0) {
    r.degenerate = true;
    return r;
  }
  for (const auto& run : runs) {
    const auto fit = sde::estimate_decay_rate(run.t, run.energy, window);
    if (fit.hit_zero) ++r.n_hit_zero;
    r.slopes.push_back(fit.slope);
  }
  r.median_slope = stats::median(r.slopes);
  r.max_slope = *std::max_element(r.slopes.begin(), r.slopes.end());
  return r;
}

/// Monte Carlo mean with standard error at one record time.
struct Estimate {
  double mean = 0.0;
  double se = 0.0;
};

/// Unweighted mean of f over runs, or the Girsanov-weighted mean
/// E^P[dQ/dP f] when `weighted`.
template <class F>
Estimate path_mean(const std::vector<PathRecord>& runs, std::size_t record, bool weighted, F&& f) {
  std::vector<double> values;
  values.reserve(runs.size());
  for (const auto& run : runs) {
    double v = f(run, record);
    if (weighted) v *= std::exp(-run.log_dpdq[record]);
    values.push_back(v);
  }
  const auto s = stats::summarize(values);
  return {s.mean, s.se};
}

inline double weights_ess(const std::vector<PathRecord>& runs, std::size_t record) {
  std::vector<double> lw;
  lw.reserve(runs.size());
  for (const auto& run : runs) lw.push_back(-run.log_dpdq[record]);
  return stats::effective_sample_size(lw);
}

/// Upper bound on E^P[E(t)] from E^Q[E(t)] <= E(0) e^{-t/nu_inf + h}:
/// E(0) exp((1 - 1/p)[h + (p E(0) - 1/nu_inf) t]) at p = phi(t) =
/// sqrt((1/nu_inf - h/t)/E(0)). Where phi(t) <= 1 (or is undefined) the
/// p -> 1+ limit E(0) is used.
inline double p_mean_energy_bound(const SpectralModel& model, double e0, double t) {
  if (e0 == 0.0) return 0.0;
  const double alpha = 1.0 / model.nu_infinity();
  const double h = model.entropy_offset();
  if (t <= 0.0) return e0;
  const double arg = (alpha - h / t) / e0;
  if (!(arg > 1.0)) return e0;
  const double p = std::sqrt(arg);
  return e0 * std::exp((1.0 - 1.0 / p) * (h + (p * e0 - alpha) * t));
}

struct WeightedEnergyCurve {
  std::vector<double> t;
  std::vector<Estimate> unweighted;  // E^P[E(t)]
  std::vector<double> p_bound;       // p_mean_energy_bound
  std::vector<Estimate> weighted;    // E^P[N_t E(t)] = E^Q[E(t)]
  std::vector<double> ess;
  std::size_t valid_records = 0;     // records before ESS first drops below threshold
  bool collapsed = false;
  std::optional<double> asymptotic_slope;  // p_rate_bound(E(0))
};

inline WeightedEnergyCurve p_weighted_energy(const SpectralModel& model, const std::vector<PathRecord>& runs,
                                             double ess_threshold = 50.0) {
  if (runs.empty()) throw Error(ErrorKind::InsufficientData, "no runs");
  WeightedEnergyCurve c;
  const double e0 = runs.front().energy.front();
  c.asymptotic_slope = model.p_rate_bound(e0);
  const std::size_t records = runs.front().t.size();
  auto energy = [](const PathRecord& r, std::size_t k) { return r.energy[k]; };
  for (std::size_t k = 0; k < records; ++k) {
    const double ess = weights_ess(runs, k);
    if (ess < ess_threshold) {
      c.collapsed = true;
      break;
    }
    c.t.push_back(runs.front().t[k]);
    c.unweighted.push_back(path_mean(runs, k, false, energy));
    c.weighted.push_back(path_mean(runs, k, true, energy));
    c.p_bound.push_back(p_mean_energy_bound(model, e0, runs.front().t[k]));
    c.ess.push_back(ess);
    ++c.valid_records;
  }
  return c;
}

struct NovikovEntry {
  double horizon = 0.0;
  Estimate exp_integral;  // E^Q[exp(int_0^T E dt)]
  double median_integral = 0.0;
  double p95_integral = 0.0;
};

struct NovikovReport {
  double margin = 0.0;  // nu_inf * E(0)
  bool satisfied = false;
  std::vector<NovikovEntry> ladder;
};

/// Margin check plus finite-horizon proxies of E^Q[exp(int_0^T E dt)] at
/// every record time of the runs (a ladder of horizons).
inline NovikovReport novikov_diagnostic(const SpectralModel& model, double e0, const std::vector<PathRecord>& runs) {
  NovikovReport r;
  r.margin = model.nu_infinity() * e0;
  r.satisfied = r.margin < 1.0;
  if (runs.empty()) return r;
  const std::size_t records = runs.front().t.size();
  for (std::size_t k = 1; k < records; ++k) {
    NovikovEntry e;
    e.horizon = runs.front().t[k];
    std::vector<double> integrals;
    for (const auto& run : runs) integrals.push_back(run.energy_int[k]);
    e.exp_integral = path_mean(runs, k, false, [](const PathRecord& run, std::size_t j) {
      return std::exp(run.energy_int[j]);
    });
    e.median_integral = stats::quantile(integrals, 0.5);
    e.p95_integral = stats::quantile(integrals, 0.95);
    r.ladder.push_back(e);
  }
  return r;
}

struct BlowupRow {
  int modes = 0;
  double median = 0.0;  // of int_0^T ||X||_V^2 dt
  double p90 = 0.0;
  double mean = 0.0;
  double horizon = 0.0;
};

/// Distribution summary of the V-norm time integral at the final record.
inline BlowupRow vnorm_summary(const std::vector<PathRecord>& runs) {
  if (runs.empty()) throw Error(ErrorKind::InsufficientData, "no runs");
  std::vector<double> v;
  for (const auto& run : runs) v.push_back(run.vnorm_int.back());
  BlowupRow row;
  row.modes = runs.front().modes;
  row.horizon = runs.front().t.back();
  row.median = stats::quantile(v, 0.5);
  row.p90 = stats::quantile(v, 0.9);
  row.mean = stats::summarize(v).mean;
  return row;
}

/// Runs the same initial condition, zero-padded, at every level of the sweep.
inline std::vector<BlowupRow> vnorm_blowup_indicator(const SpectralModel& model, const std::vector<double>& x0,
                                                     const sde::PathConfig& config, const std::vector<int>& sweep,
                                                     std::size_t n_paths, unsigned workers = 1) {
  std::vector<BlowupRow> rows;
  for (int modes : sweep) {
    if (static_cast<std::size_t>(modes) < x0.size()) {
      throw Error(ErrorKind::ConfigError, "x0 has more modes than sweep level " + std::to_string(modes));
    }
    std::vector<double> padded(x0);
    padded.resize(static_cast<std::size_t>(modes), 0.0);
    const sde::TruncatedSystem sys(model, modes, config.truncation);
    const std::size_t paths = config.measure == sde::Measure::Deterministic ? 1 : n_paths;
    rows.push_back(vnorm_summary(sde::simulate_paths(sys, padded, config, paths, workers)));
  }
  return rows;
}

/// Per-mode second-moment estimates, MC mean of X_n^2(t) (or its
/// Girsanov-weighted version), at every record.
struct MomentTable {
  int modes = 0;
  std::vector<double> t;
  std::vector<Estimate> values;  // row-major [record][mode]
  std::vector<double> ess;

  const Estimate& at(std::size_t record, int n) const {
    return values[record * static_cast<std::size_t>(modes) + static_cast<std::size_t>(n) - 1];
  }
};

inline MomentTable mode_second_moments(const std::vector<PathRecord>& runs, bool weighted) {
  if (runs.empty()) throw Error(ErrorKind::InsufficientData, "no runs");
  MomentTable m;
  m.modes = runs.front().modes;
  m.t = runs.front().t;
  for (std::size_t k = 0; k < m.t.size(); ++k) {
    m.ess.push_back(weighted ? weights_ess(runs, k) : static_cast<double>(runs.size()));
    for (int n = 1; n <= m.modes; ++n) {
      m.values.push_back(
          path_mean(runs, k, weighted, [n](const PathRecord& r, std::size_t j) { return r.mode_sq(j, n); }));
    }
  }
  return m;
}

}  // namespace dyadic::analysis
