#pragma once

// Path simulation of the truncated dyadic system X_1..X_N.
//
// Under P (Ito form) mode n evolves by
//   dX_n = (k_{n-1} X_{n-1}^2 - k_n X_n X_{n+1}) dt
//          + k_{n-1} X_{n-1} dW_{n-1} - k_n X_{n+1} dW_n
//          - 1/2 (k_n^2 + k_{n-1}^2) X_n dt,
// and under Q, with B_n = W_n + int X_n dt, the quadratic drift disappears:
//   dX_n = k_{n-1} X_{n-1} dB_{n-1} - k_n X_{n+1} dB_n - 1/2 (k_n^2 + k_{n-1}^2) X_n dt.
// Truncation sets X_0 = X_{N+1} = 0, so only W_1..W_{N-1} act.
//
// Truncation::Absorbing keeps the full damping 1/2 (k_N^2 + k_{N-1}^2) on the
// top mode. Then E^Q[X_n^2] solves the forward equation of the birth-death
// chain killed when it jumps from N to N+1, and the energy leaks out through
// mode N at rate k_N^2 X_N^2.
//
// Truncation::Conservative drops the k_N^2 part (it is the Ito correction of
// the absent -k_N X_{N+1} o dW_N term). The truncated Stratonovich system then
// conserves sum X_n^2 pathwise and E^Q[X_n^2] solves the reflecting forward
// equation.

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "dyadic/error.hpp"
#include "dyadic/model.hpp"
#include "dyadic/parallel.hpp"
#include "dyadic/rng.hpp"
#include "dyadic/stats.hpp"

namespace dyadic::sde {

enum class Measure { PNonlinear, QLinear, Deterministic };
enum class Scheme { ExplicitEM, ExponentialEM };
enum class Truncation { Absorbing, Conservative };

struct DtPolicy {
  enum class Kind { Fixed, StiffnessScaled };
  Kind kind = Kind::StiffnessScaled;
  double value = 0.1;  // dt for Fixed, c for StiffnessScaled

  static DtPolicy fixed(double dt) { return {Kind::Fixed, dt}; }
  static DtPolicy stiffness_scaled(double c) { return {Kind::StiffnessScaled, c}; }
};

struct PathConfig {
  Measure measure = Measure::QLinear;
  Scheme scheme = Scheme::ExponentialEM;
  Truncation truncation = Truncation::Absorbing;
  DtPolicy dt;
  double horizon = 1.0;
  std::uint64_t seed = 0;
  int n_records = 10;  // samples at t_k = k * horizon / n_records, k = 0..n_records
};

/// Energy values below this are treated as numerical zero.
inline constexpr double kEnergyFloor = 1e-300;

struct StateVector {
  double t = 0.0;
  std::vector<double> x;  // X_1 .. X_N

  int size() const { return static_cast<int>(x.size()); }

  /// E = 1/2 sum X_n^2.
  double energy() const {
    double s = 0.0;
    for (double v : x) s += v * v;
    return 0.5 * s;
  }
};

/// Running martingale M_t = sum_n int X_n dW_n and its bracket
/// [M]_t = int sum_n X_n^2 ds, over modes 1..N-1.
struct GirsanovTracker {
  double m = 0.0;
  double qv = 0.0;
};

enum class DensityDirection { QoverP, PoverQ };

/// log dQ/dP = -M - [M]/2 and log dP/dQ = M + [M]/2 on F_t.
inline double girsanov_log_density(const GirsanovTracker& tracker, DensityDirection direction) {
  const double log_f = tracker.m + 0.5 * tracker.qv;
  return direction == DensityDirection::PoverQ ? log_f : -log_f;
}

/// Per-mode factors of one step of size dt.
struct StepCoefficients {
  double dt = 0.0;
  std::vector<double> decay;  // multiplies X_n
  std::vector<double> gain;   // multiplies the coupling bracket
};

/// Wavenumbers and damping rates of the system truncated at N modes.
class TruncatedSystem {
 public:
  TruncatedSystem(const SpectralModel& model, int modes, Truncation truncation = Truncation::Absorbing)
      : modes_(modes), truncation_(truncation) {
    if (modes < 2) throw Error(ErrorKind::ConfigError, "truncation level must be at least 2");
    if (modes > kMaxLevel) throw Error(ErrorKind::ConfigError, "truncation level above " + std::to_string(kMaxLevel));
    k_.resize(static_cast<std::size_t>(modes) + 1);
    k_sq_.resize(static_cast<std::size_t>(modes) + 1);
    for (int n = 0; n <= modes; ++n) {
      k_[static_cast<std::size_t>(n)] = model.wavenumber(n);
      k_sq_[static_cast<std::size_t>(n)] = model.wavenumber_sq(n);
    }
    damping_.resize(static_cast<std::size_t>(modes));
    for (int n = 1; n <= modes; ++n) {
      const bool top = n == modes;
      const double upper = top && truncation == Truncation::Conservative ? 0.0 : k_sq(n);
      damping_[static_cast<std::size_t>(n) - 1] = 0.5 * (upper + k_sq(n - 1));
    }
  }

  int size() const { return modes_; }
  Truncation truncation() const { return truncation_; }
  double k(int n) const { return k_[static_cast<std::size_t>(n)]; }
  double k_sq(int n) const { return k_sq_[static_cast<std::size_t>(n)]; }
  /// a_n in the damping term -a_n X_n dt.
  double damping(int n) const { return damping_[static_cast<std::size_t>(n) - 1]; }
  double stiffness() const { return k_sq(modes_) + k_sq(modes_ - 1); }

  double resolve_dt(const DtPolicy& policy) const {
    if (policy.kind == DtPolicy::Kind::Fixed) {
      if (!(policy.value > 0.0)) throw Error(ErrorKind::ConfigError, "dt must be positive");
      return policy.value;
    }
    if (!(policy.value > 0.0 && policy.value <= 1.0)) {
      throw Error(ErrorKind::ConfigError, "stiffness-scaled dt needs c in (0, 1]");
    }
    return policy.value / stiffness();
  }

  StepCoefficients coefficients(Scheme scheme, double dt) const {
    StepCoefficients c;
    c.dt = dt;
    c.decay.resize(static_cast<std::size_t>(modes_));
    c.gain.resize(static_cast<std::size_t>(modes_));
    for (int n = 1; n <= modes_; ++n) {
      const double a = damping(n);
      const auto i = static_cast<std::size_t>(n) - 1;
      if (scheme == Scheme::ExplicitEM) {
        c.decay[i] = 1.0 - a * dt;
        c.gain[i] = 1.0;
      } else {
        // Exact damping; the bracket gets the OU variance factor
        // (1 - e^{-2 a dt}) / (2 a dt) so that second moments stay unbiased
        // at dt ~ 1/a.
        c.decay[i] = std::exp(-a * dt);
        const double z = 2.0 * a * dt;
        c.gain[i] = z > 1e-12 ? std::sqrt(-std::expm1(-z) / z) : 1.0;
      }
    }
    return c;
  }

  /// ||x||_V^2 = sum k_n^2 x_n^2.
  double vnorm_sq(std::span<const double> x) const {
    double s = 0.0;
    for (int n = 1; n <= modes_; ++n) s += k_sq(n) * x[static_cast<std::size_t>(n) - 1] * x[static_cast<std::size_t>(n) - 1];
    return s;
  }

 private:
  int modes_;
  Truncation truncation_;
  std::vector<double> k_;
  std::vector<double> k_sq_;
  std::vector<double> damping_;
};

/// One step under P. `dw` holds the N-1 increments W_n(t+dt) - W_n(t).
inline void step_nonlinear_p(const TruncatedSystem& sys, const StepCoefficients& c, std::span<const double> x,
                             std::span<const double> dw, std::span<double> out) {
  const int modes = sys.size();
  const double dt = c.dt;
  for (int i = 0; i < modes; ++i) {
    const auto u = static_cast<std::size_t>(i);
    double bracket = 0.0;
    if (i > 0) bracket += sys.k(i) * x[u - 1] * (dw[u - 1] + x[u - 1] * dt);
    if (i < modes - 1) bracket -= sys.k(i + 1) * x[u + 1] * (dw[u] + x[u] * dt);
    out[u] = c.decay[u] * x[u] + c.gain[u] * bracket;
  }
}

/// One step under Q. `db` holds the N-1 increments of B_n.
inline void step_linear_q(const TruncatedSystem& sys, const StepCoefficients& c, std::span<const double> x,
                          std::span<const double> db, std::span<double> out) {
  const int modes = sys.size();
  for (int i = 0; i < modes; ++i) {
    const auto u = static_cast<std::size_t>(i);
    double bracket = 0.0;
    if (i > 0) bracket += sys.k(i) * x[u - 1] * db[u - 1];
    if (i < modes - 1) bracket -= sys.k(i + 1) * x[u + 1] * db[u];
    out[u] = c.decay[u] * x[u] + c.gain[u] * bracket;
  }
}

inline void dyadic_drift(const TruncatedSystem& sys, std::span<const double> x, std::span<double> out) {
  const int modes = sys.size();
  for (int i = 0; i < modes; ++i) {
    const auto u = static_cast<std::size_t>(i);
    double d = 0.0;
    if (i > 0) d += sys.k(i) * x[u - 1] * x[u - 1];
    if (i < modes - 1) d -= sys.k(i + 1) * x[u] * x[u + 1];
    out[u] = d;
  }
}

/// Classical RK4 step of the inviscid system dX_n/dt = k_{n-1} X_{n-1}^2 - k_n X_n X_{n+1}.
inline void step_deterministic(const TruncatedSystem& sys, double dt, std::span<const double> x, std::span<double> out,
                               std::vector<double>& scratch) {
  const auto m = x.size();
  scratch.resize(5 * m);
  std::span<double> k1(scratch.data(), m), k2(scratch.data() + m, m), k3(scratch.data() + 2 * m, m),
      k4(scratch.data() + 3 * m, m), tmp(scratch.data() + 4 * m, m);
  dyadic_drift(sys, x, k1);
  for (std::size_t i = 0; i < m; ++i) tmp[i] = x[i] + 0.5 * dt * k1[i];
  dyadic_drift(sys, tmp, k2);
  for (std::size_t i = 0; i < m; ++i) tmp[i] = x[i] + 0.5 * dt * k2[i];
  dyadic_drift(sys, tmp, k3);
  for (std::size_t i = 0; i < m; ++i) tmp[i] = x[i] + dt * k3[i];
  dyadic_drift(sys, tmp, k4);
  for (std::size_t i = 0; i < m; ++i) out[i] = x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
}

inline void require_finite(std::span<const double> x, double t) {
  for (double v : x) {
    if (!std::isfinite(v)) throw Error(ErrorKind::SimulationDiverged, "non-finite state at t = " + std::to_string(t));
  }
}

inline StateVector step_nonlinear_p(const TruncatedSystem& sys, const StateVector& s, double dt,
                                    std::span<const double> noise, Scheme scheme = Scheme::ExponentialEM) {
  StateVector next{s.t + dt, std::vector<double>(s.x.size())};
  step_nonlinear_p(sys, sys.coefficients(scheme, dt), s.x, noise, next.x);
  require_finite(next.x, next.t);
  return next;
}

inline StateVector step_linear_q(const TruncatedSystem& sys, const StateVector& s, double dt,
                                 std::span<const double> noise, Scheme scheme = Scheme::ExponentialEM) {
  StateVector next{s.t + dt, std::vector<double>(s.x.size())};
  step_linear_q(sys, sys.coefficients(scheme, dt), s.x, noise, next.x);
  require_finite(next.x, next.t);
  return next;
}

inline StateVector step_deterministic(const TruncatedSystem& sys, const StateVector& s, double dt) {
  StateVector next{s.t + dt, std::vector<double>(s.x.size())};
  std::vector<double> scratch;
  step_deterministic(sys, dt, s.x, next.x, scratch);
  require_finite(next.x, next.t);
  return next;
}

/// Observables of one path at the record times.
struct PathRecord {
  std::uint32_t path_index = 0;
  int modes = 0;
  std::vector<double> t;
  std::vector<double> energy;      // 1/2 sum X_n^2, clamped to 0 below kEnergyFloor
  std::vector<double> x_sq;        // X_n^2, row-major [record][mode]
  std::vector<double> vnorm_int;   // int_0^t ||X||_V^2 ds
  std::vector<double> energy_int;  // int_0^t E ds
  std::vector<double> log_dpdq;    // M_t + [M]_t / 2 (P only, else 0)
  std::vector<double> qv;          // [M]_t (P only, else 0)
  double max_energy = 0.0;         // over every step, not just records
  bool energy_clamped = false;

  double mode_sq(std::size_t record, int n) const {
    return x_sq[record * static_cast<std::size_t>(modes) + static_cast<std::size_t>(n) - 1];
  }
};

struct StepPlan {
  double dt = 0.0;
  long steps_per_record = 0;
};

/// Steps evenly dividing each record interval, no larger than the policy's dt.
inline StepPlan plan_steps(const TruncatedSystem& sys, const PathConfig& config) {
  if (!(config.horizon > 0.0)) throw Error(ErrorKind::ConfigError, "horizon must be positive");
  if (config.n_records < 1) throw Error(ErrorKind::ConfigError, "need at least one record interval");
  const double target = sys.resolve_dt(config.dt);
  const double interval = config.horizon / config.n_records;
  const auto steps = static_cast<long>(std::ceil(interval / target * (1.0 - 1e-12)));
  return {interval / static_cast<double>(std::max(1L, steps)), std::max(1L, steps)};
}

/// Simulates one path with its own counter-based stream (seed, path_index).
inline PathRecord simulate_path(const TruncatedSystem& sys, std::span<const double> x0, const PathConfig& config,
                                std::uint32_t path_index = 0) {
  const int modes = sys.size();
  if (static_cast<int>(x0.size()) != modes) throw Error(ErrorKind::ConfigError, "x0 length differs from N");
  require_finite(x0, 0.0);
  const StepPlan plan = plan_steps(sys, config);
  const StepCoefficients coeff = sys.coefficients(config.scheme, plan.dt);
  const double sqrt_dt = std::sqrt(plan.dt);

  RandomStream rng(config.seed, StreamPurpose::Path, path_index);
  std::vector<double> x(x0.begin(), x0.end()), next(x.size()), noise(static_cast<std::size_t>(modes - 1)), scratch;
  GirsanovTracker tracker;

  PathRecord rec;
  rec.path_index = path_index;
  rec.modes = modes;
  const auto n_rec = static_cast<std::size_t>(config.n_records) + 1;
  rec.t.reserve(n_rec);
  rec.energy.reserve(n_rec);
  rec.x_sq.reserve(n_rec * static_cast<std::size_t>(modes));

  auto energy_of = [](std::span<const double> v) {
    double s = 0.0;
    for (double e : v) s += e * e;
    return 0.5 * s;
  };
  stats::CompensatedSum vnorm_acc, energy_acc;
  double energy_now = energy_of(x);
  double vnorm_now = sys.vnorm_sq(x);
  rec.max_energy = energy_now;

  auto record = [&](double t) {
    require_finite(x, t);
    double e = energy_now;
    if (e < kEnergyFloor) {
      if (e != 0.0) rec.energy_clamped = true;
      e = 0.0;
    }
    rec.t.push_back(t);
    rec.energy.push_back(e);
    for (double v : x) rec.x_sq.push_back(v * v);
    rec.vnorm_int.push_back(vnorm_acc.value());
    rec.energy_int.push_back(energy_acc.value());
    rec.log_dpdq.push_back(girsanov_log_density(tracker, DensityDirection::PoverQ));
    rec.qv.push_back(tracker.qv);
  };

  record(0.0);
  const double dt = plan.dt;
  for (int r = 1; r <= config.n_records; ++r) {
    for (long s = 0; s < plan.steps_per_record; ++s) {
      switch (config.measure) {
        case Measure::PNonlinear:
          for (auto& w : noise) w = sqrt_dt * rng.normal();
          for (int n = 0; n < modes - 1; ++n) {
            const auto u = static_cast<std::size_t>(n);
            tracker.m += x[u] * noise[u];
            tracker.qv += x[u] * x[u] * dt;
          }
          step_nonlinear_p(sys, coeff, x, noise, next);
          break;
        case Measure::QLinear:
          for (auto& w : noise) w = sqrt_dt * rng.normal();
          step_linear_q(sys, coeff, x, noise, next);
          break;
        case Measure::Deterministic:
          step_deterministic(sys, dt, x, next, scratch);
          break;
      }
      x.swap(next);
      const double e = energy_of(x);
      const double v = sys.vnorm_sq(x);
      energy_acc.add(0.5 * dt * (energy_now + e));
      vnorm_acc.add(0.5 * dt * (vnorm_now + v));
      energy_now = e;
      vnorm_now = v;
      if (e > rec.max_energy) rec.max_energy = e;
    }
    record(config.horizon * r / config.n_records);
  }
  return rec;
}

inline PathRecord simulate_path(const SpectralModel& model, std::span<const double> x0, const PathConfig& config,
                                std::uint32_t path_index = 0) {
  return simulate_path(TruncatedSystem(model, static_cast<int>(x0.size()), config.truncation), x0, config,
                       path_index);
}

/// Independent paths 0..n_paths-1; the result does not depend on `workers`.
inline std::vector<PathRecord> simulate_paths(const TruncatedSystem& sys, std::span<const double> x0,
                                              const PathConfig& config, std::size_t n_paths, unsigned workers = 1) {
  std::vector<PathRecord> out(n_paths);
  parallel_for(n_paths, workers, [&](std::size_t i) {
    out[i] = simulate_path(sys, x0, config, static_cast<std::uint32_t>(i));
  });
  return out;
}

struct DecayFit {
  double slope = 0.0;
  bool hit_zero = false;  // energy reached numerical zero; slope is -inf
  std::size_t samples_used = 0;
};

/// Least-squares slope of log E(t) on t over the final `window` fraction of
/// samples. Samples clamped to zero are excluded; if fewer than 10 positive
/// samples remain because of them, the slope is -inf and flagged.
inline DecayFit estimate_decay_rate(std::span<const double> t, std::span<const double> energy, double window) {
  if (t.size() != energy.size()) throw Error(ErrorKind::DegenerateInput, "time and energy lengths differ");
  if (!(window > 0.0 && window <= 1.0)) throw Error(ErrorKind::DegenerateInput, "window must be in (0, 1]");
  const auto count = t.size();
  const auto take = static_cast<std::size_t>(std::ceil(window * static_cast<double>(count) - 1e-9));
  if (take < 10) throw Error(ErrorKind::DegenerateInput, "fewer than 10 samples in the tail window");
  std::vector<double> xs, ys;
  bool zero = false;
  for (std::size_t i = count - take; i < count; ++i) {
    if (energy[i] < 0.0 || !std::isfinite(energy[i])) {
      throw Error(ErrorKind::DegenerateInput, "negative or non-finite energy in window");
    }
    if (energy[i] == 0.0) {
      zero = true;
      continue;
    }
    xs.push_back(t[i]);
    ys.push_back(std::log(energy[i]));
  }
  DecayFit fit;
  fit.samples_used = xs.size();
  if (xs.size() < 10) {
    fit.hit_zero = zero;
    if (!zero) throw Error(ErrorKind::DegenerateInput, "fewer than 10 positive samples in window");
    fit.slope = -std::numeric_limits<double>::infinity();
    return fit;
  }
  fit.slope = stats::ols_slope(xs, ys);
  return fit;
}

}  // namespace dyadic::sde
