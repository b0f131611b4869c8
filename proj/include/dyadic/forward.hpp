#pragma once

// Truncated Kolmogorov forward equations of the birth-death chain,
//   p_n' = -(lambda_n + mu_n) p_n + lambda_{n-1} p_{n-1} + mu_{n+1} p_{n+1},
// on levels 1..N, with p_n(t) = E^Q[X_n(t)^2] / ||x||^2.

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "dyadic/error.hpp"
#include "dyadic/model.hpp"
#include "dyadic/stats.hpp"

namespace dyadic::forward {

enum class Boundary {
  Absorbing,   // the jump N -> N+1 kills the chain (row N sums to -lambda_N)
  Reflecting,  // lambda_N = 0, mass is conserved
};

/// Tridiagonal matrix A of the linear system p' = A p, rows n = 1..N.
struct Tridiagonal {
  std::vector<double> lower;  // lower[i] multiplies p_{i-1} in row i (lower[0] = 0)
  std::vector<double> diag;
  std::vector<double> upper;  // upper[i] multiplies p_{i+1} in row i (upper[N-1] = 0)
  // Mass lost from column i: -(diag[i] + lower[i+1] + upper[i-1]), stored
  // exactly rather than recomputed, since the rates differ by 20+ decades.
  std::vector<double> deficit;

  bool operator==(const Tridiagonal&) const = default;
};

struct TruncatedGenerator {
  int size = 0;
  Boundary boundary = Boundary::Absorbing;
  std::vector<double> birth;  // lambda_n, n = 1..N (lambda_N = 0 when reflecting)
  std::vector<double> death;  // mu_n, n = 1..N

  double birth_at(int n) const { return birth[static_cast<std::size_t>(n) - 1]; }
  double death_at(int n) const { return death[static_cast<std::size_t>(n) - 1]; }

  /// Row sum of the truncated q-matrix; 0 except -lambda_N on row N when absorbing.
  double q_row_sum(int n) const {
    double off = 0.0;
    if (n < size) off += birth_at(n);
    if (n > 1) off += death_at(n);
    return off - (birth_at(n) + death_at(n));
  }

  double max_total_rate() const {
    double m = 0.0;
    for (int n = 1; n <= size; ++n) m = std::max(m, birth_at(n) + death_at(n));
    return m;
  }

  /// Forward operator from the coefficients -(lambda_n + mu_n), lambda_{n-1}, mu_{n+1}.
  Tridiagonal matrix() const {
    Tridiagonal a;
    const auto m = static_cast<std::size_t>(size);
    a.lower.assign(m, 0.0);
    a.diag.assign(m, 0.0);
    a.upper.assign(m, 0.0);
    a.deficit.assign(m, 0.0);
    a.deficit[m - 1] = birth_at(size);
    for (int n = 1; n <= size; ++n) {
      const auto i = static_cast<std::size_t>(n) - 1;
      a.diag[i] = -(birth_at(n) + death_at(n));
      if (n > 1) a.lower[i] = birth_at(n - 1);
      if (n < size) a.upper[i] = death_at(n + 1);
    }
    return a;
  }

  void apply(std::span<const double> p, std::span<double> out) const {
    for (int n = 1; n <= size; ++n) {
      const auto i = static_cast<std::size_t>(n) - 1;
      double v = -(birth_at(n) + death_at(n)) * p[i];
      if (n > 1) v += birth_at(n - 1) * p[i - 1];
      if (n < size) v += death_at(n + 1) * p[i + 1];
      out[i] = v;
    }
  }
};

inline TruncatedGenerator build_generator(const SpectralModel& model, int levels, Boundary boundary) {
  if (levels < 2) throw Error(ErrorKind::ConfigError, "forward truncation needs N >= 2");
  if (levels > kMaxLevel) throw Error(ErrorKind::OverflowRisk, "N above " + std::to_string(kMaxLevel));
  TruncatedGenerator g;
  g.size = levels;
  g.boundary = boundary;
  for (int n = 1; n <= levels; ++n) {
    const RateTable r = model.rates(n);  // throws OverflowRisk if k_n^2 overflows
    g.birth.push_back(n == levels && boundary == Boundary::Reflecting ? 0.0 : r.lambda_n);
    g.death.push_back(r.mu_n);
  }
  return g;
}

/// Same operator assembled from the divergence form
///   p_n' = lambda_n (p_{n+1} - p_n) - lambda_{n-1} (p_n - p_{n-1}),
/// which uses lambda_n = mu_{n+1} = k_n^2. Absorbing takes p_{N+1} = 0;
/// reflecting drops the flux through the top edge.
inline Tridiagonal parabolic_matrix(const SpectralModel& model, int levels, Boundary boundary) {
  Tridiagonal a;
  const auto m = static_cast<std::size_t>(levels);
  a.lower.assign(m, 0.0);
  a.diag.assign(m, 0.0);
  a.upper.assign(m, 0.0);
  a.deficit.assign(m, 0.0);
  if (boundary == Boundary::Absorbing) a.deficit[m - 1] = model.wavenumber_sq(levels);
  for (int n = 1; n <= levels; ++n) {
    const auto i = static_cast<std::size_t>(n) - 1;
    const double up = model.wavenumber_sq(n);
    const double down = model.wavenumber_sq(n - 1);
    const bool top_edge = n == levels;
    if (!(top_edge && boundary == Boundary::Reflecting)) {
      a.diag[i] -= up;
      if (!top_edge) a.upper[i] = up;
    }
    a.diag[i] -= down;
    if (n > 1) a.lower[i] = down;
  }
  return a;
}

struct ForwardControl {
  double tolerance = 1e-8;    // max-norm change between successive refinements
  int initial_steps = 16;     // steps over the largest grid time at the coarsest level
  int max_refinements = 24;
  int smoothing_steps = 4;    // backward-Euler half steps replacing the first two CN steps
  double negative_tolerance = 1e-12;
};

struct ForwardSolution {
  std::vector<double> t_grid;
  std::vector<double> p;  // row-major [time][level]
  std::vector<double> survival;
  int size = 0;
  long clamped = 0;
  long steps = 0;
  double step_size = 0.0;

  double at(std::size_t k, int n) const {
    return p[k * static_cast<std::size_t>(size) + static_cast<std::size_t>(n) - 1];
  }
};

namespace detail {

/// Solves (I - coef A) y = rhs in place (Thomas algorithm).
///
/// The pivots d_i = 1 - coef diag[i] - ... are formed as
/// d_i = s_i + coef lower[i+1] with the column excess
///   s_i = 1 + coef deficit[i] + coef upper[i-1] s_{i-1} / d_{i-1},
/// a sum of positive terms. The textbook update subtracts two numbers of
/// size coef * k_N^2 and loses the O(1) remainder entirely for stiff levels.
inline void implicit_solve(const Tridiagonal& a, double coef, std::vector<double>& rhs, std::vector<double>& work) {
  const std::size_t m = a.diag.size();
  work.resize(m);
  double excess = 1.0 + coef * a.deficit[0];
  double denom = excess + (m > 1 ? coef * a.lower[1] : 0.0);
  work[0] = -coef * a.upper[0] / denom;
  rhs[0] /= denom;
  for (std::size_t i = 1; i < m; ++i) {
    const double lo = -coef * a.lower[i];
    excess = 1.0 + coef * a.deficit[i] + coef * a.upper[i - 1] * (excess / denom);
    denom = excess + (i + 1 < m ? coef * a.lower[i + 1] : 0.0);
    work[i] = -coef * a.upper[i] / denom;
    rhs[i] = (rhs[i] - lo * rhs[i - 1]) / denom;
  }
  for (std::size_t i = m - 1; i-- > 0;) rhs[i] -= work[i] * rhs[i + 1];
}

/// out = (I + coef A) p, summed as net edge fluxes. Where the rate into a
/// level equals the rate back (lambda_{n-1} = mu_n = k_{n-1}^2 here) the flux
/// is k^2 (p_a - p_b), which stays exact near equilibrium; expanding the row
/// instead leaves rounding noise of order coef * k_N^2 * eps * p.
inline void explicit_half(const Tridiagonal& a, double coef, const std::vector<double>& p, std::vector<double>& out) {
  const std::size_t m = p.size();
  auto flux = [](double rate_in, double from, double rate_out, double here) {
    return rate_in == rate_out ? rate_in * (from - here) : rate_in * from - rate_out * here;
  };
  for (std::size_t i = 0; i < m; ++i) {
    double v = -a.deficit[i] * p[i];
    if (i > 0) v += flux(a.lower[i], p[i - 1], a.upper[i - 1], p[i]);
    if (i + 1 < m) v += flux(a.upper[i], p[i + 1], a.lower[i + 1], p[i]);
    out[i] = p[i] + coef * v;
  }
}

/// Crank-Nicolson with backward-Euler start-up at a target step size h.
inline std::vector<double> run(const Tridiagonal& a, std::span<const double> p0, const std::vector<double>& grid,
                               double h, int smoothing, long& steps_taken) {
  const std::size_t m = p0.size();
  std::vector<double> p(p0.begin(), p0.end()), rhs(m), work(m), out;
  out.reserve(grid.size() * m);
  double t = 0.0;
  bool smoothed = smoothing <= 0;
  steps_taken = 0;
  for (double target : grid) {
    const double len = target - t;
    if (len > 0.0) {
      long steps = std::max(1L, static_cast<long>(std::ceil(len / h * (1.0 - 1e-12))));
      const double dt = len / static_cast<double>(steps);
      if (!smoothed) {
        // Replace the first min(steps, 2) CN steps by backward-Euler sub-steps.
        const long replaced = std::min(steps, 2L);
        const long sub = smoothing * replaced / 2;
        const double be = dt * static_cast<double>(replaced) / static_cast<double>(std::max(1L, sub));
        for (long s = 0; s < std::max(1L, sub); ++s) implicit_solve(a, be, p, work);
        steps -= replaced;
        steps_taken += std::max(1L, sub);
        smoothed = true;
      }
      for (long s = 0; s < steps; ++s) {
        explicit_half(a, 0.5 * dt, p, rhs);
        implicit_solve(a, 0.5 * dt, rhs, work);
        p.swap(rhs);
      }
      steps_taken += steps;
      t = target;
    }
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

}  // namespace detail

/// Integrates p' = A p from p0 at t = 0 to every point of t_grid (ascending,
/// non-negative). Step size is halved until two successive solutions differ by
/// less than control.tolerance in max norm, on both p and the survival curve.
inline ForwardSolution integrate(const TruncatedGenerator& gen, std::span<const double> p0,
                                 const std::vector<double>& t_grid, const ForwardControl& control = {}) {
  const auto m = static_cast<std::size_t>(gen.size);
  if (p0.size() != m) throw Error(ErrorKind::ConfigError, "p0 length differs from N");
  double mass = 0.0;
  for (double v : p0) {
    if (!(v >= 0.0)) throw Error(ErrorKind::ConfigError, "p0 must be non-negative");
    mass += v;
  }
  if (mass > 1.0 + 1e-12) throw Error(ErrorKind::ConfigError, "p0 must have total mass <= 1");
  double prev_t = 0.0;
  for (double t : t_grid) {
    if (!(t >= prev_t)) throw Error(ErrorKind::ConfigError, "t_grid must be ascending and non-negative");
    prev_t = t;
  }

  const Tridiagonal a = gen.matrix();
  const double horizon = t_grid.empty() ? 0.0 : t_grid.back();
  double h = horizon > 0.0 ? horizon / control.initial_steps : 1.0;
  long steps = 0;
  std::vector<double> coarse = detail::run(a, p0, t_grid, h, control.smoothing_steps, steps);

  auto survival_of = [&](const std::vector<double>& flat) {
    std::vector<double> s(t_grid.size(), 0.0);
    for (std::size_t k = 0; k < t_grid.size(); ++k) {
      stats::CompensatedSum acc;
      for (std::size_t i = 0; i < m; ++i) acc.add(flat[k * m + i]);
      s[k] = acc.value();
    }
    return s;
  };

  bool converged = horizon == 0.0;
  std::vector<double> fine = coarse;
  for (int r = 0; r < control.max_refinements && !converged; ++r) {
    h *= 0.5;
    fine = detail::run(a, p0, t_grid, h, control.smoothing_steps, steps);
    double change = 0.0;
    for (std::size_t i = 0; i < fine.size(); ++i) change = std::max(change, std::abs(fine[i] - coarse[i]));
    const auto sf = survival_of(fine);
    const auto sc = survival_of(coarse);
    for (std::size_t k = 0; k < sf.size(); ++k) change = std::max(change, std::abs(sf[k] - sc[k]));
    converged = change < control.tolerance;
    coarse.swap(fine);
  }
  if (!converged) throw Error(ErrorKind::NoConvergence, "step refinement did not reach the requested tolerance");

  ForwardSolution sol;
  sol.t_grid = t_grid;
  sol.size = gen.size;
  sol.p = std::move(coarse);
  sol.steps = steps;
  sol.step_size = h;
  for (double& v : sol.p) {
    if (v < 0.0) {
      if (v < -control.negative_tolerance) {
        throw Error(ErrorKind::NegativeMass, "probability " + std::to_string(v) + " below tolerance");
      }
      v = 0.0;
      ++sol.clamped;
    }
  }
  sol.survival = survival_of(sol.p);
  return sol;
}

/// Lower and upper bounds on the survival P(tau > t) of the untruncated
/// minimal chain started from p0 on levels 1..N.
///
/// Lower: absorbing truncation, i.e. P(chain has not hit N+1 by t).
/// Upper: with tau_{N+1} the hitting time of N+1 and R the escape time
/// after it, P(tau > t) <= P(tau_{N+1} > t - s) + P(R > s), and
/// P(R > s) <= E_{N+1}[tau] / s by Markov's inequality. We take
/// s = sqrt(E_{N+1}[tau]) and cap the bound at the initial mass.
struct SurvivalBracket {
  ForwardSolution lower;
  std::vector<double> upper;
  double shift = 0.0;      // s
  double tail_mean = 0.0;  // E_{N+1}[tau]

  double width(std::size_t k) const { return upper[k] - lower.survival[k]; }
};

inline SurvivalBracket survival_bracket(const SpectralModel& model, int levels, std::span<const double> p0,
                                        const std::vector<double>& t_grid, const ForwardControl& control = {}) {
  SurvivalBracket b;
  b.tail_mean = model.escape_mean_from(levels + 1);
  b.shift = std::sqrt(b.tail_mean);

  std::vector<double> grid;
  std::vector<std::size_t> at_t(t_grid.size()), at_shift(t_grid.size(), SIZE_MAX);
  for (std::size_t k = 0; k < t_grid.size(); ++k) {
    const double ts = t_grid[k] - b.shift;
    if (ts > 0.0) {
      at_shift[k] = grid.size();
      grid.push_back(ts);
    }
    at_t[k] = grid.size();
    grid.push_back(t_grid[k]);
  }
  const auto gen = build_generator(model, levels, Boundary::Absorbing);
  const ForwardSolution full = integrate(gen, p0, grid, control);

  double mass = 0.0;
  for (double v : p0) mass += v;

  const auto m = static_cast<std::size_t>(levels);
  b.lower.t_grid = t_grid;
  b.lower.size = levels;
  b.lower.clamped = full.clamped;
  b.lower.steps = full.steps;
  b.lower.step_size = full.step_size;
  for (std::size_t k = 0; k < t_grid.size(); ++k) {
    const std::size_t row = at_t[k];
    b.lower.p.insert(b.lower.p.end(), full.p.begin() + static_cast<long>(row * m),
                     full.p.begin() + static_cast<long>((row + 1) * m));
    b.lower.survival.push_back(full.survival[row]);
    const double shifted = at_shift[k] == SIZE_MAX ? mass : full.survival[at_shift[k]];
    b.upper.push_back(std::min(mass, shifted + b.tail_mean / b.shift));
  }
  return b;
}

struct QMeanEnergy {
  std::vector<double> values;  // E^Q[E(t)] = e0 * survival
  std::vector<double> bound;   // e0 * exp(-t/nu_inf + h)
};

inline QMeanEnergy q_mean_energy(const SpectralModel& model, const ForwardSolution& solution, double e0) {
  QMeanEnergy q;
  const double ni = model.nu_infinity();
  const double h = model.entropy_offset();
  for (std::size_t k = 0; k < solution.t_grid.size(); ++k) {
    q.values.push_back(e0 * solution.survival[k]);
    q.bound.push_back(e0 * std::exp(-solution.t_grid[k] / ni + h));
  }
  return q;
}

/// Transient probabilities by uniformization: with Lambda the largest total
/// rate and P = I + A / Lambda,
///   p(t) = sum_k Poisson(k; Lambda t) P^k p0.
/// Poisson weights are built by ratio recursion outward from the mode and
/// normalized; cells whose weight falls below tail_mass * 1e-8 of the mode are
/// dropped, leaving far less than tail_mass of the Poisson law unaccounted.
inline std::vector<double> uniformization_reference(const TruncatedGenerator& gen, std::span<const double> p0,
                                                    double t, double tail_mass = 1e-12,
                                                    double term_limit = 5e7) {
  const auto m = static_cast<std::size_t>(gen.size);
  std::vector<double> result(p0.begin(), p0.end());
  if (t == 0.0) return result;
  const double rate = gen.max_total_rate();
  const double mean = rate * t;
  if (mean + 10.0 * std::sqrt(mean) + 20.0 > term_limit) {
    throw Error(ErrorKind::TermLimitExceeded, "uniformization needs about " + std::to_string(mean) + " terms");
  }

  const double cutoff = tail_mass * 1e-8;
  const auto mode = static_cast<long>(std::floor(mean));
  std::vector<double> below{1.0};  // weights at mode, mode-1, ...
  for (long k = mode; k > 0; --k) {
    const double w = below.back() * static_cast<double>(k) / mean;
    if (w < cutoff) break;
    below.push_back(w);
  }
  std::vector<double> above;  // weights at mode+1, mode+2, ...
  double w = 1.0;
  for (long k = mode + 1;; ++k) {
    w *= mean / static_cast<double>(k);
    if (w < cutoff) break;
    above.push_back(w);
  }
  const long first = mode - static_cast<long>(below.size()) + 1;
  std::vector<double> weights(below.rbegin(), below.rend());
  weights.insert(weights.end(), above.begin(), above.end());
  stats::CompensatedSum total;
  for (double x : weights) total.add(x);
  const double norm = total.value();

  const Tridiagonal a = gen.matrix();
  std::vector<double> v(p0.begin(), p0.end()), next(m);
  std::vector<stats::CompensatedSum> acc(m);
  const long last = first + static_cast<long>(weights.size()) - 1;
  for (long k = 0; k <= last; ++k) {
    if (k > 0) {
      for (std::size_t i = 0; i < m; ++i) {
        double s = v[i] + a.diag[i] / rate * v[i];
        if (i > 0) s += a.lower[i] / rate * v[i - 1];
        if (i + 1 < m) s += a.upper[i] / rate * v[i + 1];
        next[i] = s;
      }
      v.swap(next);
    }
    if (k >= first) {
      const double wk = weights[static_cast<std::size_t>(k - first)] / norm;
      for (std::size_t i = 0; i < m; ++i) acc[i].add(wk * v[i]);
    }
  }
  for (std::size_t i = 0; i < m; ++i) result[i] = acc[i].value();
  return result;
}

}  // namespace dyadic::forward
