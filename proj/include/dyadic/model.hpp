#pragma once

// Wavenumber sequence of the dyadic model, the rates of the associated
// birth-and-death chain and the closed-form constants derived from them.
//
// Convention: k_0 = 0 for every model, including Geometric where lambda^0 = 1.
// This is what the boundary X_0 = 0 requires and it makes mu_1 = k_0^2 = 0,
// so the chain loses no mass at the bottom state.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "dyadic/error.hpp"

namespace dyadic {

/// Largest truncation level any module accepts. k_n^2 overflows for
/// Geometric(2) near n = 512; 256 leaves headroom for the squared rates.
inline constexpr int kMaxLevel = 256;

/// Knobs of the convergence heuristic used for Custom sequences.
struct SeriesPolicy {
  double rel_tol = 1e-12;          // relative change over the tail window => convergent
  double tail_fraction = 0.1;      // tail window as a fraction of the list
  double divergence_bound = 1e6;   // partial sum beyond this => divergent
  double power_law_cutoff = 1.0;   // fitted term decay exponent <= this => divergent
  std::size_t min_terms = 10;      // fewer terms => inconclusive
};

enum class SeriesVerdict { Convergent, Divergent, Inconclusive };

struct SeriesClassification {
  SeriesVerdict verdict = SeriesVerdict::Inconclusive;
  double partial_sum = 0.0;
  double tail_estimate = 0.0;  // NaN when no estimate is available
  std::string reason;
};

/// Decides convergence of a positive series from finitely many terms.
///
/// Order of tests: partial sum above divergence_bound (divergent), relative
/// change across the last tail_fraction of terms below rel_tol (convergent),
/// log-log slope of the terms over the tail window no steeper than
/// -power_law_cutoff (divergent, e.g. the harmonic series). Anything else is
/// inconclusive and carries a power-law tail estimate when one exists.
inline SeriesClassification classify_series(std::span<const double> terms,
                                            const SeriesPolicy& policy = {}) {
  SeriesClassification out;
  out.tail_estimate = std::nan("");
  const std::size_t count = terms.size();
  double sum = 0.0;
  double comp = 0.0;
  std::vector<double> partial(count);
  for (std::size_t i = 0; i < count; ++i) {
    const double y = terms[i] - comp;
    const double t = sum + y;
    comp = (t - sum) - y;
    sum = t;
    partial[i] = sum;
  }
  out.partial_sum = sum;
  if (!std::isfinite(sum) || sum > policy.divergence_bound) {
    out.verdict = SeriesVerdict::Divergent;
    out.reason = "partial sum exceeds divergence bound";
    return out;
  }
  if (count < policy.min_terms) {
    out.reason = "too few terms";
    return out;
  }
  auto window = static_cast<std::size_t>(std::ceil(policy.tail_fraction * static_cast<double>(count)));
  window = std::max<std::size_t>(1, std::min(window, count - 1));
  const double before = partial[count - 1 - window];
  const double change = sum - before;
  if (sum > 0.0 && change <= policy.rel_tol * sum) {
    out.verdict = SeriesVerdict::Convergent;
    out.tail_estimate = change;
    out.reason = "partial sums stabilized over tail window";
    return out;
  }
  // Power-law fit a_n ~ C n^{-p} between the window's end points.
  const std::size_t lo = count - 1 - window;
  const std::size_t hi = count - 1;
  if (terms[lo] > 0.0 && terms[hi] > 0.0) {
    const double p = -(std::log(terms[hi]) - std::log(terms[lo])) /
                     (std::log(static_cast<double>(hi + 1)) - std::log(static_cast<double>(lo + 1)));
    if (p <= policy.power_law_cutoff) {
      out.verdict = SeriesVerdict::Divergent;
      out.reason = "tail terms decay no faster than 1/n";
      return out;
    }
    out.tail_estimate = terms[hi] * static_cast<double>(count) / (p - 1.0);
  }
  out.reason = "partial sums not stabilized";
  return out;
}

struct RateTable {
  double lambda_n = 0.0;  // birth (up-jump) rate k_n^2
  double mu_n = 0.0;      // death (down-jump) rate k_{n-1}^2
  double pi_n = 0.0;      // up-jump probability lambda_n / (lambda_n + mu_n)
};

enum class Regularity { Regular, NotRegular };

constexpr const char* to_string(Regularity r) {
  return r == Regularity::Regular ? "Regular" : "NotRegular";
}

class SpectralModel {
 public:
  struct Geometric {
    double lambda;
  };
  struct Custom {
    std::vector<double> k;  // k_1, k_2, ...
  };

  static SpectralModel geometric(double lambda) {
    if (!(lambda > 1.0) || !std::isfinite(lambda)) {
      throw Error(ErrorKind::InvalidModel, "geometric model needs lambda > 1");
    }
    return SpectralModel(Geometric{lambda}, SeriesPolicy{});
  }

  static SpectralModel custom(std::vector<double> k, SeriesPolicy policy = {}) {
    if (k.empty()) throw Error(ErrorKind::InvalidModel, "custom model needs at least one wavenumber");
    for (double v : k) {
      if (!(v > 0.0) || !std::isfinite(v)) {
        throw Error(ErrorKind::InvalidModel, "custom wavenumbers must be positive and finite");
      }
    }
    return SpectralModel(Custom{std::move(k)}, policy);
  }

  bool is_geometric() const { return std::holds_alternative<Geometric>(kind_); }

  double lambda() const {
    if (!is_geometric()) throw Error(ErrorKind::InvalidModel, "lambda is defined for geometric models only");
    return std::get<Geometric>(kind_).lambda;
  }

  /// Number of listed wavenumbers for Custom models; empty for Geometric.
  std::optional<int> list_size() const {
    if (is_geometric()) return std::nullopt;
    return static_cast<int>(std::get<Custom>(kind_).k.size());
  }

  double wavenumber(int n) const {
    if (n < 0) throw Error(ErrorKind::IndexOutOfRange, "negative mode index");
    if (n == 0) return 0.0;
    if (is_geometric()) return std::pow(lambda(), n);
    const auto& k = std::get<Custom>(kind_).k;
    if (static_cast<std::size_t>(n) > k.size()) {
      throw Error(ErrorKind::IndexOutOfRange, "mode " + std::to_string(n) + " beyond custom list of " +
                                                  std::to_string(k.size()));
    }
    return k[static_cast<std::size_t>(n) - 1];
  }

  /// k_n^2, rejecting values that are not representable.
  double wavenumber_sq(int n) const {
    const double k = wavenumber(n);
    const double k2 = k * k;
    if (!std::isfinite(k2)) {
      throw Error(ErrorKind::OverflowRisk, "k_" + std::to_string(n) + "^2 is not representable");
    }
    return k2;
  }

  RateTable rates(int n) const {
    if (n < 1) throw Error(ErrorKind::IndexOutOfRange, "rates are defined for n >= 1");
    RateTable r;
    r.lambda_n = wavenumber_sq(n);
    r.mu_n = wavenumber_sq(n - 1);
    r.pi_n = n == 1 ? 1.0 : r.lambda_n / (r.lambda_n + r.mu_n);
    return r;
  }

  /// nu_n = sum_{i>=n} k_i^{-2}, the mean total time the chain spends in n.
  double nu(int n) const {
    if (n < 1) throw Error(ErrorKind::IndexOutOfRange, "nu is defined for n >= 1");
    if (is_geometric()) {
      const double r = ratio();
      return std::pow(lambda(), -2.0 * n) / (1.0 - r);
    }
    require(nu_series_, "sum k_n^-2");
    check_listed(n);
    return custom_nu_[static_cast<std::size_t>(n) - 1];
  }

  /// nu_inf = sum_n n k_n^{-2} = sum_n nu_n, the mean escape time from state 1.
  double nu_infinity() const {
    if (is_geometric()) {
      const double r = ratio();
      return r / ((1.0 - r) * (1.0 - r));
    }
    require(nu_inf_series_, "sum n k_n^-2");
    return custom_nu_inf_;
  }

  /// h = -sum_n (nu_n/nu_inf) log(nu_n/nu_inf).
  ///
  /// For Geometric(lambda) the weights nu_n/nu_inf = (1-r) r^{n-1} with
  /// r = lambda^-2 form a geometric law, whose entropy is
  /// -log(1-r) - r log(r)/(1-r).
  double entropy_offset() const {
    if (is_geometric()) {
      const double r = ratio();
      return -std::log1p(-r) - r * std::log(r) / (1.0 - r);
    }
    require(nu_inf_series_, "sum n k_n^-2");
    return custom_h_;
  }

  /// sum_{n>=m} nu_n.
  double tail_nu_sum(int m) const {
    if (m < 1) throw Error(ErrorKind::IndexOutOfRange, "tail sums start at m >= 1");
    if (is_geometric()) return nu(m) / (1.0 - ratio());
    require(nu_inf_series_, "sum n k_n^-2");
    const int size = *list_size();
    double s = 0.0;
    for (int n = size; n >= m; --n) s += custom_nu_[static_cast<std::size_t>(n) - 1];
    return s;
  }

  /// Mean escape time of the chain started at m:
  /// (m-1) nu_m + sum_{n>=m} nu_n, since the chain from m reaches a lower
  /// state n with probability nu_m/nu_n and then spends nu_n there on average.
  double escape_mean_from(int m) const {
    if (!is_geometric() && m > *list_size()) return 0.0;
    return (m - 1) * nu(m) + tail_nu_sum(m);
  }

  /// Probability that the chain started at i+1 never reaches i:
  /// (k_i^2 nu_i)^{-1}.
  double escape_probability(int i) const {
    if (i < 1) throw Error(ErrorKind::IndexOutOfRange, "escape probability needs i >= 1");
    if (is_geometric()) return 1.0 - ratio();
    return 1.0 / (wavenumber_sq(i) * nu(i));
  }

  /// Mean of the geometric number of visits to n: (k_n^2 + k_{n-1}^2) nu_n.
  double mean_visits(int n) const {
    if (n < 1) throw Error(ErrorKind::IndexOutOfRange, "mean visits needs n >= 1");
    if (is_geometric()) {
      const double r = ratio();
      return n == 1 ? 1.0 / (1.0 - r) : (1.0 + r) / (1.0 - r);
    }
    return (wavenumber_sq(n) + wavenumber_sq(n - 1)) * nu(n);
  }

  /// Asymptotic exponential rate bound for E^P[E(t)]:
  /// -(1/nu_inf)(1 - sqrt(e0 nu_inf))^2, defined only when nu_inf e0 < 1.
  std::optional<double> p_rate_bound(double e0) const {
    if (!(e0 >= 0.0)) throw Error(ErrorKind::DegenerateInput, "initial energy must be non-negative");
    const double ni = nu_infinity();
    if (ni * e0 >= 1.0) return std::nullopt;
    const double gap = 1.0 - std::sqrt(e0 * ni);
    return -(gap * gap) / ni;
  }

  /// Regular (honest) chain iff sum n k_n^-2 diverges.
  Regularity regularity_check() const {
    if (is_geometric()) return Regularity::NotRegular;
    switch (nu_inf_series_.verdict) {
      case SeriesVerdict::Convergent: return Regularity::NotRegular;
      case SeriesVerdict::Divergent: return Regularity::Regular;
      case SeriesVerdict::Inconclusive: break;
    }
    throw Error(ErrorKind::Inconclusive,
                "partial sum " + std::to_string(nu_inf_series_.partial_sum) + ", tail estimate " +
                    std::to_string(nu_inf_series_.tail_estimate) + " (" + nu_inf_series_.reason + ")");
  }

  const SeriesClassification& nu_series() const { return nu_series_; }
  const SeriesClassification& nu_inf_series() const { return nu_inf_series_; }

  /// Largest level n for which nu_n and k_n^2 can be requested.
  int max_level() const {
    if (is_geometric()) return kMaxLevel;
    return std::min(kMaxLevel, *list_size());
  }

 private:
  SpectralModel(std::variant<Geometric, Custom> kind, SeriesPolicy policy)
      : kind_(std::move(kind)), policy_(policy) {
    if (!is_geometric()) prepare_custom();
  }

  double ratio() const {
    const double l = lambda();
    return 1.0 / (l * l);
  }

  void check_listed(int n) const {
    if (n > *list_size()) {
      throw Error(ErrorKind::IndexOutOfRange,
                  "tail quantity at level " + std::to_string(n) + " beyond custom list");
    }
  }

  static void require(const SeriesClassification& s, const char* what) {
    if (s.verdict != SeriesVerdict::Convergent) {
      throw Error(ErrorKind::DivergentSeries, std::string(what) + ": " + s.reason + ", partial sum " +
                                                  std::to_string(s.partial_sum));
    }
  }

  void prepare_custom() {
    const auto& k = std::get<Custom>(kind_).k;
    const std::size_t m = k.size();
    std::vector<double> inv_sq(m), weighted(m);
    for (std::size_t i = 0; i < m; ++i) {
      inv_sq[i] = 1.0 / (k[i] * k[i]);
      weighted[i] = static_cast<double>(i + 1) * inv_sq[i];
    }
    nu_series_ = classify_series(inv_sq, policy_);
    nu_inf_series_ = classify_series(weighted, policy_);

    // Suffix sums from the small end.
    custom_nu_.assign(m, 0.0);
    double acc = 0.0;
    for (std::size_t i = m; i-- > 0;) {
      acc += inv_sq[i];
      custom_nu_[i] = acc;
    }
    double total = 0.0;
    for (std::size_t i = m; i-- > 0;) total += custom_nu_[i];
    custom_nu_inf_ = total;
    double h = 0.0;
    for (double v : custom_nu_) {
      const double q = v / total;
      if (q > 0.0) h -= q * std::log(q);
    }
    custom_h_ = h;
  }

  std::variant<Geometric, Custom> kind_;
  SeriesPolicy policy_;
  SeriesClassification nu_series_{SeriesVerdict::Convergent, 0.0, 0.0, "closed form"};
  SeriesClassification nu_inf_series_{SeriesVerdict::Convergent, 0.0, 0.0, "closed form"};
  std::vector<double> custom_nu_;
  double custom_nu_inf_ = 0.0;
  double custom_h_ = 0.0;
};

struct DecayConstants {
  std::vector<double> nu;  // nu_1 .. nu_levels
  double nu_inf = 0.0;
  double h = 0.0;
  bool regular = false;
};

inline DecayConstants decay_constants(const SpectralModel& model, int levels) {
  DecayConstants d;
  d.nu.reserve(static_cast<std::size_t>(levels));
  for (int n = 1; n <= levels; ++n) d.nu.push_back(model.nu(n));
  d.nu_inf = model.nu_infinity();
  d.h = model.entropy_offset();
  d.regular = model.regularity_check() == Regularity::Regular;
  return d;
}

/// Bounds e^{-t/nu_1} <= P(tau > t) <= e^{-t/nu_inf + h} on the escape time
/// of the chain started at 1.
struct SurvivalBounds {
  double lower;
  double upper;
};

inline SurvivalBounds survival_bounds(const SpectralModel& model, double t) {
  return {std::exp(-t / model.nu(1)), std::exp(-t / model.nu_infinity() + model.entropy_offset())};
}

}  // namespace dyadic
