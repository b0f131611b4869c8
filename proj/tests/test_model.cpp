#include <cmath>
#include <numeric>
#include <vector>

#include <gtest/gtest.h>

#include "dyadic/model.hpp"

using dyadic::ErrorKind;
using dyadic::Regularity;
using dyadic::SpectralModel;

namespace {

// Oracles by brute partial summation in long double, independent of the
// closed forms in the library.
long double nu_oracle(double lambda, int n) {
  long double s = 0;
  for (int i = 4000; i >= n; --i) s += std::pow(static_cast<long double>(lambda), -2.0L * i);
  return s;
}

long double nu_inf_oracle(double lambda) {
  long double s = 0;
  for (int i = 4000; i >= 1; --i) s += i * std::pow(static_cast<long double>(lambda), -2.0L * i);
  return s;
}

long double h_oracle(double lambda) {
  const long double ni = nu_inf_oracle(lambda);
  long double h = 0;
  for (int n = 1; n <= 4000; ++n) {
    const long double q = nu_oracle(lambda, n) / ni;
    if (q > 0) h -= q * std::log(q);
  }
  return h;
}

template <class F>
ErrorKind kind_of(F&& f) {
  try {
    f();
  } catch (const dyadic::Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "expected an error";
  return ErrorKind::ConfigError;
}

}  // namespace

TEST(Wavenumber, GeometricValues) {
  const auto m = SpectralModel::geometric(2.0);
  EXPECT_EQ(m.wavenumber(0), 0.0);
  EXPECT_EQ(m.wavenumber(1), 2.0);
  EXPECT_EQ(m.wavenumber(3), 8.0);
  EXPECT_EQ(m.wavenumber_sq(40), std::ldexp(1.0, 80));
}

TEST(Wavenumber, Errors) {
  EXPECT_EQ(kind_of([] { SpectralModel::geometric(1.0); }), ErrorKind::InvalidModel);
  EXPECT_EQ(kind_of([] { SpectralModel::geometric(0.5); }), ErrorKind::InvalidModel);
  EXPECT_EQ(kind_of([] { SpectralModel::custom({1.0, -2.0}); }), ErrorKind::InvalidModel);
  EXPECT_EQ(kind_of([] { SpectralModel::custom({1.0, NAN}); }), ErrorKind::InvalidModel);
  EXPECT_EQ(kind_of([] { SpectralModel::custom({}); }), ErrorKind::InvalidModel);
  const auto c = SpectralModel::custom({1.0, 3.0, 5.0});
  EXPECT_EQ(c.wavenumber(0), 0.0);
  EXPECT_EQ(c.wavenumber(3), 5.0);
  EXPECT_EQ(kind_of([&] { c.wavenumber(4); }), ErrorKind::IndexOutOfRange);
  EXPECT_EQ(kind_of([&] { c.wavenumber(-1); }), ErrorKind::IndexOutOfRange);
}

TEST(Rates, HandValues) {
  const auto m = SpectralModel::geometric(2.0);
  auto r = m.rates(1);
  EXPECT_EQ(r.lambda_n, 4.0);
  EXPECT_EQ(r.mu_n, 0.0);
  EXPECT_EQ(r.pi_n, 1.0);
  r = m.rates(2);
  EXPECT_EQ(r.lambda_n, 16.0);
  EXPECT_EQ(r.mu_n, 4.0);
  EXPECT_DOUBLE_EQ(r.pi_n, 0.8);
  r = m.rates(3);
  EXPECT_EQ(r.lambda_n, 64.0);
  EXPECT_EQ(r.mu_n, 16.0);
  EXPECT_DOUBLE_EQ(r.pi_n, 0.8);
}

TEST(Rates, GeometricUpProbabilityIsConstant) {
  for (double lambda : {1.5, 2.0, 3.0, 10.0}) {
    const auto m = SpectralModel::geometric(lambda);
    const double expected = lambda * lambda / (lambda * lambda + 1.0);
    for (int n = 2; n <= 30; ++n) EXPECT_NEAR(m.rates(n).pi_n, expected, 1e-15) << lambda << " " << n;
  }
}

TEST(Nu, MatchesPartialSummation) {
  const auto m = SpectralModel::geometric(2.0);
  EXPECT_NEAR(m.nu(1), 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(m.nu(2), 1.0 / 12.0, 1e-16);
  EXPECT_NEAR(m.nu_infinity(), 4.0 / 9.0, 1e-15);
  for (double lambda : {1.1, 2.0, 3.0, 10.0}) {
    const auto g = SpectralModel::geometric(lambda);
    for (int n : {1, 2, 5, 17}) {
      const double o = static_cast<double>(nu_oracle(lambda, n));
      EXPECT_NEAR(g.nu(n), o, 1e-12 * o) << lambda << " " << n;
    }
    const double oi = static_cast<double>(nu_inf_oracle(lambda));
    EXPECT_NEAR(g.nu_infinity(), oi, 1e-12 * oi);
  }
}

TEST(Nu, DifferencesAreInverseSquares) {
  const auto m = SpectralModel::geometric(2.0);
  for (int n = 1; n < 60; ++n) {
    const double d = m.nu(n) - m.nu(n + 1);
    const double k2 = 1.0 / m.wavenumber_sq(n);
    EXPECT_NEAR(d, k2, 1e-12 * k2) << n;
  }
}

TEST(Nu, PartialSumsIncreaseToNuInfinity) {
  const auto m = SpectralModel::geometric(2.0);
  double s = 0.0, prev = 0.0;
  for (int n = 1; n <= 60; ++n) {
    s += m.nu(n);
    // Past n ~ 25 the terms drop below the rounding unit of the sum.
    if (n <= 20) EXPECT_GT(s, prev);
    prev = s;
  }
  EXPECT_NEAR(s, m.nu_infinity(), 1e-15);
  for (int n = 1; n < 20; ++n) EXPECT_LE(m.nu(n), m.nu_infinity());
}

TEST(Entropy, ClosedFormAndPartialSums) {
  const auto m = SpectralModel::geometric(2.0);
  const double closed = (8.0 / 3.0) * std::log(2.0) - std::log(3.0);
  EXPECT_NEAR(m.entropy_offset(), closed, 1e-12);
  EXPECT_NEAR(m.entropy_offset(), 0.749780, 1e-6);
  for (double lambda : {1.5, 2.0, 10.0}) {
    const auto g = SpectralModel::geometric(lambda);
    EXPECT_NEAR(g.entropy_offset(), static_cast<double>(h_oracle(lambda)), 1e-9) << lambda;
    EXPECT_GE(g.entropy_offset(), 0.0);
  }
  EXPECT_LT(SpectralModel::geometric(10.0).entropy_offset(), m.entropy_offset());
}

TEST(Entropy, PointMassCustomTailIsZero) {
  // nu_1 = 1 + 1e-60 + ..., nu_n/nu_inf is 1 at n = 1 to double precision.
  std::vector<double> k = {1.0};
  for (int i = 1; i <= 10; ++i) k.push_back(std::pow(10.0, 15.0 * i));
  const auto c = SpectralModel::custom(k);
  EXPECT_EQ(c.regularity_check(), Regularity::NotRegular);
  EXPECT_NEAR(c.entropy_offset(), 0.0, 1e-12);
}

TEST(Entropy, CustomListAgreesWithGeometricClosedForm) {
  std::vector<double> k;
  for (int n = 1; n <= 200; ++n) k.push_back(std::pow(2.0, n));
  const auto c = SpectralModel::custom(k);
  const auto g = SpectralModel::geometric(2.0);
  EXPECT_NEAR(c.nu(1), g.nu(1), 1e-15);
  EXPECT_NEAR(c.nu_infinity(), g.nu_infinity(), 1e-15);
  EXPECT_NEAR(c.entropy_offset(), g.entropy_offset(), 1e-12);
  EXPECT_EQ(c.regularity_check(), Regularity::NotRegular);
}

TEST(Regularity, Verdicts) {
  EXPECT_EQ(SpectralModel::geometric(2.0).regularity_check(), Regularity::NotRegular);

  const auto constant = SpectralModel::custom(std::vector<double>(2000, 1.0));
  EXPECT_EQ(constant.regularity_check(), Regularity::Regular);
  EXPECT_EQ(kind_of([&] { constant.nu_infinity(); }), ErrorKind::DivergentSeries);

  std::vector<double> linear(1000000);
  std::iota(linear.begin(), linear.end(), 1.0);
  const auto harmonic = SpectralModel::custom(linear);
  EXPECT_EQ(harmonic.regularity_check(), Regularity::Regular);
  EXPECT_EQ(kind_of([&] { harmonic.entropy_offset(); }), ErrorKind::DivergentSeries);

  // k_n = n^{1.2}: sum n^{-1.4} converges but far too slowly to decide.
  std::vector<double> slow;
  for (int n = 1; n <= 1000; ++n) slow.push_back(std::pow(n, 1.2));
  const auto undecided = SpectralModel::custom(slow);
  EXPECT_EQ(kind_of([&] { undecided.regularity_check(); }), ErrorKind::Inconclusive);
  EXPECT_TRUE(std::isfinite(undecided.nu_inf_series().tail_estimate));
  EXPECT_GT(undecided.nu_inf_series().partial_sum, 0.0);
}

TEST(SeriesHeuristic, Classification) {
  using dyadic::SeriesVerdict;
  std::vector<double> geometric;
  for (int n = 1; n <= 100; ++n) geometric.push_back(std::pow(0.5, n));
  EXPECT_EQ(dyadic::classify_series(geometric).verdict, SeriesVerdict::Convergent);
  EXPECT_NEAR(dyadic::classify_series(geometric).partial_sum, 1.0, 1e-15);

  EXPECT_EQ(dyadic::classify_series(std::vector<double>(5, 1e7)).verdict, SeriesVerdict::Divergent);
  EXPECT_EQ(dyadic::classify_series(std::vector<double>(5, 1.0)).verdict, SeriesVerdict::Inconclusive);
}

TEST(EscapeProbability, Values) {
  const auto m = SpectralModel::geometric(2.0);
  EXPECT_NEAR(m.escape_probability(1), 0.75, 1e-15);
  EXPECT_NEAR(m.escape_probability(7), 0.75, 1e-15);
  EXPECT_NEAR(SpectralModel::geometric(10.0).escape_probability(1), 0.99, 1e-15);
  // Definition (k_i^2 nu_i)^{-1} evaluated from the oracle.
  for (int i = 1; i <= 6; ++i) {
    const double direct = 1.0 / (m.wavenumber_sq(i) * static_cast<double>(nu_oracle(2.0, i)));
    EXPECT_NEAR(m.escape_probability(i), direct, 1e-12);
  }
}

TEST(MeanVisits, Values) {
  const auto m = SpectralModel::geometric(2.0);
  EXPECT_NEAR(m.mean_visits(1), 4.0 / 3.0, 1e-15);
  EXPECT_NEAR(m.mean_visits(2), 5.0 / 3.0, 1e-15);
  EXPECT_NEAR(m.mean_visits(5), 5.0 / 3.0, 1e-15);
  for (int n = 1; n <= 10; ++n) {
    const auto r = m.rates(n);
    EXPECT_NEAR(m.mean_visits(n), (r.lambda_n + r.mu_n) * m.nu(n), 1e-13);
    EXPECT_GE(m.mean_visits(n), 1.0);
  }
  // Identity from the visit-count argument: mean = (pi_n sigma)^{-1} with the
  // return probability of a departure from n.
  for (int n = 2; n <= 10; ++n) {
    const double pi = m.rates(n).pi_n;
    const double sigma = m.escape_probability(n);
    EXPECT_NEAR(m.mean_visits(n), 1.0 / (pi * sigma), 1e-13);
  }
}

TEST(PRateBound, Values) {
  const auto m = SpectralModel::geometric(2.0);
  ASSERT_TRUE(m.p_rate_bound(1.0).has_value());
  EXPECT_NEAR(*m.p_rate_bound(1.0), -0.25, 1e-15);
  EXPECT_NEAR(*m.p_rate_bound(0.0), -9.0 / 4.0, 1e-15);
  EXPECT_FALSE(m.p_rate_bound(3.0).has_value());
  EXPECT_FALSE(m.p_rate_bound(9.0 / 4.0).has_value());
}

TEST(EscapeMean, TailQuantities) {
  const auto m = SpectralModel::geometric(2.0);
  EXPECT_NEAR(m.escape_mean_from(1), m.nu_infinity(), 1e-15);
  // E_m tau by partial sums: (m-1) nu_m + sum_{n>=m} nu_n.
  for (int start : {2, 5, 61}) {
    long double tail = 0;
    for (int n = 3000; n >= start; --n) tail += nu_oracle(2.0, n);
    const long double expected = (start - 1) * nu_oracle(2.0, start) + tail;
    EXPECT_NEAR(m.escape_mean_from(start), static_cast<double>(expected), 1e-12 * static_cast<double>(expected));
  }
  EXPECT_LT(m.tail_nu_sum(61), 1e-35);
}

TEST(SurvivalBounds, Values) {
  const auto m = SpectralModel::geometric(2.0);
  const auto b = dyadic::survival_bounds(m, 1.0);
  EXPECT_NEAR(b.lower, std::exp(-3.0), 1e-15);
  EXPECT_NEAR(b.upper, std::exp(-2.25 + (8.0 / 3.0) * std::log(2.0) - std::log(3.0)), 1e-15);
  EXPECT_NEAR(b.lower, 0.0498, 1e-4);
  EXPECT_NEAR(b.upper, 0.2231, 1e-4);
}

TEST(DecayConstants, Table) {
  const auto m = SpectralModel::geometric(2.0);
  const auto d = dyadic::decay_constants(m, 12);
  ASSERT_EQ(d.nu.size(), 12u);
  EXPECT_FALSE(d.regular);
  double weights = 0.0;
  for (int n = 1; n <= 200; ++n) weights += m.nu(n) / m.nu_infinity();
  EXPECT_NEAR(weights, 1.0, 1e-10);
  for (std::size_t i = 1; i < d.nu.size(); ++i) EXPECT_LT(d.nu[i], d.nu[i - 1]);
}

TEST(Overflow, GuardsAtLevelCap) {
  const auto m = SpectralModel::geometric(2.0);
  EXPECT_NO_THROW(m.wavenumber_sq(256));
  EXPECT_EQ(kind_of([&] { SpectralModel::geometric(1e10).wavenumber_sq(40); }), ErrorKind::OverflowRisk);
}
