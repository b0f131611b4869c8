#include <cmath>
#include <numbers>
#include <vector>

#include <gtest/gtest.h>

#include "dyadic/error.hpp"
#include "dyadic/stats.hpp"

namespace st = dyadic::stats;

TEST(Summary, HandComputed) {
  const std::vector<double> x{1.0, 2.0, 4.0, 7.0};
  const auto s = st::summarize(x);
  EXPECT_EQ(s.count, 4u);
  EXPECT_DOUBLE_EQ(s.mean, 3.5);
  // Deviations -2.5 -1.5 .5 3.5: squares sum to 21.
  EXPECT_DOUBLE_EQ(s.variance, 7.0);
  EXPECT_DOUBLE_EQ(s.se, std::sqrt(7.0 / 4.0));
}

TEST(Summary, LargeOffsetStable) {
  std::vector<double> x;
  for (int i = 0; i < 1000; ++i) x.push_back(1e9 + (i % 2 ? 1.0 : -1.0));
  const auto s = st::summarize(x);
  EXPECT_DOUBLE_EQ(s.mean, 1e9);
  EXPECT_NEAR(s.variance, 1000.0 / 999.0, 1e-9);
}

TEST(CompensatedSum, RecoversSmallTerms) {
  st::CompensatedSum s;
  s.add(1.0);
  for (int i = 0; i < 10000; ++i) s.add(1e-16);
  s.add(-1.0);
  EXPECT_NEAR(s.value(), 1e-12, 1e-20);
}

TEST(Quantile, Interpolates) {
  EXPECT_DOUBLE_EQ(st::median({3.0, 1.0, 2.0}), 2.0);
  EXPECT_DOUBLE_EQ(st::median({4.0, 1.0, 2.0, 3.0}), 2.5);
  EXPECT_DOUBLE_EQ(st::quantile({0.0, 10.0}, 0.3), 3.0);
  EXPECT_THROW(st::quantile({}, 0.5), dyadic::Error);
}

TEST(OlsSlope, ExactLine) {
  const std::vector<double> x{0.0, 1.0, 2.0, 3.0};
  const std::vector<double> y{5.0, 3.0, 1.0, -1.0};
  EXPECT_NEAR(st::ols_slope(x, y), -2.0, 1e-14);
}

TEST(Kolmogorov, ReferenceValues) {
  // Q_KS(1) = 2 sum (-1)^{k-1} e^{-2k^2}, summed directly.
  double ref = 0.0;
  for (int k = 1; k < 50; ++k) ref += (k % 2 ? 2.0 : -2.0) * std::exp(-2.0 * k * k);
  EXPECT_NEAR(st::kolmogorov_sf(1.0), ref, 1e-15);
  EXPECT_NEAR(st::kolmogorov_sf(1.3581), 0.05, 2e-4);
  EXPECT_DOUBLE_EQ(st::kolmogorov_sf(0.0), 1.0);
}

TEST(Ks, StatisticByHand) {
  // Uniform cdf, sample {0.1, 0.6}: D = max(0.5-0.1, 0.6-0.5, 1-0.6) = 0.4.
  const auto r = st::ks_test({0.6, 0.1}, [](double x) { return x; });
  EXPECT_NEAR(r.statistic, 0.4, 1e-15);
  EXPECT_EQ(r.count, 2u);
  EXPECT_THROW(st::ks_test({}, [](double x) { return x; }), dyadic::Error);
}

TEST(ChiSquare, StatisticAndPooling) {
  // Four equiprobable cells, 100 draws.
  const std::vector<std::size_t> counts{30, 20, 25, 25};
  const std::vector<double> p{0.25, 0.25, 0.25, 0.25};
  const auto r = st::chi_square_gof(counts, p, 100);
  EXPECT_NEAR(r.statistic, (25.0 + 25.0) / 25.0, 1e-12);
  EXPECT_EQ(r.dof, 3);
  // Survival of chi2(3) at 2: erfc(1) + sqrt(2/pi)*sqrt(2)*e^{-1}.
  const double sf = std::erfc(1.0) + 2.0 / std::sqrt(std::numbers::pi) * std::exp(-1.0);
  EXPECT_NEAR(r.p_value, sf, 1e-12);

  // Small cells are merged forward until the expected count reaches 5.
  const std::vector<std::size_t> c2{90, 4, 3, 3};
  const std::vector<double> p2{0.9, 0.04, 0.03, 0.03};
  const auto r2 = st::chi_square_gof(c2, p2, 100);
  EXPECT_EQ(r2.bins, 2);
  EXPECT_NEAR(r2.statistic, 0.0, 1e-12);
}

TEST(Ess, EqualAndDegenerateWeights) {
  EXPECT_NEAR(st::effective_sample_size(std::vector<double>(10, 3.0)), 10.0, 1e-12);
  EXPECT_NEAR(st::effective_sample_size(std::vector<double>{0.0, -800.0, -800.0}), 1.0, 1e-12);
  // Weights 1 and 2: 9/5.
  EXPECT_NEAR(st::effective_sample_size(std::vector<double>{0.0, std::log(2.0)}), 1.8, 1e-12);
}

TEST(Correlation, PerfectLinear) {
  const std::vector<double> x{1, 2, 3, 4};
  const std::vector<double> y{2, 4, 6, 8.0};
  EXPECT_NEAR(st::pearson_correlation(x, y), 1.0, 1e-14);
}
