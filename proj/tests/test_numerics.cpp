#include <catch_amalgamated.hpp>

#include <cmath>
#include <limits>
#include <vector>

#include "confball/numerics.hpp"
#include "oracles.hpp"

using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;
using namespace confball;

TEST_CASE("normal cdf against series and continued fraction") {
  CHECK(std_normal_cdf(0.0) == 0.5);
  CHECK_THAT(std_normal_cdf(-1.0), WithinRel(static_cast<double>(oracle::normal_cdf(-1.0L)), 1e-14));
  CHECK_THAT(std_normal_cdf(-1.0), WithinAbs(0.15865525393145705, 1e-15));
  CHECK(std_normal_cdf(8.0) >= 1.0 - 1e-14);
  for (double x : {-7.5, -4.0, -2.2, -0.3, 0.7, 1.9, 2.8, 5.0}) {
    CHECK_THAT(std_normal_cdf(x), WithinRel(static_cast<double>(oracle::normal_cdf(x)), 1e-12));
  }
  CHECK_THROWS_AS(std_normal_cdf(std::numeric_limits<double>::quiet_NaN()), std::domain_error);
}

TEST_CASE("normal quantile") {
  CHECK(std_normal_quantile(0.5) == 0.0);
  CHECK_THAT(std_normal_quantile(0.975), WithinAbs(1.959963984540054, 1e-12));
  CHECK_THAT(std_normal_quantile(0.95), WithinAbs(1.6448536269514722, 1e-12));
  for (double p : {1e-10, 0.001, 0.2, 0.6, 0.99, 1 - 1e-9}) {
    CHECK_THAT(std_normal_quantile(p), WithinRel(static_cast<double>(oracle::normal_quantile(p)), 1e-10));
  }
  for (double p : {0.001, 0.2, 0.375}) CHECK_THAT(std_normal_quantile(p), WithinAbs(-std_normal_quantile(1 - p), 1e-10));
  CHECK_THAT(z_upper(0.025), WithinAbs(1.959963984540054, 1e-12));
  CHECK_THROWS_AS(std_normal_quantile(0.0), std::domain_error);
  CHECK_THROWS_AS(std_normal_quantile(1.0), std::domain_error);
}

TEST_CASE("chi-squared cdf") {
  CHECK_THAT(chi2_cdf(2, 2 * std::log(2.0)), WithinAbs(0.5, 1e-15));
  CHECK_THAT(chi2_cdf(2, 4.0), WithinAbs(1 - std::exp(-2.0), 1e-15));
  CHECK_THAT(chi2_cdf(5, 5.0), WithinRel(static_cast<double>(oracle::chi2_cdf(5, 5.0L)), 1e-13));
  for (int m : {1, 3, 8, 25, 50}) {
    for (double x : {0.1, 1.0, 4.0, 12.0, 40.0}) {
      CHECK_THAT(chi2_cdf(m, x), WithinRel(static_cast<double>(oracle::chi2_cdf(m, x)), 1e-12));
      CHECK_THAT(chi2_cdf(m, x) + chi2_sf(m, x), WithinAbs(1.0, 1e-14));
    }
  }
  CHECK(chi2_cdf(3, 0.0) == 0.0);
}

TEST_CASE("chi-squared quantile") {
  CHECK_THAT(chi2_quantile(2, 0.5), WithinAbs(2 * std::log(2.0), 1e-10));
  CHECK_THAT(chi2_quantile(2, 0.95), WithinAbs(-2 * std::log(0.05), 1e-10));
  CHECK_THAT(chi2_quantile(10, 0.9), WithinRel(static_cast<double>(oracle::chi2_quantile(10, 0.9L)), 1e-10));
  for (int m : {1, 7, 64, 256}) {
    for (double p : {0.01, 0.5, 0.95, 0.999}) {
      CHECK_THAT(chi2_cdf(m, chi2_quantile(m, p)), WithinAbs(p, 1e-11));
    }
  }
}

TEST_CASE("threshold constant") {
  const auto star = solve_lambda(5.0);
  CHECK(std::round(star.lambda * 1e4) / 1e4 == 6.9368);
  CHECK_THAT(star.lambda, WithinAbs(static_cast<double>(oracle::lambda_root(5.0L)), 1e-12));
  CHECK(solve_lambda(1.0).lambda == 1.0);
  CHECK_THAT(solve_lambda(2.0).lambda, WithinAbs(static_cast<double>(oracle::lambda_root(2.0L)), 1e-12));
  CHECK_THAT(solve_lambda(2.0).lambda, WithinAbs(3.1462, 1e-4));
  CHECK_THAT(solve_lambda(3.0).lambda, WithinAbs(4.5052, 1e-4));
  CHECK(lambda_star() == star.lambda);
  CHECK_THROWS_AS(solve_lambda(0.5), std::domain_error);
}

TEST_CASE("compensated sum") {
  std::vector<double> xs{1e16, 1.0, -1e16, 1.0};
  CHECK(compensated_sum(xs) == 2.0);
  CompensatedSum s;
  for (int i = 0; i < 10; ++i) s += 0.1;
  CHECK(s.value() == 1.0);
}
