#include <catch_amalgamated.hpp>

#include <cmath>
#include <limits>

#include "confball/bounds.hpp"
#include "oracles.hpp"

using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;
using namespace confball;

namespace {
double zq(double tail) { return static_cast<double>(oracle::normal_quantile(1.0L - tail)); }
}  // namespace

TEST_CASE("lower-bound parameters") {
  const LowerBoundParams p(0.05, 0.1);
  CHECK(p.gamma == std::log1p(0.1 * 0.1));
  CHECK(p.valid_for_sup_bounds());
  CHECK_FALSE(LowerBoundParams(0.05, 0.3).valid_for_sup_bounds());
  CHECK(LowerBoundParams(0.05, 0.3).valid_for_zero_bounds());
  CHECK_FALSE(LowerBoundParams(0.05, 0.45).valid_for_zero_bounds());
}

TEST_CASE("single-level lower bounds") {
  const BesovBody b(1.0, 2, 2, 1.0);
  const LowerBoundParams p(0.05, 0.1);
  const double z = zq(0.25);
  const double expect_max = 0.01 / 0.85 * std::min(std::exp2(-12.0), z * z * 64.0 / 1e4);
  CHECK_THAT(lb_single_level_max(b, 6, 10000, p), WithinRel(expect_max, 1e-10));
  CHECK_THAT(lb_single_level_max(b.with_radius(1e6), 6, 10000, p), WithinRel(0.01 / 0.85 * z * z * 64.0 / 1e4, 1e-10));
  CHECK(lb_single_level_max(b, 6, 10000, LowerBoundParams(0.05, 1e-8)) < 1e-15);

  const BesovBody h(0.5, 2, 2, 1.0);
  const double g = std::log1p(0.01);
  const double expect_zero = 0.25 * 0.7 * std::min(std::exp2(-8.0), std::sqrt(g) * 16.0 / 1000);
  CHECK_THAT(lb_single_level_zero(h, 8, 1000, p), WithinRel(expect_zero, 1e-12));
  // Degenerate regime: the energy cap is the smaller branch.
  CHECK_THAT(lb_single_level_zero(h.with_radius(0.01), 8, 1000, p), WithinRel(0.25 * 0.7 * 1e-4 * std::exp2(-8.0), 1e-12));
  CHECK_THROWS_AS(lb_single_level_zero(h, 8, 1000, LowerBoundParams(0.05, 0.45)), std::invalid_argument);
}

TEST_CASE("global lower bounds") {
  const LowerBoundParams p(0.05, 0.05);
  const BesovBody b(1.0, 2, 2, 1.0);
  const double z = zq(0.15);
  const double N = std::exp2(20.0);
  const double n = 1024;
  const double second = std::pow(z, -4.0 / 3.0) * std::pow(n, -2.0 / 3.0);
  CHECK_THAT(lb_global_max(b, N, 1024, p), WithinRel(0.0025 / 0.9 * z * z * std::min(N / n, second), 1e-10));
  CHECK_THAT(lb_global_max(b, 3, 1024, p), WithinRel(0.0025 / 0.9 * z * z * 3 / n, 1e-10));

  const LowerBoundParams q(0.05, 0.1);
  const double g = std::log1p(0.01);
  const BesovBody two(0.5, 2, 2, 2.0);
  const double first = std::pow(2.0, -1.0 / 6.0 - 1.0) * std::pow(g, 1.0 / 6.0) * 1.0 * std::pow(n, -1.0 / 3.0);
  const double b_eps = std::min(first, 0.5 * std::pow(g, 0.25) * std::pow(N, 0.25) / std::sqrt(n));
  CHECK_THAT(lb_b_eps(two, 1.0, N, 1024, q), WithinRel(b_eps, 1e-12));
  CHECK_THAT(lb_min_radius_sq(two, 1.0, N, 1024, q), WithinRel(0.7 * b_eps * b_eps, 1e-12));
  CHECK(lb_b_eps(two, 2.0 - 1e-12, N, 1024, q) < 1e-3 * b_eps);
  CHECK_THROWS_AS(lb_b_eps(two, 2.0, N, 1024, q), std::invalid_argument);

  CHECK_THAT(lb_honest_zero(1023, 1024, q), WithinRel(0.7 / 4 * std::sqrt(g) * std::sqrt(1023.0) / 1024, 1e-12));
  CHECK_THAT(lb_honest_zero(1024.0 * 1024.0, 1024, q), WithinRel(0.7 / 4 * std::sqrt(g), 1e-12));
  CHECK(lb_honest_zero(1023, 1024, LowerBoundParams(0.05, 1e-9)) < 1e-9);
}

TEST_CASE("hypercube Bayes rule") {
  const std::vector<double> zero(5, 0.0);
  for (double v : bayes_cube_rule(zero, 2.0)) CHECK(v == 2.0);
  const std::vector<double> neg{-0.1, -3.0, -1e-300};
  for (double v : bayes_cube_rule(neg, 2.0)) CHECK(v == -2.0);
  const std::vector<double> mixed{0.4, -0.2, 1.0};
  CHECK(bayes_cube_rule(mixed, 1.0) == std::vector<double>{1.0, -1.0, 1.0});

  CHECK_THAT(bayes_cube_risk(100, 1.0, 1.0), WithinAbs(15.8655, 1e-4));
  CHECK_THAT(bayes_cube_risk(100, 1.0, 1.0), WithinRel(static_cast<double>(100 * oracle::normal_cdf(-1.0L)), 1e-12));
  CHECK(bayes_cube_risk(10, 1e3, 1.0) == 0.0);
  CHECK_THAT(bayes_cube_risk(200, 0.7, 1.3), WithinRel(2 * bayes_cube_risk(100, 0.7, 1.3), 1e-15));
}

TEST_CASE("mixture bounds") {
  CHECK(l1_mixture_bound(4, 0.0, 10) == 0.0);
  const double a = std::pow(std::log(2.0) / (2 * 9.0), 0.25);
  CHECK_THAT(l1_mixture_bound(2, a, 3), WithinRel(1.0, 1e-12));
  CHECK_THAT(l1_mixture_bound(4, 0.05, 10), WithinRel(std::sqrt(std::expm1(0.0025)), 1e-12));
  CHECK_THAT(l1_mixture_bound(4, 0.05, 10), WithinAbs(0.05003, 1e-5));
  CHECK_THROWS_AS(l1_mixture_bound(1000, 10.0, 1000), std::overflow_error);

  const std::vector<double> y{0.3, -0.5, 1.2};
  CHECK(mixture_density_ratio(y, 3, 0.0, 10) == 1.0);
  const std::vector<double> z{0.0};
  CHECK_THAT(mixture_density_ratio(z, 1, 0.2, 10), WithinRel(std::exp(-10 * 0.04 / 2), 1e-14));
  const double direct = std::cosh(10 * 0.2 * 0.3) * std::cosh(10 * 0.2 * -0.5) * std::exp(-2 * 10 * 0.04 / 2);
  CHECK_THAT(mixture_density_ratio(y, 2, 0.2, 10), WithinRel(direct, 1e-13));
  CHECK_THROWS_AS(mixture_density_ratio(y, 4, 0.2, 10), std::invalid_argument);
}

TEST_CASE("chi-squared tail bounds") {
  CHECK_THAT(chi2_tail_upper(2, 1.0), WithinRel(0.5 * std::exp(-(1 - std::log(2.0))), 1e-14));
  CHECK(std::exp(-2.0) <= chi2_tail_upper(2, 1.0));
  CHECK_THAT(chi2_tail_upper(7, 1e-9), WithinAbs(0.5, 1e-9));
  CHECK_THAT(chi2_tail_upper_cubic(3, 0.5), WithinRel(0.5 * std::exp(-0.25 * 3 / 4 + 0.125 * 3 / 6), 1e-14));
  CHECK_THAT(chi2_tail_lower(4, 0.5), WithinRel(std::exp(-0.25), 1e-14));
  CHECK(static_cast<double>(oracle::chi2_cdf(4, 2.0L)) <= chi2_tail_lower(4, 0.5));
  CHECK(static_cast<double>(oracle::chi2_cdf(2, 1e-9L)) <= chi2_tail_lower(2, 1 - 1e-9));
  CHECK_THROWS_AS(chi2_tail_lower(4, 1.0), std::invalid_argument);

  for (int m = 1; m <= 50; ++m) {
    for (int i = 1; i <= 30; ++i) {
      const long double d = 0.1L * i;
      const double exact = static_cast<double>(1 - oracle::chi2_cdf(m, (1 + d) * m));
      REQUIRE(exact <= chi2_tail_upper(m, static_cast<double>(d)) * (1 + 1e-12));
    }
    for (int i = 1; i <= 19; ++i) {
      const long double d = 0.05L * i;
      REQUIRE(static_cast<double>(oracle::chi2_cdf(m, (1 - d) * m)) <= chi2_tail_lower(m, static_cast<double>(d)) * (1 + 1e-12));
    }
  }
}

TEST_CASE("block keep bounds") {
  CHECK_THAT(tau_threshold(0.5).lambda, WithinAbs(static_cast<double>(oracle::lambda_root(2.0L)), 1e-12));
  CHECK_THAT(tau_threshold(1e-9).lambda, WithinAbs(1.0, 1e-3));
  CHECK_THAT(tau_threshold(1e9).lambda, WithinAbs(static_cast<double>(oracle::lambda_root(3.0L)), 1e-6));
  CHECK_THAT(tau_threshold(1e9).lambda, WithinAbs(4.5052, 1e-4));

  const auto small = block_keep_bounds(1.0, 7, 0.0, 1.0);
  CHECK(small.which == KeepBoundCase::small_signal);
  CHECK_THAT(small.bound, WithinRel(0.5 * std::exp(-2.0 / 3.0 * 7), 1e-14));
  const auto large = block_keep_bounds(1.0, 7, 4 * lambda_star() * 7, 1.0);
  CHECK(large.which == KeepBoundCase::large_signal);
  CHECK_THAT(large.bound, WithinRel(0.5 * std::exp(-14.0), 1e-14));
  CHECK(block_keep_bounds(1.0, 7, 2 * lambda_star() * 7, 1.0).which == KeepBoundCase::none);
}

TEST_CASE("Besov tail and cardinality bounds") {
  const BesovBody b(0.5, 2, 2, 2.0);
  CHECK_THAT(besov_tail_bound(b, 0), WithinRel(4.0 / 0.5, 1e-15));
  const BesovBody steep(40.0, 2, 2, 1.0);
  CHECK(besov_tail_bound(steep, 1) < 1e-20);
  CHECK(besov_card_bound(b.with_radius(1e-12), 4.0, 7, 1024) < 1e-6);
  CHECK_THAT(besov_card_bound(b, 8.0, 7, 1024) / besov_card_bound(b, 4.0, 7, 1024), WithinRel(std::pow(2.0, -0.5), 1e-14));
}

TEST_CASE("adaptation range") {
  auto r = adaptation_range(1024.0 * 1024.0, 1024, 0.3);
  CHECK(r.regime == AdaptationRegime::large_N);
  CHECK(r.tau_high == 0.6);
  r = adaptation_range(1024, 1024, 0.1);
  CHECK(r.regime == AdaptationRegime::rho_small_beta);
  CHECK_THAT(r.tau_low, WithinAbs(0.1, 1e-15));
  CHECK_THAT(r.tau_high, WithinAbs(0.5, 1e-12));
  r = adaptation_range(1024, 1024, 0.3);
  CHECK(r.regime == AdaptationRegime::rho_large_beta);
  CHECK_THAT(r.tau_high, WithinAbs(0.6, 1e-12));
  // Both rows agree at beta = 1/(2 rho) - 1/4.
  const double rho = std::log(4096.0) / std::log(1024.0);
  const double edge = 1 / (2 * rho) - 0.25;
  CHECK_THAT(adaptation_range(4096, 1024, edge).tau_high, WithinAbs(1 / rho - 0.5, 1e-12));
  CHECK_THAT(adaptation_range(4096, 1024, edge - 1e-12).tau_high, WithinAbs(2 * edge, 1e-9));
}
