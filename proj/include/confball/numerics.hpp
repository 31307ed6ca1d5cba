#pragma once

// Special functions and root solvers used by the ball constructions and the
// lower-bound formulas. All functions are pure. "log" is the natural log.

#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>

#include <boost/math/special_functions/gamma.hpp>

namespace confball {

/// Neumaier-compensated accumulator. Order of add() calls is part of the
/// result, so reductions that must be bit-stable use a fixed order.
class CompensatedSum {
 public:
  void add(double x) noexcept {
    const double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x)) {
      comp_ += (sum_ - t) + x;
    } else {
      comp_ += (x - t) + sum_;
    }
    sum_ = t;
  }

  CompensatedSum& operator+=(double x) noexcept {
    add(x);
    return *this;
  }

  [[nodiscard]] double value() const noexcept { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

inline double compensated_sum(std::span<const double> xs) noexcept {
  CompensatedSum acc;
  for (double x : xs) acc.add(x);
  return acc.value();
}

namespace detail {

inline void require_probability_open(double p, const char* what) {
  if (!(p > 0.0 && p < 1.0)) {
    throw std::domain_error(std::string(what) + ": probability must lie in (0, 1)");
  }
}

inline double std_normal_pdf(double x) noexcept {
  return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
}

// Upper tail 1 - Phi(x), accurate for large positive x.
inline double std_normal_sf(double x) noexcept {
  return 0.5 * std::erfc(x / std::numbers::sqrt2);
}

}  // namespace detail

/// Phi(x), the standard normal CDF.
inline double std_normal_cdf(double x) {
  if (!std::isfinite(x)) {
    throw std::domain_error("std_normal_cdf: argument must be finite");
  }
  return 0.5 * std::erfc(-x / std::numbers::sqrt2);
}

/// Phi^{-1}(p). Bisection on the CDF (lower tail) or on the survival
/// function (upper tail), then one Newton step. Computing the upper half
/// through the survival function keeps quantile(1-p) == -quantile(p).
inline double std_normal_quantile(double p) {
  detail::require_probability_open(p, "std_normal_quantile");
  if (p == 0.5) return 0.0;

  const bool upper = p > 0.5;
  // Solve tail(x) = target for x >= 0 where tail is the survival function.
  const double target = upper ? 1.0 - p : p;
  // For p > 0.5, 1 - p is exact in binary only up to rounding of p itself,
  // which is the best any implementation can do.
  double lo = 0.0;
  double hi = 40.0;
  for (int it = 0; it < 200 && hi - lo > 1e-15 * (1.0 + hi); ++it) {
    const double mid = 0.5 * (lo + hi);
    if (detail::std_normal_sf(mid) > target) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  double x = 0.5 * (lo + hi);
  const double pdf = detail::std_normal_pdf(x);
  if (pdf > 0.0) {
    x += (detail::std_normal_sf(x) - target) / pdf;
  }
  return upper ? x : -x;
}

/// z_alpha = Phi^{-1}(1 - alpha).
inline double z_upper(double alpha) {
  detail::require_probability_open(alpha, "z_upper");
  return -std_normal_quantile(alpha);
}

/// P(X_m <= x) for X_m chi-squared with m degrees of freedom.
inline double chi2_cdf(int m, double x) {
  if (m < 1) throw std::domain_error("chi2_cdf: degrees of freedom must be >= 1");
  if (!(x >= 0.0)) throw std::domain_error("chi2_cdf: x must be >= 0");
  if (std::isinf(x)) return 1.0;
  return boost::math::gamma_p(0.5 * m, 0.5 * x);
}

/// P(X_m > x). Computed directly so small upper tails keep relative accuracy.
inline double chi2_sf(int m, double x) {
  if (m < 1) throw std::domain_error("chi2_sf: degrees of freedom must be >= 1");
  if (!(x >= 0.0)) throw std::domain_error("chi2_sf: x must be >= 0");
  if (std::isinf(x)) return 0.0;
  return boost::math::gamma_q(0.5 * m, 0.5 * x);
}

inline double chi2_pdf(int m, double x) {
  if (x <= 0.0) return m == 2 ? 0.5 : 0.0;
  const double k = 0.5 * m;
  return std::exp((k - 1.0) * std::log(x) - 0.5 * x - k * std::numbers::ln2 - std::lgamma(k));
}

/// Smallest x with chi2_cdf(m, x) = p: bracket by doubling, bisect, then one
/// Newton step.
inline double chi2_quantile(int m, double p) {
  if (m < 1) throw std::domain_error("chi2_quantile: degrees of freedom must be >= 1");
  detail::require_probability_open(p, "chi2_quantile");

  const bool upper = p > 0.5;
  const double q = 1.0 - p;
  auto below_target = [&](double x) {
    return upper ? chi2_sf(m, x) > q : chi2_cdf(m, x) < p;
  };

  double lo = 0.0;
  double hi = std::max(1.0, static_cast<double>(m));
  while (below_target(hi)) {
    lo = hi;
    hi *= 2.0;
  }
  for (int it = 0; it < 300 && hi - lo > 1e-15 * (1.0 + hi); ++it) {
    const double mid = 0.5 * (lo + hi);
    if (below_target(mid)) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  double x = 0.5 * (lo + hi);
  const double pdf = chi2_pdf(m, x);
  if (pdf > 0.0 && std::isfinite(pdf)) {
    const double residual = upper ? q - chi2_sf(m, x) : chi2_cdf(m, x) - p;
    const double step = residual / pdf;
    if (x - step > 0.0) x -= step;
  }
  return x;
}

/// Root on the branch lambda >= 1 of lambda - log(lambda) = c.
struct ThresholdConstant {
  double c = 1.0;
  double lambda = 1.0;
};

inline ThresholdConstant solve_lambda(double c) {
  if (!(c >= 1.0) || !std::isfinite(c)) {
    throw std::domain_error("solve_lambda: c must be finite and >= 1");
  }
  auto f = [c](double lambda) { return lambda - std::log(lambda) - c; };
  double lo = 1.0;
  double hi = c * std::numbers::e;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid == lo || mid == hi) break;
    if (f(mid) < 0.0) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  const double lambda = std::abs(f(lo)) <= std::abs(f(hi)) ? lo : hi;
  return {c, lambda};
}

/// lambda_* = 6.9368..., the root of lambda - log(lambda) = 5.
inline double lambda_star() {
  static const double value = solve_lambda(5.0).lambda;
  return value;
}

}  // namespace confball
