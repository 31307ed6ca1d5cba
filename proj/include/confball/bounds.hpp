#pragma once

// Closed forms of the lower bounds on expected squared radius, the hypercube
// and mixture lemmas, chi-squared tail bounds, block keep/drop probability
// bounds, Besov tail and cardinality bounds, and the adaptation range.

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "confball/numerics.hpp"
#include "confball/sequence_model.hpp"

namespace confball {

/// (alpha, eps) for the lower bounds; gamma = log(1 + eps^2).
/// Each bound checks its own admissible range for eps.
struct LowerBoundParams {
  double alpha;
  double eps;
  double gamma;

  LowerBoundParams(double alpha_, double eps_) : alpha(alpha_), eps(eps_), gamma(std::log1p(eps_ * eps_)) {
    if (!(alpha > 0.0 && alpha < 0.5)) throw std::invalid_argument("LowerBoundParams: alpha must be in (0, 1/2)");
    if (!(eps > 0.0)) throw std::invalid_argument("LowerBoundParams: eps must be > 0");
  }

  /// eps < (1/2)(1/2 - alpha): the range for the sup-type bounds.
  [[nodiscard]] bool valid_for_sup_bounds() const noexcept { return eps < 0.5 * (0.5 - alpha); }
  /// eps < 1/2 - alpha: the range for the bounds under theta = 0.
  [[nodiscard]] bool valid_for_zero_bounds() const noexcept { return eps < 0.5 - alpha; }
};

namespace detail {
inline void require_sup_range(const LowerBoundParams& p, const char* what) {
  if (!p.valid_for_sup_bounds()) {
    throw std::invalid_argument(std::string(what) + ": requires eps < (1/2)(1/2 - alpha)");
  }
}
inline void require_zero_range(const LowerBoundParams& p, const char* what) {
  if (!p.valid_for_zero_bounds()) throw std::invalid_argument(std::string(what) + ": requires eps < 1/2 - alpha");
}
// z_{alpha + 2 eps} = Phi^{-1}(1 - alpha - 2 eps).
inline double z_shifted(const LowerBoundParams& p, const char* what) {
  const double level = p.alpha + 2.0 * p.eps;
  if (!(level < 1.0)) throw std::invalid_argument(std::string(what) + ": alpha + 2 eps must be < 1");
  return z_upper(level);
}
}  // namespace detail

/// sup_theta E r^2 >= eps^2/(1-alpha-eps) min(M^2 2^{-2 beta j}, z^2 2^j / n)
/// for a single level j.
inline double lb_single_level_max(const BesovBody& body, int j, int n, const LowerBoundParams& params) {
  detail::require_sup_range(params, "lb_single_level_max");
  const double z = detail::z_shifted(params, "lb_single_level_max");
  const double lead = params.eps * params.eps / (1.0 - params.alpha - params.eps);
  return lead * std::min(max_level_energy(body, j), z * z * std::exp2(j) / n);
}

/// E_0 r^2 >= (1/4)(1 - 2 alpha - 2 eps) min(M^2 2^{-2 beta j}, gamma^{1/2} 2^{j/2} / n).
inline double lb_single_level_zero(const BesovBody& body, int j, int n, const LowerBoundParams& params) {
  detail::require_zero_range(params, "lb_single_level_zero");
  const double lead = 0.25 * (1.0 - 2.0 * params.alpha - 2.0 * params.eps);
  return lead * std::min(max_level_energy(body, j), std::sqrt(params.gamma) * std::exp2(0.5 * j) / n);
}

/// Whole-vector sup bound. The z^{-2q/(1+2 beta)} factor in the second branch
/// carries the body's q exactly as displayed in the source bound.
inline double lb_global_max(const BesovBody& body, double N, int n, const LowerBoundParams& params) {
  detail::require_sup_range(params, "lb_global_max");
  const double z = detail::z_shifted(params, "lb_global_max");
  const double beta = body.beta();
  const double lead = params.eps * params.eps / (1.0 - params.alpha - params.eps) * z * z;
  const double nd = static_cast<double>(n);
  const double second = std::pow(z, -2.0 * body.q() / (1.0 + 2.0 * beta)) * std::pow(body.M(), 2.0 / (1.0 + 2.0 * beta)) *
                        std::pow(nd, -2.0 * beta / (1.0 + 2.0 * beta));
  return lead * std::min(N / nd, second);
}

/// b_eps = min(2^{-1/(2(1+4b)) - 1} gamma^{b/(1+4b)} (M - M')^{1/(1+4b)} n^{-2b/(1+4b)},
///             (1/2) gamma^{1/4} N^{1/4} n^{-1/2}).
inline double lb_b_eps(const BesovBody& body, double M_prime, double N, int n, const LowerBoundParams& params) {
  detail::require_zero_range(params, "lb_b_eps");
  if (!(M_prime > 0.0 && M_prime < body.M())) throw std::invalid_argument("lb_b_eps: requires 0 < M' < M");
  const double beta = body.beta();
  const double e = 1.0 + 4.0 * beta;
  const double nd = static_cast<double>(n);
  const double first = std::exp2(-1.0 / (2.0 * e) - 1.0) * std::pow(params.gamma, beta / e) *
                       std::pow(body.M() - M_prime, 1.0 / e) * std::pow(nd, -2.0 * beta / e);
  const double second = 0.5 * std::pow(params.gamma, 0.25) * std::pow(N, 0.25) / std::sqrt(nd);
  return std::min(first, second);
}

/// inf over B(M') of E r^2 >= (1 - 2 alpha - 2 eps) b_eps^2.
inline double lb_min_radius_sq(const BesovBody& body, double M_prime, double N, int n, const LowerBoundParams& params) {
  const double b = lb_b_eps(body, M_prime, N, n, params);
  return (1.0 - 2.0 * params.alpha - 2.0 * params.eps) * b * b;
}

/// Honest balls over R^N: E_0 r^2 >= ((1 - 2 alpha - 2 eps)/4) gamma^{1/2} N^{1/2} / n.
inline double lb_honest_zero(double N, int n, const LowerBoundParams& params) {
  detail::require_zero_range(params, "lb_honest_zero");
  return 0.25 * (1.0 - 2.0 * params.alpha - 2.0 * params.eps) * std::sqrt(params.gamma) * std::sqrt(N) / n;
}

/// Bayes rule on the hypercube C_m(a): +a where y_i >= 0, otherwise -a.
inline std::vector<double> bayes_cube_rule(std::span<const double> y, double a) {
  if (!(a > 0.0)) throw std::invalid_argument("bayes_cube_rule: a must be > 0");
  std::vector<double> out(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) out[i] = y[i] >= 0.0 ? a : -a;
  return out;
}

/// Minimax (and constant Bayes) risk over C_m(a) under the count-of-misses
/// loss: Phi(-a/sigma) m.
inline double bayes_cube_risk(int m, double a, double sigma) {
  if (m < 1) throw std::invalid_argument("bayes_cube_risk: m must be >= 1");
  if (!(a > 0.0) || !(sigma > 0.0)) throw std::invalid_argument("bayes_cube_risk: a and sigma must be > 0");
  return std_normal_cdf(-a / sigma) * m;
}

/// The eps implied by k a^4 n^2 = log(1 + eps^2): sqrt(exp(k a^4 n^2) - 1).
inline double l1_mixture_bound(int k, double a, int n) {
  if (k < 1) throw std::invalid_argument("l1_mixture_bound: k must be >= 1");
  if (!(a >= 0.0)) throw std::invalid_argument("l1_mixture_bound: a must be >= 0");
  const double nd = static_cast<double>(n);
  const double exponent = k * a * a * a * a * nd * nd;
  if (exponent > 700.0) throw std::overflow_error("l1_mixture_bound: k a^4 n^2 > 700");
  return std::sqrt(std::expm1(exponent));
}

namespace detail {
inline double log_cosh(double x) noexcept {
  const double ax = std::abs(x);
  return ax + std::log1p(std::exp(-2.0 * ax)) - std::numbers::ln2;
}
}  // namespace detail

/// dP_k/dP_0(y) = prod_{i <= k} cosh(n a y_i) e^{-n a^2 / 2} over the first k
/// level-major coordinates.
inline double mixture_density_ratio(std::span<const double> y_flat, std::size_t k, double a, int n) {
  if (k > y_flat.size()) throw std::invalid_argument("mixture_density_ratio: k exceeds N");
  const double nd = static_cast<double>(n);
  CompensatedSum log_ratio;
  for (std::size_t i = 0; i < k; ++i) log_ratio.add(detail::log_cosh(nd * a * y_flat[i]) - 0.5 * nd * a * a);
  return std::exp(log_ratio.value());
}

inline double mixture_density_ratio(const CoefficientVector& y, std::size_t k, double a, int n) {
  return mixture_density_ratio(y.flat(), k, a, n);
}

/// P(X_m >= (1+d) m) <= (1/2) exp(-(m/2)(d - log(1+d))).
inline double chi2_tail_upper(int m, double d) {
  if (m < 1) throw std::invalid_argument("chi2_tail_upper: m must be >= 1");
  if (!(d > 0.0)) throw std::invalid_argument("chi2_tail_upper: d must be > 0");
  return 0.5 * std::exp(-0.5 * m * (d - std::log1p(d)));
}

/// The weaker corollary (1/2) exp(-d^2 m/4 + d^3 m/6).
inline double chi2_tail_upper_cubic(int m, double d) {
  if (m < 1) throw std::invalid_argument("chi2_tail_upper_cubic: m must be >= 1");
  if (!(d > 0.0)) throw std::invalid_argument("chi2_tail_upper_cubic: d must be > 0");
  return 0.5 * std::exp(-0.25 * d * d * m + d * d * d * m / 6.0);
}

/// P(X_m <= (1-d) m) <= exp(-d^2 m / 4) for 0 < d < 1.
inline double chi2_tail_lower(int m, double d) {
  if (m < 1) throw std::invalid_argument("chi2_tail_lower: m must be >= 1");
  if (!(d > 0.0 && d < 1.0)) throw std::invalid_argument("chi2_tail_lower: d must be in (0, 1)");
  return std::exp(-0.25 * d * d * m);
}

/// lambda_tau: root of lambda - log(lambda) = 1 + 4 tau / (1 + 2 tau).
inline ThresholdConstant tau_threshold(double tau) {
  if (!(tau > 0.0)) throw std::invalid_argument("tau_threshold: tau must be > 0");
  return solve_lambda(1.0 + 4.0 * tau / (1.0 + 2.0 * tau));
}

enum class KeepBoundCase { small_signal, large_signal, none };

struct KeepProbabilityBound {
  KeepBoundCase which = KeepBoundCase::none;
  /// Bound on P(keep) for small_signal, on P(drop) for large_signal, 1 otherwise.
  double bound = 1.0;
};

/// Keep/drop probability bounds for one block of L coordinates with noise
/// variance sigma2 and signal energy block_energy.
inline KeepProbabilityBound block_keep_bounds(double tau, int L, double block_energy, double sigma2) {
  if (L < 1) throw std::invalid_argument("block_keep_bounds: L must be >= 1");
  if (!(sigma2 > 0.0)) throw std::invalid_argument("block_keep_bounds: sigma2 must be > 0");
  const double lam = lambda_star();
  const double lam_tau = tau_threshold(tau).lambda;
  const double gap = std::sqrt(lam) - std::sqrt(lam_tau);
  if (block_energy <= gap * gap * L * sigma2) {
    return {KeepBoundCase::small_signal, 0.5 * std::exp(-2.0 * tau / (1.0 + 2.0 * tau) * L)};
  }
  if (block_energy >= 4.0 * lam * L * sigma2) {
    return {KeepBoundCase::large_signal, 0.5 * std::exp(-2.0 * L)};
  }
  return {};
}

/// sum_{j >= m} ||theta_j||^2 <= (1 - 2^{-2 tau})^{-1} M^2 2^{-2 tau m}, tau = body.beta().
inline double besov_tail_bound(const BesovBody& body, int m) {
  if (m < 0) throw std::invalid_argument("besov_tail_bound: m must be >= 0");
  const double tau = body.beta();
  return body.M() * body.M() * std::exp2(-2.0 * tau * m) / (1.0 - std::exp2(-2.0 * tau));
}

/// D L^{-1} M^{2/(1+2 tau)} n^{1/(1+2 tau)} with
/// D = 3 (1 - 2^{-2 tau})^{-1/(1+2 tau)} a^{-1/(1+2 tau)}.
inline double besov_card_bound(const BesovBody& body, double a, int L, int n) {
  if (!(a > 0.0)) throw std::invalid_argument("besov_card_bound: a must be > 0");
  if (L < 1) throw std::invalid_argument("besov_card_bound: L must be >= 1");
  const double tau = body.beta();
  const double e = 1.0 / (1.0 + 2.0 * tau);
  const double D = 3.0 * std::pow(1.0 - std::exp2(-2.0 * tau), -e) * std::pow(a, -e);
  return D / L * std::pow(body.M(), 2.0 * e) * std::pow(static_cast<double>(n), e);
}

enum class AdaptationRegime { large_N, rho_large_beta, rho_small_beta };

inline const char* to_string(AdaptationRegime r) {
  switch (r) {
    case AdaptationRegime::large_N: return "large_N";
    case AdaptationRegime::rho_large_beta: return "rho_large_beta";
    case AdaptationRegime::rho_small_beta: return "rho_small_beta";
  }
  return "?";
}

struct AdaptationRange {
  double tau_low = 0.0;
  double tau_high = 0.0;
  AdaptationRegime regime = AdaptationRegime::large_N;
  double rho = 0.0;
};

/// Largest [beta, tau_high] over which a ball with coverage over B^beta can
/// adapt, with N = n^rho.
inline AdaptationRange adaptation_range(double N, int n, double beta) {
  if (!(N >= 1.0)) throw std::invalid_argument("adaptation_range: N must be >= 1");
  if (n < 2) throw std::invalid_argument("adaptation_range: n must be >= 2");
  if (!(beta > 0.0)) throw std::invalid_argument("adaptation_range: beta must be > 0");
  const double rho = std::log(N) / std::log(static_cast<double>(n));
  if (rho >= 2.0) return {beta, 2.0 * beta, AdaptationRegime::large_N, rho};
  if (beta >= 1.0 / (2.0 * rho) - 0.25) return {beta, 2.0 * beta, AdaptationRegime::rho_large_beta, rho};
  return {beta, 1.0 / rho - 0.5, AdaptationRegime::rho_small_beta, rho};
}

}  // namespace confball
