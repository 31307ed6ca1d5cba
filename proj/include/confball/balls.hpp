#pragma once

// Confidence-ball constructions: the usual chi-squared ball, the
// single-level ball, the Besov-adaptive ball and the honest ball over R^N.
//
// Each construction splits its squared radius into named terms. The
// data-independent term is computed once per BallBuilder, so Monte-Carlo
// loops only pay for the data terms.

#include <cmath>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "confball/block_threshold.hpp"
#include "confball/numerics.hpp"
#include "confball/sequence_model.hpp"

namespace confball {

enum class BallKind { usual, single_level, besov_adaptive, honest };

inline const char* to_string(BallKind kind) {
  switch (kind) {
    case BallKind::usual: return "usual";
    case BallKind::single_level: return "single_level";
    case BallKind::besov_adaptive: return "besov_adaptive";
    case BallKind::honest: return "honest";
  }
  return "?";
}

inline BallKind ball_kind_from_string(const std::string& s) {
  if (s == "usual") return BallKind::usual;
  if (s == "single_level") return BallKind::single_level;
  if (s == "besov_adaptive" || s == "adaptive") return BallKind::besov_adaptive;
  if (s == "honest") return BallKind::honest;
  throw std::invalid_argument("unknown ball kind \"" + s + "\"");
}

/// Squared-radius term names. Tests and reports address terms by name.
namespace term {
inline constexpr const char* chi2_quantile = "chi2_quantile";
inline constexpr const char* deterministic = "deterministic";
inline constexpr const char* c_alpha = "c_alpha_term";
inline constexpr const char* dropped_energy = "dropped_energy";
inline constexpr const char* kept_penalty = "kept_penalty";
inline constexpr const char* quadratic = "quadratic_estimate";
}  // namespace term

struct RadiusTerm {
  std::string name;
  double value = 0.0;
};

struct CutoffLevels {
  int J1 = 0;
  int J2 = 0;
};

struct ConfidenceBall {
  BallKind kind = BallKind::honest;
  double alpha = 0.05;
  int level = -1;  // usual / single_level only
  double beta = 0.0;  // besov_adaptive only
  double M = 0.0;     // besov_adaptive only
  std::optional<CutoffLevels> cutoffs;
  CoefficientVector center{1};
  std::vector<RadiusTerm> terms;
  double radius_sq = 0.0;  // sum of terms, may be negative before clipping
  double radius = 0.0;     // sqrt(max(0, radius_sq))

  [[nodiscard]] double term_value(const std::string& name) const {
    for (const auto& t : terms) {
      if (t.name == name) return t.value;
    }
    throw std::out_of_range("ConfidenceBall: no radius term \"" + name + "\"");
  }
  [[nodiscard]] bool restricted_to_level() const {
    return kind == BallKind::usual || kind == BallKind::single_level;
  }
};

/// 2 log^{1/2}(2/alpha) + 4 lambda_*^{1/2} z_{alpha/2}.
inline double deterministic_coefficient(double alpha) {
  detail::require_probability_open(alpha, "deterministic_coefficient");
  return 2.0 * std::sqrt(std::log(2.0 / alpha)) + 4.0 * std::sqrt(lambda_star()) * z_upper(alpha / 2.0);
}

/// 2 lambda_* + 8 lambda_*^{1/2} - 1, the per-coordinate charge for kept blocks.
inline double kept_block_factor() {
  const double lam = lambda_star();
  return 2.0 * lam + 8.0 * std::sqrt(lam) - 1.0;
}

namespace detail {

// Largest integer l >= 0 with 2^l <= cap, at most J. The small slack absorbs
// rounding when cap is an exact power of two (e.g. n^{1/2} with n = 2^10).
inline int dyadic_cap(double log2_cap, int J) {
  if (!(log2_cap >= 0.0)) return 0;
  const double l = std::floor(log2_cap + 1e-9);
  return l >= J ? J : static_cast<int>(l);
}

struct LevelDataTerms {
  double dropped = 0.0;   // sum over dropped blocks of (S^2 - |B|/n), before (.)_+
  std::size_t kept = 0;   // coordinates in kept blocks
};

inline LevelDataTerms level_data_terms(std::span<const double> y_level, int j, int n) {
  LevelDataTerms out;
  CompensatedSum dropped;
  for (const auto& blk : block_summaries(y_level, j, n)) {
    if (blk.kept) {
      out.kept += blk.size;
    } else {
      dropped.add(blk.s2 - static_cast<double>(blk.size) / n);
    }
  }
  out.dropped = dropped.value();
  return out;
}

inline void finish(ConfidenceBall& ball) {
  CompensatedSum acc;
  for (const auto& t : ball.terms) acc.add(t.value);
  ball.radius_sq = acc.value();
  ball.radius = std::sqrt(std::max(0.0, ball.radius_sq));
}

}  // namespace detail

/// J1, J2: the largest levels with 2^{J1} <= M^{2/(1+2b)} n^{1/(1+2b)} and
/// 2^{J2} <= M^{4/(1+4b)} n^{2/(1+4b)}, both capped at J. The N-cap is read as
/// "at most J levels": with N = 2^J - 1 a literal 2^{J1} <= N would leave the
/// finest level neither estimated nor charged.
inline CutoffLevels cutoff_levels(int J, int n, double beta, double M) {
  if (!(beta > 0.0)) throw std::invalid_argument("cutoff_levels: beta must be > 0");
  if (!(M > 0.0)) throw std::invalid_argument("cutoff_levels: M must be > 0");
  if (n < 2) throw std::invalid_argument("cutoff_levels: n must be >= 2");
  const double log2M = std::log2(M);
  const double log2n = std::log2(static_cast<double>(n));
  CutoffLevels c;
  c.J1 = detail::dyadic_cap((2.0 * log2M + log2n) / (1.0 + 2.0 * beta), J);
  c.J2 = detail::dyadic_cap((4.0 * log2M + 2.0 * log2n) / (1.0 + 4.0 * beta), J);
  c.J2 = std::max(c.J1, c.J2);
  return c;
}

/// Leading constant of the adaptive radius: a0 + a1 + a2 + a3 + a4.
inline double c_alpha(double alpha, double beta, double M, int n) {
  if (!(alpha > 0.0 && alpha < 0.5)) throw std::invalid_argument("c_alpha: alpha must be in (0, 1/2)");
  if (!(beta > 0.0)) throw std::invalid_argument("c_alpha: beta must be > 0");
  if (!(M > 0.0)) throw std::invalid_argument("c_alpha: M must be > 0");
  if (n < 2) throw std::invalid_argument("c_alpha: n must be >= 2");
  const double shrink = 1.0 - std::exp2(-2.0 * beta);  // 1 - 2^{-2 beta}
  const double z = z_upper(alpha / 4.0);
  const double log_term = 2.0 * std::sqrt(std::log(4.0 / alpha));
  const double F = std::pow(M, 1.0 / (1.0 + 2.0 * beta) - 2.0 / (1.0 + 4.0 * beta)) *
                   std::pow(static_cast<double>(n), 1.0 / (2.0 + 4.0 * beta) - 1.0 / (1.0 + 4.0 * beta));
  const double a0 = std::exp2(2.0 * beta) / shrink;
  const double a1 = z * std::pow(2.0, 2.5) * std::sqrt(lambda_star()) * std::pow(shrink, 1.0 / (2.0 + 4.0 * beta)) * F;
  const double a2 = log_term * F;
  const double a3 = z * std::exp2(beta + 1.0) / std::sqrt(shrink) * F;
  const double a4 = log_term;
  CompensatedSum acc;
  for (double a : {a0, a1, a2, a3, a4}) acc.add(a);
  return acc.value();
}

struct BallParams {
  BallKind kind = BallKind::honest;
  double alpha = 0.05;
  int level = 0;      // usual / single_level
  double beta = 0.5;  // besov_adaptive
  double M = 1.0;     // besov_adaptive
};

/// Validates preconditions and precomputes the data-independent part of a
/// construction for fixed (J, n, params).
class BallBuilder {
 public:
  BallBuilder(const BallParams& params, int J, int n) : params_(params), J_(J), n_(n) {
    if (n < 2) throw std::invalid_argument("ball: n must be >= 2");
    if (J < 1) throw std::invalid_argument("ball: J must be >= 1");
    const double alpha = params.alpha;
    const double nd = static_cast<double>(n);
    switch (params.kind) {
      case BallKind::usual:
      case BallKind::single_level: {
        if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("ball: alpha must be in (0, 1)");
        const int j = params.level;
        if (j < 0 || j >= J) throw std::invalid_argument("ball: level outside [0, J)");
        if (params.kind == BallKind::single_level && std::exp2(j) > nd * nd) {
          throw std::invalid_argument("single_level_ball: requires 2^j <= n^2");
        }
        // Non-strict delegation: levels with 2^j < ceil(log n) use the usual ball.
        delegate_usual_ = params.kind == BallKind::usual || std::exp2(j) < block_size_for(n);
        if (delegate_usual_) {
          constant_ = chi2_quantile(static_cast<int>(level_size(j)), 1.0 - alpha) / nd;
        } else {
          constant_ = deterministic_coefficient(alpha) * std::exp2(0.5 * j) / nd;
        }
        break;
      }
      case BallKind::besov_adaptive: {
        if (!(alpha > 0.0 && alpha < 0.5)) throw std::invalid_argument("adaptive_ball: alpha must be in (0, 1/2)");
        const double beta = params.beta;
        const double M = params.M;
        cutoffs_ = cutoff_levels(J, n, beta, M);
        constant_ = c_alpha(alpha, beta, M, n) * std::pow(M, 2.0 / (1.0 + 4.0 * beta)) *
                    std::pow(nd, -4.0 * beta / (1.0 + 4.0 * beta));
        break;
      }
      case BallKind::honest: {
        if (!(alpha > 0.0 && alpha < 0.5)) throw std::invalid_argument("honest_ball: alpha must be in (0, 1/2)");
        const double N = static_cast<double>(level_offset(J));
        if (N > nd * nd) throw std::invalid_argument("honest_ball: requires N <= n^2");
        constant_ = deterministic_coefficient(alpha) * std::sqrt(N) / nd;
        break;
      }
    }
  }

  [[nodiscard]] const BallParams& params() const noexcept { return params_; }
  [[nodiscard]] int levels() const noexcept { return J_; }
  [[nodiscard]] int n() const noexcept { return n_; }
  [[nodiscard]] std::optional<CutoffLevels> cutoffs() const noexcept { return cutoffs_; }
  /// The data-independent term of the squared radius.
  [[nodiscard]] double constant_term() const noexcept { return constant_; }
  [[nodiscard]] bool delegates_to_usual() const noexcept { return delegate_usual_; }

  [[nodiscard]] ConfidenceBall operator()(const CoefficientVector& y) const {
    if (y.levels() != J_) {
      throw std::invalid_argument("ball: observation has J = " + std::to_string(y.levels()) + ", expected " +
                                  std::to_string(J_));
    }
    ConfidenceBall ball;
    ball.kind = params_.kind;
    ball.alpha = params_.alpha;
    switch (params_.kind) {
      case BallKind::usual:
      case BallKind::single_level: build_single_level(y, ball); break;
      case BallKind::besov_adaptive: build_adaptive(y, ball); break;
      case BallKind::honest: build_honest(y, ball); break;
    }
    detail::finish(ball);
    return ball;
  }

 private:
  void build_single_level(const CoefficientVector& y, ConfidenceBall& ball) const {
    const int j = params_.level;
    ball.level = j;
    ball.center = CoefficientVector(J_);
    if (delegate_usual_) {
      ball.kind = BallKind::usual;
      const auto src = y.level(j);
      std::copy(src.begin(), src.end(), ball.center.level(j).begin());
      ball.terms = {{term::chi2_quantile, constant_}};
      return;
    }
    ball.kind = BallKind::single_level;
    const auto src = y.level(j);
    auto dst = ball.center.level(j);
    for (const auto& blk : block_summaries(src, j, n_)) {
      if (!blk.kept) continue;
      for (std::size_t k = blk.begin; k < blk.begin + blk.size; ++k) dst[k] = src[k];
    }
    const auto data = detail::level_data_terms(src, j, n_);
    ball.terms = {{term::deterministic, constant_},
                  {term::dropped_energy, std::max(0.0, data.dropped)},
                  {term::kept_penalty, kept_block_factor() * static_cast<double>(data.kept) / n_}};
  }

  // Per-level positive parts of the dropped-block sums and the kept count
  // over levels [0, top).
  std::pair<double, std::size_t> threshold_terms(const CoefficientVector& y, int top) const {
    CompensatedSum dropped;
    std::size_t kept = 0;
    for (int j = 0; j < top; ++j) {
      const auto data = detail::level_data_terms(y.level(j), j, n_);
      dropped.add(std::max(0.0, data.dropped));
      kept += data.kept;
    }
    return {dropped.value(), kept};
  }

  void build_adaptive(const CoefficientVector& y, ConfidenceBall& ball) const {
    const auto cut = *cutoffs_;
    ball.beta = params_.beta;
    ball.M = params_.M;
    ball.cutoffs = cut;
    ball.center = threshold_estimate(y, n_, cut.J1);
    const auto [dropped, kept] = threshold_terms(y, cut.J1);
    CompensatedSum energy;
    std::size_t count = 0;
    for (int j = cut.J1; j < cut.J2; ++j) {
      for (double v : y.level(j)) energy.add(v * v);
      count += level_size(j);
    }
    energy.add(-static_cast<double>(count) / n_);
    ball.terms = {{term::c_alpha, constant_},
                  {term::dropped_energy, dropped},
                  {term::kept_penalty, kept_block_factor() * static_cast<double>(kept) / n_},
                  {term::quadratic, energy.value()}};
  }

  void build_honest(const CoefficientVector& y, ConfidenceBall& ball) const {
    ball.center = threshold_estimate(y, n_, J_);
    const auto [dropped, kept] = threshold_terms(y, J_);
    ball.terms = {{term::deterministic, constant_},
                  {term::dropped_energy, dropped},
                  {term::kept_penalty, kept_block_factor() * static_cast<double>(kept) / n_}};
  }

  BallParams params_;
  int J_;
  int n_;
  double constant_ = 0.0;
  bool delegate_usual_ = false;
  std::optional<CutoffLevels> cutoffs_;
};

/// The usual 100(1 - alpha)% ball on level j: center y_j,
/// radius^2 = chi2_{2^j}(1 - alpha) / n.
inline ConfidenceBall usual_ball(const CoefficientVector& y, int j, int n, double alpha) {
  return BallBuilder({BallKind::usual, alpha, j}, y.levels(), n)(y);
}

inline ConfidenceBall single_level_ball(const CoefficientVector& y, int j, int n, double alpha) {
  return BallBuilder({BallKind::single_level, alpha, j}, y.levels(), n)(y);
}

inline ConfidenceBall adaptive_ball(const CoefficientVector& y, int n, double alpha, const BesovBody& body) {
  BallParams p{BallKind::besov_adaptive, alpha};
  p.beta = body.beta();
  p.M = body.M();
  return BallBuilder(p, y.levels(), n)(y);
}

inline ConfidenceBall honest_ball(const CoefficientVector& y, int n, double alpha) {
  return BallBuilder({BallKind::honest, alpha}, y.levels(), n)(y);
}

/// ||theta - center||_2 <= radius (closed ball); restricted to the ball's
/// level for usual and single-level balls.
inline bool ball_contains(const ConfidenceBall& ball, const CoefficientVector& theta) {
  if (theta.levels() != ball.center.levels()) {
    throw std::invalid_argument("ball_contains: theta has J = " + std::to_string(theta.levels()) +
                                ", ball has J = " + std::to_string(ball.center.levels()));
  }
  std::span<const double> a = ball.center.flat();
  std::span<const double> b = theta.flat();
  if (ball.restricted_to_level()) {
    a = ball.center.level(ball.level);
    b = theta.level(ball.level);
  }
  CompensatedSum acc;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = b[i] - a[i];
    acc.add(d * d);
  }
  return std::sqrt(acc.value()) <= ball.radius;
}

inline void to_json(nlohmann::json& out, const ConfidenceBall& ball) {
  auto terms = nlohmann::json::object();
  for (const auto& t : ball.terms) terms[t.name] = t.value;
  out = nlohmann::json{{"kind", to_string(ball.kind)},
                       {"alpha", ball.alpha},
                       {"radius", ball.radius},
                       {"radius_sq", ball.radius_sq},
                       {"radius_sq_terms", std::move(terms)},
                       {"center", ball.center}};
  if (ball.restricted_to_level()) out["level"] = ball.level;
  if (ball.kind == BallKind::besov_adaptive) {
    out["beta"] = ball.beta;
    out["M"] = ball.M;
  }
  if (ball.cutoffs) {
    out["J1"] = ball.cutoffs->J1;
    out["J2"] = ball.cutoffs->J2;
  }
}

}  // namespace confball
