#pragma once

// Coefficient vectors on the dyadic index set, Besov bodies, observation
// sampling and the hypercube configurations used by the lower bounds.
//
// Storage is level-major and flat: level j occupies positions
// [2^j - 1, 2^{j+1} - 1). Positions within a level are 0-based in code.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "confball/numerics.hpp"
#include "confball/rng.hpp"

namespace confball {

inline constexpr int kMaxLevels = 40;

inline std::size_t level_offset(int j) noexcept { return (std::size_t{1} << j) - 1; }
inline std::size_t level_size(int j) noexcept { return std::size_t{1} << j; }

class CoefficientVector {
 public:
  /// Zero vector with J levels (N = 2^J - 1 coordinates).
  explicit CoefficientVector(int J) : J_(checked_levels(J)), values_(level_offset(J), 0.0) {}

  /// From explicit per-level arrays of lengths 1, 2, 4, ...
  explicit CoefficientVector(const std::vector<std::vector<double>>& levels)
      : J_(checked_levels(static_cast<int>(levels.size()))) {
    values_.reserve(level_offset(J_));
    for (int j = 0; j < J_; ++j) {
      const auto& lv = levels[static_cast<std::size_t>(j)];
      if (lv.size() != level_size(j)) {
        throw std::invalid_argument("CoefficientVector: level " + std::to_string(j) + " has length " +
                                    std::to_string(lv.size()) + ", expected " +
                                    std::to_string(level_size(j)));
      }
      values_.insert(values_.end(), lv.begin(), lv.end());
    }
    check_finite();
  }

  [[nodiscard]] int levels() const noexcept { return J_; }
  /// N = 2^J - 1.
  [[nodiscard]] std::size_t size() const noexcept { return values_.size(); }

  [[nodiscard]] std::span<const double> level(int j) const {
    check_level(j);
    return {values_.data() + level_offset(j), level_size(j)};
  }
  [[nodiscard]] std::span<double> level(int j) {
    check_level(j);
    return {values_.data() + level_offset(j), level_size(j)};
  }

  /// All coordinates in level-major enumeration order.
  [[nodiscard]] std::span<const double> flat() const noexcept { return values_; }
  [[nodiscard]] std::span<double> flat() noexcept { return values_; }

  [[nodiscard]] double at(int j, std::size_t k) const { return level(j)[k]; }

  void check_finite() const {
    for (double v : values_) {
      if (!std::isfinite(v)) throw std::invalid_argument("CoefficientVector: non-finite entry");
    }
  }

  friend bool operator==(const CoefficientVector&, const CoefficientVector&) = default;

 private:
  static int checked_levels(int J) {
    if (J < 1 || J > kMaxLevels) {
      throw std::invalid_argument("CoefficientVector: J must be in [1, " + std::to_string(kMaxLevels) +
                                  "], got " + std::to_string(J));
    }
    return J;
  }
  void check_level(int j) const {
    if (j < 0 || j >= J_) {
      throw std::out_of_range("CoefficientVector: level " + std::to_string(j) + " outside [0, " +
                              std::to_string(J_) + ")");
    }
  }

  int J_;
  std::vector<double> values_;
};

inline void to_json(nlohmann::json& out, const CoefficientVector& v) {
  auto levels = nlohmann::json::array();
  for (int j = 0; j < v.levels(); ++j) {
    const auto lv = v.level(j);
    levels.push_back(std::vector<double>(lv.begin(), lv.end()));
  }
  out = nlohmann::json{{"J", v.levels()}, {"levels", std::move(levels)}};
}

inline CoefficientVector coefficient_vector_from_json(const nlohmann::json& in) {
  if (!in.is_object() || !in.contains("J") || !in.contains("levels")) {
    throw std::invalid_argument("CoefficientVector JSON needs keys \"J\" and \"levels\"");
  }
  const int J = in.at("J").get<int>();
  auto levels = in.at("levels").get<std::vector<std::vector<double>>>();
  if (static_cast<int>(levels.size()) != J) {
    throw std::invalid_argument("CoefficientVector JSON: \"J\" = " + std::to_string(J) + " but " +
                                std::to_string(levels.size()) + " levels given");
  }
  return CoefficientVector(levels);
}

/// B^beta_{p,q}(M). q may be +infinity (supremum over levels).
class BesovBody {
 public:
  BesovBody(double beta, double p, double q, double M) : beta_(beta), p_(p), q_(q), M_(M) {
    if (!(beta > 0.0) || !std::isfinite(beta)) throw std::invalid_argument("BesovBody: beta must be > 0");
    if (!(p >= 2.0) || !std::isfinite(p)) throw std::invalid_argument("BesovBody: p must be >= 2");
    if (!(q >= 1.0)) throw std::invalid_argument("BesovBody: q must be >= 1");
    if (!(M > 0.0) || !std::isfinite(M)) throw std::invalid_argument("BesovBody: M must be > 0");
    if (!(s() > 0.0)) throw std::invalid_argument("BesovBody: s = beta + 1/2 - 1/p must be > 0");
  }

  [[nodiscard]] double beta() const noexcept { return beta_; }
  [[nodiscard]] double p() const noexcept { return p_; }
  [[nodiscard]] double q() const noexcept { return q_; }
  [[nodiscard]] double M() const noexcept { return M_; }
  [[nodiscard]] double s() const noexcept { return beta_ + 0.5 - 1.0 / p_; }

  [[nodiscard]] BesovBody with_radius(double M) const { return {beta_, p_, q_, M}; }

 private:
  double beta_;
  double p_;
  double q_;
  double M_;
};

inline void to_json(nlohmann::json& out, const BesovBody& b) {
  out = nlohmann::json{{"beta", b.beta()}, {"p", b.p()}, {"M", b.M()}};
  if (std::isinf(b.q())) {
    out["q"] = "inf";
  } else {
    out["q"] = b.q();
  }
}

inline BesovBody besov_body_from_json(const nlohmann::json& in) {
  for (const auto& [key, _] : in.items()) {
    if (key != "beta" && key != "p" && key != "q" && key != "M") {
      throw std::invalid_argument("body: unknown key \"" + key + "\"");
    }
  }
  const double p = in.value("p", 2.0);
  double q = 2.0;
  if (in.contains("q")) {
    const auto& jq = in.at("q");
    if (jq.is_string()) {
      if (jq.get<std::string>() != "inf") throw std::invalid_argument("body: q must be a number or \"inf\"");
      q = std::numeric_limits<double>::infinity();
    } else {
      q = jq.get<double>();
    }
  }
  return {in.at("beta").get<double>(), p, q, in.at("M").get<double>()};
}

struct NoiseModel {
  int n = 2;
  std::uint64_t seed = 0;

  NoiseModel(int n_, std::uint64_t seed_) : n(n_), seed(seed_) {
    if (n < 2) throw std::invalid_argument("NoiseModel: n must be >= 2");
  }
};

/// ( sum_j ( 2^{js} ||theta_j||_p )^q )^{1/q}, supremum over j when q = inf.
inline double besov_norm(const CoefficientVector& theta, const BesovBody& body) {
  const double p = body.p();
  const double q = body.q();
  const double s = body.s();

  // Work with level terms t_j = 2^{js} ||theta_j||_p, rescaled by their
  // maximum so large q does not overflow.
  std::vector<double> terms(static_cast<std::size_t>(theta.levels()));
  double largest = 0.0;
  for (int j = 0; j < theta.levels(); ++j) {
    const auto lv = theta.level(j);
    double peak = 0.0;
    for (double v : lv) peak = std::max(peak, std::abs(v));
    double lp = 0.0;
    if (peak > 0.0) {
      CompensatedSum acc;
      for (double v : lv) acc.add(std::pow(std::abs(v) / peak, p));
      lp = peak * std::pow(acc.value(), 1.0 / p);
    }
    const double t = std::exp2(j * s) * lp;
    terms[static_cast<std::size_t>(j)] = t;
    largest = std::max(largest, t);
  }
  if (largest == 0.0) return 0.0;
  if (std::isinf(q)) return largest;
  CompensatedSum acc;
  for (double t : terms) acc.add(std::pow(t / largest, q));
  return largest * std::pow(acc.value(), 1.0 / q);
}

inline bool besov_contains(const CoefficientVector& theta, const BesovBody& body) {
  return besov_norm(theta, body) <= body.M();
}

/// M^2 2^{-2 beta j}: the largest level-j energy inside the body.
inline double max_level_energy(const BesovBody& body, int j) {
  if (j < 0) throw std::invalid_argument("max_level_energy: level must be >= 0");
  return body.M() * body.M() * std::exp2(-2.0 * body.beta() * j);
}

/// y = theta + n^{-1/2} z with z drawn from `rng`, in level-major order.
inline CoefficientVector sample_observation(const CoefficientVector& theta, int n, CounterRng& rng) {
  if (n < 2) throw std::invalid_argument("sample_observation: n must be >= 2");
  CoefficientVector y = theta;
  const double scale = 1.0 / std::sqrt(static_cast<double>(n));
  for (double& v : y.flat()) v += scale * rng.normal();
  return y;
}

inline CoefficientVector sample_observation(const CoefficientVector& theta, const NoiseModel& noise) {
  CounterRng rng(mix64(noise.seed));
  return sample_observation(theta, noise.n, rng);
}

/// Sign pattern for hypercube vertices; true means the coordinate is -a.
using SignPattern = std::vector<bool>;

inline CoefficientVector hypercube_theta(int J, int j, double a, const SignPattern& negative) {
  if (j < 0 || j >= J) throw std::invalid_argument("hypercube_theta: level outside [0, J)");
  if (!(a >= 0.0)) throw std::invalid_argument("hypercube_theta: a must be >= 0");
  if (negative.size() != level_size(j)) {
    throw std::invalid_argument("hypercube_theta: sign pattern has length " + std::to_string(negative.size()) +
                                ", level has " + std::to_string(level_size(j)));
  }
  CoefficientVector theta(J);
  auto lv = theta.level(j);
  for (std::size_t k = 0; k < lv.size(); ++k) lv[k] = negative[k] ? -a : a;
  return theta;
}

/// Element of C(a, k): the first k coordinates (level-major) are +-a.
inline CoefficientVector vertex_set_theta(int J, std::size_t k_count, double a, const SignPattern& negative) {
  CoefficientVector theta(J);
  if (k_count < 1 || k_count > theta.size()) {
    throw std::invalid_argument("vertex_set_theta: k must be in [1, N]");
  }
  if (negative.size() != k_count) {
    throw std::invalid_argument("vertex_set_theta: sign pattern length must equal k");
  }
  if (!(a >= 0.0)) throw std::invalid_argument("vertex_set_theta: a must be >= 0");
  auto flat = theta.flat();
  for (std::size_t i = 0; i < k_count; ++i) flat[i] = negative[i] ? -a : a;
  return theta;
}

/// Random point on the boundary {besov_norm = M}: i.i.d. normals rescaled.
inline CoefficientVector random_boundary_member(int J, const BesovBody& body, CounterRng& rng) {
  CoefficientVector theta(J);
  double norm = 0.0;
  while (norm == 0.0) {
    for (double& v : theta.flat()) v = rng.normal();
    norm = besov_norm(theta, body);
  }
  const double scale = body.M() / norm;
  for (double& v : theta.flat()) v *= scale;
  return theta;
}

inline double squared_norm(std::span<const double> xs) noexcept {
  CompensatedSum acc;
  for (double x : xs) acc.add(x * x);
  return acc.value();
}

}  // namespace confball
