#pragma once

// Monte-Carlo experiments: coverage, radius scans over n, lower-bound
// consistency and the inequality checks. Reports are pure functions of
// (config, seed): replicate r always draws from stream (experiment_seed, r)
// and reductions run in replicate order, whatever the thread count.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <functional>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "confball/balls.hpp"
#include "confball/block_threshold.hpp"
#include "confball/bounds.hpp"
#include "confball/numerics.hpp"
#include "confball/rng.hpp"
#include "confball/sequence_model.hpp"

namespace confball {

/// Invalid experiment configuration; the message names the offending field.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class ExperimentKind { coverage, radius_scan, lower_bound_check, lemma_suite };

inline const char* to_string(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::coverage: return "coverage";
    case ExperimentKind::radius_scan: return "radius_scan";
    case ExperimentKind::lower_bound_check: return "lower_bound_check";
    case ExperimentKind::lemma_suite: return "lemma_suite";
  }
  return "?";
}

inline ExperimentKind experiment_kind_from_string(const std::string& s) {
  if (s == "coverage") return ExperimentKind::coverage;
  if (s == "radius_scan" || s == "radius-scan") return ExperimentKind::radius_scan;
  if (s == "lower_bound_check" || s == "lower-bound") return ExperimentKind::lower_bound_check;
  if (s == "lemma_suite" || s == "lemmas") return ExperimentKind::lemma_suite;
  throw ConfigError("kind: unknown experiment kind \"" + s + "\"");
}

struct ThetaConfig {
  enum class Kind { zero, hypercube, vertex, boundary_random, worst_case };
  Kind kind = Kind::zero;
  int level = 0;           // hypercube
  double a = 0.0;          // hypercube / vertex
  std::size_t k = 1;       // vertex
  bool alternating = false;  // hypercube / vertex sign pattern
  std::optional<BesovBody> body;  // boundary_random; hypercube "at boundary"
  std::uint64_t seed = 0;  // boundary_random
  double tau = 0.5;        // worst_case
  double M = 1.0;          // worst_case
};

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::coverage;
  BallParams ball;
  int J = 10;
  std::vector<int> n;
  ThetaConfig theta;
  int replicates = 1000;
  std::uint64_t seed = 0;
  std::vector<double> eps;             // lower_bound_check
  std::optional<BesovBody> body;       // lower_bound_check: body of the floors
  std::optional<double> M_prime;       // lower_bound_check, adaptive floor
  std::optional<double> target_slope;  // radius_scan
  double slope_tolerance = 0.15;       // radius_scan
  std::string radius_term = "total";   // radius_scan
  bool record_replicates = false;
};

// ---------------------------------------------------------------------------
// Config parsing

namespace detail {

inline void reject_unknown(const nlohmann::json& obj, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, _] : obj.items()) {
    const bool ok = std::any_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; });
    if (!ok) throw ConfigError(where + (where.empty() ? "" : ".") + key + ": unknown key");
  }
}

template <class T>
T field(const nlohmann::json& obj, const char* key, const std::string& where) {
  if (!obj.contains(key)) throw ConfigError(where + "." + key + ": missing required field");
  try {
    return obj.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(where + "." + key + ": wrong type");
  }
}

template <class T>
T field_or(const nlohmann::json& obj, const char* key, T fallback, const std::string& where) {
  return obj.contains(key) ? field<T>(obj, key, where) : fallback;
}

inline BesovBody parse_body(const nlohmann::json& j, const std::string& where) {
  try {
    return besov_body_from_json(j);
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(where + ": malformed body");
  } catch (const std::invalid_argument& e) {
    throw ConfigError(where + ": " + e.what());
  }
}

inline ThetaConfig parse_theta(const nlohmann::json& j) {
  ThetaConfig t;
  const auto kind = field<std::string>(j, "kind", "theta");
  if (kind == "zero") {
    reject_unknown(j, "theta", {"kind"});
    t.kind = ThetaConfig::Kind::zero;
  } else if (kind == "hypercube") {
    reject_unknown(j, "theta", {"kind", "level", "a", "body", "signs"});
    t.kind = ThetaConfig::Kind::hypercube;
    t.level = field<int>(j, "level", "theta");
    if (j.contains("a") == j.contains("body")) throw ConfigError("theta.a: give exactly one of \"a\" or \"body\"");
    if (j.contains("a")) t.a = field<double>(j, "a", "theta");
    if (j.contains("body")) t.body = parse_body(j.at("body"), "theta.body");
  } else if (kind == "vertex") {
    reject_unknown(j, "theta", {"kind", "k", "a", "signs"});
    t.kind = ThetaConfig::Kind::vertex;
    t.k = field<std::size_t>(j, "k", "theta");
    t.a = field<double>(j, "a", "theta");
  } else if (kind == "boundary_random") {
    reject_unknown(j, "theta", {"kind", "body", "seed"});
    t.kind = ThetaConfig::Kind::boundary_random;
    if (!j.contains("body")) throw ConfigError("theta.body: missing required field");
    t.body = parse_body(j.at("body"), "theta.body");
    t.seed = field_or<std::uint64_t>(j, "seed", 0, "theta");
  } else if (kind == "worst_case") {
    reject_unknown(j, "theta", {"kind", "tau", "M"});
    t.kind = ThetaConfig::Kind::worst_case;
    t.tau = field<double>(j, "tau", "theta");
    t.M = field<double>(j, "M", "theta");
    if (!(t.tau > 0.0)) throw ConfigError("theta.tau: must be > 0");
    if (!(t.M > 0.0)) throw ConfigError("theta.M: must be > 0");
  } else {
    throw ConfigError("theta.kind: unknown theta kind \"" + kind + "\"");
  }
  if (j.contains("signs")) {
    const auto signs = field<std::string>(j, "signs", "theta");
    if (signs == "alternating") {
      t.alternating = true;
    } else if (signs != "positive") {
      throw ConfigError("theta.signs: must be \"positive\" or \"alternating\"");
    }
  }
  if ((t.kind == ThetaConfig::Kind::hypercube || t.kind == ThetaConfig::Kind::vertex) && !(t.a >= 0.0)) {
    throw ConfigError("theta.a: must be >= 0");
  }
  return t;
}

inline BallParams parse_ball(const nlohmann::json& j) {
  reject_unknown(j, "ball", {"kind", "alpha", "level", "beta", "M"});
  BallParams b;
  try {
    b.kind = ball_kind_from_string(field<std::string>(j, "kind", "ball"));
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("ball.kind: ") + e.what());
  }
  b.alpha = field<double>(j, "alpha", "ball");
  if (!(b.alpha > 0.0 && b.alpha < 1.0)) throw ConfigError("ball.alpha: must be in (0, 1)");
  if (b.kind == BallKind::usual || b.kind == BallKind::single_level) {
    b.level = field<int>(j, "level", "ball");
  }
  if (b.kind == BallKind::besov_adaptive) {
    b.beta = field<double>(j, "beta", "ball");
    b.M = field<double>(j, "M", "ball");
    if (!(b.beta > 0.0)) throw ConfigError("ball.beta: must be > 0");
    if (!(b.M > 0.0)) throw ConfigError("ball.M: must be > 0");
  }
  if ((b.kind == BallKind::besov_adaptive || b.kind == BallKind::honest) && !(b.alpha < 0.5)) {
    throw ConfigError("ball.alpha: must be in (0, 1/2) for this ball kind");
  }
  return b;
}

}  // namespace detail

inline ExperimentConfig parse_config(const nlohmann::json& j) {
  using namespace detail;
  reject_unknown(j, "", {"kind", "ball", "J", "n", "theta", "replicates", "seed", "eps", "body", "M_prime",
                         "target_slope", "slope_tolerance", "radius_term", "record_replicates"});
  ExperimentConfig c;
  c.kind = experiment_kind_from_string(field<std::string>(j, "kind", "config"));
  c.seed = field_or<std::uint64_t>(j, "seed", 0, "config");
  c.record_replicates = field_or<bool>(j, "record_replicates", false, "config");
  if (c.kind == ExperimentKind::lemma_suite) {
    for (const auto& [key, _] : j.items()) {
      if (key != "kind" && key != "seed") throw ConfigError(key + ": not used by lemma_suite");
    }
    return c;
  }

  if (!j.contains("ball")) throw ConfigError("ball: missing required field");
  c.ball = parse_ball(j.at("ball"));
  c.J = field<int>(j, "J", "config");
  if (c.J < 1 || c.J > 30) throw ConfigError("J: must be in [1, 30]");
  if (!j.contains("n")) throw ConfigError("n: missing required field");
  if (j.at("n").is_array()) {
    c.n = field<std::vector<int>>(j, "n", "config");
  } else {
    c.n = {field<int>(j, "n", "config")};
  }
  if (c.n.empty()) throw ConfigError("n: must not be empty");
  for (int n : c.n) {
    if (n < 2) throw ConfigError("n: every n must be >= 2");
  }
  c.theta = j.contains("theta") ? parse_theta(j.at("theta")) : ThetaConfig{};
  c.replicates = field<int>(j, "replicates", "config");
  if (c.replicates < 2) throw ConfigError("replicates: must be >= 2");

  if (c.ball.kind == BallKind::usual || c.ball.kind == BallKind::single_level) {
    if (c.ball.level < 0 || c.ball.level >= c.J) throw ConfigError("ball.level: must be in [0, J)");
  }
  if (c.theta.kind == ThetaConfig::Kind::hypercube && (c.theta.level < 0 || c.theta.level >= c.J)) {
    throw ConfigError("theta.level: must be in [0, J)");
  }
  if (c.theta.kind == ThetaConfig::Kind::vertex && (c.theta.k < 1 || c.theta.k > level_offset(c.J))) {
    throw ConfigError("theta.k: must be in [1, N]");
  }

  switch (c.kind) {
    case ExperimentKind::coverage:
      if (c.replicates < 100) throw ConfigError("replicates: coverage runs need >= 100 replicates");
      if (c.n.size() != 1) throw ConfigError("n: coverage runs take a single n");
      break;
    case ExperimentKind::radius_scan: {
      if (c.n.size() < 4) throw ConfigError("n: a radius scan needs at least 4 values");
      for (std::size_t i = 1; i < c.n.size(); ++i) {
        if (c.n[i] <= c.n[i - 1]) throw ConfigError("n: scan values must be strictly increasing");
      }
      if (c.n.back() < 4 * c.n.front()) throw ConfigError("n: a radius scan must span at least 2 octaves");
      if (j.contains("target_slope")) c.target_slope = field<double>(j, "target_slope", "config");
      c.slope_tolerance = field_or<double>(j, "slope_tolerance", 0.15, "config");
      if (!(c.slope_tolerance > 0.0)) throw ConfigError("slope_tolerance: must be > 0");
      c.radius_term = field_or<std::string>(j, "radius_term", "total", "config");
      break;
    }
    case ExperimentKind::lower_bound_check: {
      if (c.n.size() != 1) throw ConfigError("n: lower-bound checks take a single n");
      if (c.theta.kind != ThetaConfig::Kind::zero) throw ConfigError("theta: lower-bound floors are stated at theta = 0");
      c.eps = field<std::vector<double>>(j, "eps", "config");
      if (c.eps.empty()) throw ConfigError("eps: must not be empty");
      if (c.ball.kind == BallKind::usual) throw ConfigError("ball.kind: no lower-bound floor for the usual ball");
      if (c.ball.kind == BallKind::single_level) {
        if (!j.contains("body")) throw ConfigError("body: single-level floors need a Besov body");
        c.body = parse_body(j.at("body"), "body");
      }
      if (c.ball.kind == BallKind::besov_adaptive) {
        c.M_prime = field_or<double>(j, "M_prime", 0.5 * c.ball.M, "config");
        if (!(*c.M_prime > 0.0 && *c.M_prime < c.ball.M)) throw ConfigError("M_prime: must be in (0, ball.M)");
      }
      const double alpha = c.ball.alpha;
      for (double e : c.eps) {
        if (!(alpha < 0.5) || !(e > 0.0 && e < 0.5 - alpha)) {
          throw ConfigError("eps: every eps must lie in (0, 1/2 - alpha)");
        }
      }
      break;
    }
    case ExperimentKind::lemma_suite: break;
  }
  return c;
}

/// Normalized echo of a config (defaults filled in).
inline nlohmann::json config_to_json(const ExperimentConfig& c) {
  nlohmann::json j;
  j["kind"] = to_string(c.kind);
  j["seed"] = c.seed;
  if (c.kind == ExperimentKind::lemma_suite) return j;
  nlohmann::json ball{{"kind", to_string(c.ball.kind)}, {"alpha", c.ball.alpha}};
  if (c.ball.kind == BallKind::usual || c.ball.kind == BallKind::single_level) ball["level"] = c.ball.level;
  if (c.ball.kind == BallKind::besov_adaptive) {
    ball["beta"] = c.ball.beta;
    ball["M"] = c.ball.M;
  }
  j["ball"] = ball;
  j["J"] = c.J;
  if (c.n.size() == 1 && c.kind != ExperimentKind::radius_scan) {
    j["n"] = c.n.front();
  } else {
    j["n"] = c.n;
  }
  nlohmann::json theta;
  const auto& t = c.theta;
  switch (t.kind) {
    case ThetaConfig::Kind::zero: theta = {{"kind", "zero"}}; break;
    case ThetaConfig::Kind::hypercube:
      theta = {{"kind", "hypercube"}, {"level", t.level}};
      if (t.body) {
        theta["body"] = *t.body;
      } else {
        theta["a"] = t.a;
      }
      break;
    case ThetaConfig::Kind::vertex: theta = {{"kind", "vertex"}, {"k", t.k}, {"a", t.a}}; break;
    case ThetaConfig::Kind::boundary_random:
      theta = {{"kind", "boundary_random"}, {"body", *t.body}, {"seed", t.seed}};
      break;
    case ThetaConfig::Kind::worst_case: theta = {{"kind", "worst_case"}, {"tau", t.tau}, {"M", t.M}}; break;
  }
  if (t.kind == ThetaConfig::Kind::hypercube || t.kind == ThetaConfig::Kind::vertex) {
    theta["signs"] = t.alternating ? "alternating" : "positive";
  }
  j["theta"] = theta;
  j["replicates"] = c.replicates;
  if (c.record_replicates) j["record_replicates"] = true;
  if (c.kind == ExperimentKind::radius_scan) {
    if (c.target_slope) j["target_slope"] = *c.target_slope;
    j["slope_tolerance"] = c.slope_tolerance;
    j["radius_term"] = c.radius_term;
  }
  if (c.kind == ExperimentKind::lower_bound_check) {
    j["eps"] = c.eps;
    if (c.body) j["body"] = *c.body;
    if (c.M_prime) j["M_prime"] = *c.M_prime;
  }
  return j;
}

/// Seed actually used for noise: the user seed mixed with a hash of the rest
/// of the normalized config, so changing e.g. alpha never reuses noise.
inline std::uint64_t experiment_seed(const ExperimentConfig& c) {
  auto echo = config_to_json(c);
  echo.erase("seed");
  return split_key(c.seed, fnv1a64(echo.dump()));
}

// ---------------------------------------------------------------------------
// Report

struct Gate {
  std::string name;
  double value = 0.0;
  double threshold = 0.0;
  std::string relation;  // how value is compared to threshold
  bool pass = false;
};

struct ReplicateRecord {
  bool covered = false;
  double radius_sq = 0.0;
};

struct McSummary {
  int n = 0;
  int replicates = 0;
  double coverage = 0.0;
  double coverage_se = 0.0;
  double mean_radius_sq = 0.0;
  double radius_sq_se = 0.0;
};

struct SlopeFit {
  double slope = 0.0;
  double slope_se = 0.0;
  double intercept = 0.0;
};

struct LowerBoundRow {
  double eps = 0.0;
  std::string bound;
  double floor = 0.0;
  bool gated = true;
};

struct ExperimentReport {
  nlohmann::json config;
  std::uint64_t experiment_seed = 0;
  std::vector<McSummary> per_n;
  std::optional<SlopeFit> slope;
  std::optional<double> target_slope;
  std::vector<LowerBoundRow> lower_bounds;
  std::vector<Gate> gates;
  std::vector<ReplicateRecord> records;
  std::vector<std::string> notes;

  [[nodiscard]] bool pass() const {
    return std::all_of(gates.begin(), gates.end(), [](const Gate& g) { return g.pass; });
  }
};

inline nlohmann::json to_json(const McSummary& s) {
  return {{"n", s.n},
          {"replicates", s.replicates},
          {"coverage", s.coverage},
          {"coverage_se", s.coverage_se},
          {"mean_radius_sq", s.mean_radius_sq},
          {"radius_sq_se", s.radius_sq_se}};
}

inline nlohmann::json report_to_json(const ExperimentReport& r) {
  nlohmann::json j;
  j["config"] = r.config;
  j["experiment_seed"] = r.experiment_seed;
  if (!r.per_n.empty()) {
    auto arr = nlohmann::json::array();
    for (const auto& s : r.per_n) arr.push_back(to_json(s));
    j["per_n"] = arr;
    if (r.per_n.size() == 1) {
      const auto& s = r.per_n.front();
      j["empirical_coverage"] = s.coverage;
      j["coverage_se"] = s.coverage_se;
      j["mean_radius_sq"] = s.mean_radius_sq;
      j["radius_sq_se"] = s.radius_sq_se;
    }
  }
  if (r.slope) {
    j["fitted_slope"] = r.slope->slope;
    j["slope_se"] = r.slope->slope_se;
    j["intercept"] = r.slope->intercept;
  }
  if (r.target_slope) j["target_slope"] = *r.target_slope;
  if (!r.lower_bounds.empty()) {
    auto arr = nlohmann::json::array();
    for (const auto& b : r.lower_bounds) {
      arr.push_back({{"eps", b.eps}, {"bound", b.bound}, {"floor", b.floor}, {"gated", b.gated}});
    }
    j["lower_bounds"] = arr;
  }
  auto gates = nlohmann::json::array();
  for (const auto& g : r.gates) {
    gates.push_back({{"name", g.name}, {"value", g.value}, {"threshold", g.threshold}, {"relation", g.relation}, {"pass", g.pass}});
  }
  j["gates"] = gates;
  if (!r.records.empty()) {
    auto arr = nlohmann::json::array();
    for (const auto& rec : r.records) arr.push_back({{"covered", rec.covered}, {"radius_sq", rec.radius_sq}});
    j["replicate_records"] = arr;
  }
  if (!r.notes.empty()) j["notes"] = r.notes;
  j["pass"] = r.pass();
  return j;
}

namespace detail {
inline std::string csv_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// For labels, where full precision only adds noise.
inline std::string short_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}
}  // namespace detail

/// CSV view. Scans and coverage runs use the per-n columns; lower-bound and
/// inequality-check reports list one row per floor or gate.
inline std::string report_to_csv(const ExperimentReport& r) {
  using detail::csv_number;
  std::ostringstream out;
  const auto kind = r.config.value("kind", std::string{});
  if (kind == "lemma_suite") {
    out << "check,value,threshold,relation,pass\n";
    for (const auto& g : r.gates) {
      out << g.name << ',' << csv_number(g.value) << ',' << csv_number(g.threshold) << ',' << g.relation << ','
          << (g.pass ? 1 : 0) << '\n';
    }
    return out.str();
  }
  if (kind == "lower_bound_check") {
    out << "eps,bound,floor,mean_radius_sq,se,gated,pass\n";
    const auto& s = r.per_n.front();
    for (const auto& b : r.lower_bounds) {
      const bool ok = b.floor <= s.mean_radius_sq + 3.0 * s.radius_sq_se;
      out << csv_number(b.eps) << ',' << b.bound << ',' << csv_number(b.floor) << ',' << csv_number(s.mean_radius_sq)
          << ',' << csv_number(s.radius_sq_se) << ',' << (b.gated ? 1 : 0) << ',' << (ok ? 1 : 0) << '\n';
    }
    return out.str();
  }
  out << "n,mean_radius_sq,se,coverage,coverage_se\n";
  for (const auto& s : r.per_n) {
    out << s.n << ',' << csv_number(s.mean_radius_sq) << ',' << csv_number(s.radius_sq_se) << ','
        << csv_number(s.coverage) << ',' << csv_number(s.coverage_se) << '\n';
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Execution

/// Evaluates fn(i) for i in [0, count) on up to `threads` threads. Results
/// are stored by index, so their order does not depend on scheduling.
template <class Fn>
auto parallel_map(std::size_t count, unsigned threads, Fn fn) -> std::vector<decltype(fn(std::size_t{}))> {
  using R = decltype(fn(std::size_t{}));
  std::vector<R> out(count);
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(count, 1))));
  if (threads == 1) {
    for (std::size_t i = 0; i < count; ++i) out[i] = fn(i);
    return out;
  }
  std::vector<std::exception_ptr> errors(threads);
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (unsigned t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (std::size_t i = t; i < count; i += threads) out[i] = fn(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

inline unsigned default_threads() {
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : hw;
}

/// Level for the least-favorable hypercube in B^tau(M):
/// 2^j ~ M^{2/(1+2 tau)} n^{1/(1+2 tau)}, clamped to [0, J).
inline int worst_case_level(int J, int n, double tau, double M) {
  const double l = (2.0 * std::log2(M) + std::log2(static_cast<double>(n))) / (1.0 + 2.0 * tau);
  return std::clamp(static_cast<int>(std::lround(l)), 0, J - 1);
}

inline SignPattern sign_pattern(std::size_t size, bool alternating) {
  SignPattern s(size, false);
  if (alternating) {
    for (std::size_t i = 1; i < size; i += 2) s[i] = true;
  }
  return s;
}

inline CoefficientVector build_theta(const ThetaConfig& t, int J, int n) {
  switch (t.kind) {
    case ThetaConfig::Kind::zero: return CoefficientVector(J);
    case ThetaConfig::Kind::hypercube: {
      // With a body, a = M 2^{-j(beta + 1/2)} puts theta on its boundary.
      const double a = t.body ? t.body->M() * std::exp2(-t.level * (t.body->beta() + 0.5)) : t.a;
      return hypercube_theta(J, t.level, a, sign_pattern(level_size(t.level), t.alternating));
    }
    case ThetaConfig::Kind::vertex: return vertex_set_theta(J, t.k, t.a, sign_pattern(t.k, t.alternating));
    case ThetaConfig::Kind::boundary_random: {
      CounterRng rng(split_key(t.seed, 0x7468657461ULL));
      return random_boundary_member(J, *t.body, rng);
    }
    case ThetaConfig::Kind::worst_case: {
      const int j = worst_case_level(J, n, t.tau, t.M);
      const double a = t.M * std::exp2(-j * (t.tau + 0.5));
      return hypercube_theta(J, j, a, sign_pattern(level_size(j), false));
    }
  }
  throw std::logic_error("build_theta: unhandled kind");
}

namespace detail {

inline McSummary summarize(int n, const std::vector<ReplicateRecord>& recs) {
  McSummary s;
  s.n = n;
  s.replicates = static_cast<int>(recs.size());
  const double R = static_cast<double>(recs.size());
  std::size_t covered = 0;
  CompensatedSum sum;
  for (const auto& r : recs) {
    covered += r.covered ? 1 : 0;
    sum.add(r.radius_sq);
  }
  s.coverage = static_cast<double>(covered) / R;
  s.coverage_se = std::sqrt(s.coverage * (1.0 - s.coverage) / R);
  s.mean_radius_sq = sum.value() / R;
  CompensatedSum sq;
  for (const auto& r : recs) {
    const double d = r.radius_sq - s.mean_radius_sq;
    sq.add(d * d);
  }
  s.radius_sq_se = std::sqrt(sq.value() / (R - 1.0) / R);
  return s;
}

// Squared radius as reported: the clipped radius squared, or one named term.
inline double reported_radius_sq(const ConfidenceBall& ball, const std::string& term) {
  if (term == "total") return ball.radius * ball.radius;
  return ball.term_value(term);
}

inline std::vector<ReplicateRecord> run_replicates(const BallBuilder& builder, const CoefficientVector& theta, int n,
                                                   int replicates, std::uint64_t key, unsigned threads,
                                                   const std::string& term) {
  return parallel_map(static_cast<std::size_t>(replicates), threads, [&](std::size_t r) {
    auto rng = replicate_stream(key, r);
    const auto y = sample_observation(theta, n, rng);
    const auto ball = builder(y);
    return ReplicateRecord{ball_contains(ball, theta), reported_radius_sq(ball, term)};
  });
}

}  // namespace detail

/// The coverage level each construction guarantees at sample size n.
inline double coverage_floor(const BallParams& ball, int n) {
  const double alpha = ball.alpha;
  switch (ball.kind) {
    case BallKind::usual: return 1.0 - alpha;
    case BallKind::single_level:
    case BallKind::honest: return 1.0 - alpha - 2.0 / std::log(static_cast<double>(n));
    case BallKind::besov_adaptive: {
      const double beta = ball.beta;
      const double e = 1.0 / (1.0 + 2.0 * beta);
      const double nd = static_cast<double>(n);
      const double L = block_size_for(n);
      const double bracket = 1.0 / nd + 3.0 * std::pow(1.0 - std::exp2(-2.0 * beta), -e);
      return (1.0 - alpha) - bracket / L * std::pow(ball.M, 2.0 * e) * std::pow(nd, -2.0 * beta * e);
    }
  }
  return 1.0;
}

inline ExperimentReport run_coverage(const ExperimentConfig& c, unsigned threads = default_threads()) {
  if (c.kind != ExperimentKind::coverage) throw ConfigError("kind: run_coverage needs a coverage config");
  ExperimentReport rep;
  rep.config = config_to_json(c);
  rep.experiment_seed = experiment_seed(c);
  const int n = c.n.front();
  const BallBuilder builder(c.ball, c.J, n);
  const auto theta = build_theta(c.theta, c.J, n);
  const auto recs = detail::run_replicates(builder, theta, n, c.replicates, rep.experiment_seed, threads, "total");
  const auto s = detail::summarize(n, recs);
  rep.per_n.push_back(s);
  const double floor = coverage_floor(c.ball, n);
  if (c.ball.kind == BallKind::usual) {
    const double dev = std::abs(s.coverage - floor);
    rep.gates.push_back({"coverage_matches_nominal", dev, 3.0 * s.coverage_se, "|coverage - (1 - alpha)| <= 3 SE",
                         dev <= 3.0 * s.coverage_se});
  } else {
    const double threshold = floor - 3.0 * s.coverage_se;
    rep.gates.push_back({"coverage_floor", s.coverage, threshold, "coverage >= floor - 3 SE", s.coverage >= threshold});
  }
  rep.notes.push_back("coverage floor " + detail::short_number(floor));
  if (c.record_replicates) rep.records = recs;
  return rep;
}

/// Least squares of log(mean radius^2) on log n.
inline SlopeFit fit_log_log(const std::vector<McSummary>& pts) {
  const double k = static_cast<double>(pts.size());
  double sx = 0.0;
  double sy = 0.0;
  for (const auto& p : pts) {
    sx += std::log(static_cast<double>(p.n));
    sy += std::log(p.mean_radius_sq);
  }
  const double mx = sx / k;
  const double my = sy / k;
  double sxx = 0.0;
  double sxy = 0.0;
  for (const auto& p : pts) {
    const double dx = std::log(static_cast<double>(p.n)) - mx;
    sxx += dx * dx;
    sxy += dx * (std::log(p.mean_radius_sq) - my);
  }
  SlopeFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  double rss = 0.0;
  for (const auto& p : pts) {
    const double res = std::log(p.mean_radius_sq) - (f.intercept + f.slope * std::log(static_cast<double>(p.n)));
    rss += res * res;
  }
  f.slope_se = pts.size() > 2 ? std::sqrt(rss / (k - 2.0) / sxx) : 0.0;
  return f;
}

/// Rate exponent for the adaptive ball on B^tau: -2tau/(1+2tau) up to
/// tau = 2 beta, saturating at -4beta/(1+4beta) beyond.
inline double adaptive_rate_exponent(double beta, double tau) {
  if (tau <= 2.0 * beta) return -2.0 * tau / (1.0 + 2.0 * tau);
  return -4.0 * beta / (1.0 + 4.0 * beta);
}

inline ExperimentReport run_radius_scan(const ExperimentConfig& c, unsigned threads = default_threads()) {
  if (c.kind != ExperimentKind::radius_scan) throw ConfigError("kind: run_radius_scan needs a radius_scan config");
  ExperimentReport rep;
  rep.config = config_to_json(c);
  rep.experiment_seed = experiment_seed(c);
  for (std::size_t i = 0; i < c.n.size(); ++i) {
    const int n = c.n[i];
    const BallBuilder builder(c.ball, c.J, n);
    if (c.radius_term != "total") {
      // Fail early on unknown term names.
      (void)builder(CoefficientVector(c.J)).term_value(c.radius_term);
    }
    const auto theta = build_theta(c.theta, c.J, n);
    const auto key = split_key(rep.experiment_seed, static_cast<std::uint64_t>(i));
    const auto recs = detail::run_replicates(builder, theta, n, c.replicates, key, threads, c.radius_term);
    rep.per_n.push_back(detail::summarize(n, recs));
  }
  for (const auto& s : rep.per_n) {
    if (!(s.mean_radius_sq > 0.0)) throw std::runtime_error("radius scan: non-positive mean radius^2 at n = " + std::to_string(s.n));
  }
  rep.slope = fit_log_log(rep.per_n);
  rep.target_slope = c.target_slope;
  if (!rep.target_slope && c.ball.kind == BallKind::besov_adaptive && c.theta.kind == ThetaConfig::Kind::worst_case &&
      c.radius_term == "total") {
    rep.target_slope = adaptive_rate_exponent(c.ball.beta, c.theta.tau);
  }
  if (rep.target_slope) {
    const double dev = std::abs(rep.slope->slope - *rep.target_slope);
    rep.gates.push_back({"slope_within_tolerance", rep.slope->slope, *rep.target_slope,
                         "|slope - target| <= " + detail::short_number(c.slope_tolerance), dev <= c.slope_tolerance});
  } else {
    rep.notes.push_back("no target slope for this configuration; slope reported only");
  }
  rep.notes.push_back("slope tolerance absorbs one dyadic level of granularity in the worst-case configuration");
  return rep;
}

inline ExperimentReport run_lower_bound_check(const ExperimentConfig& c, unsigned threads = default_threads()) {
  if (c.kind != ExperimentKind::lower_bound_check) throw ConfigError("kind: needs a lower_bound_check config");
  ExperimentReport rep;
  rep.config = config_to_json(c);
  rep.experiment_seed = experiment_seed(c);
  const int n = c.n.front();
  const double N = static_cast<double>(level_offset(c.J));
  const BallBuilder builder(c.ball, c.J, n);
  const CoefficientVector theta(c.J);
  const auto recs = detail::run_replicates(builder, theta, n, c.replicates, rep.experiment_seed, threads, "total");
  const auto s = detail::summarize(n, recs);
  rep.per_n.push_back(s);

  for (double eps : c.eps) {
    const LowerBoundParams params(c.ball.alpha, eps);
    LowerBoundRow row{eps, "", 0.0, true};
    switch (c.ball.kind) {
      case BallKind::honest:
        row.bound = "honest_zero";
        row.floor = lb_honest_zero(N, n, params);
        break;
      case BallKind::single_level:
        row.bound = "single_level_zero";
        row.floor = lb_single_level_zero(*c.body, c.ball.level, n, params);
        break;
      case BallKind::besov_adaptive: {
        row.bound = "besov_min_radius";
        const BesovBody body(c.ball.beta, 2.0, 2.0, c.ball.M);
        row.floor = lb_min_radius_sq(body, *c.M_prime, N, n, params);
        break;
      }
      case BallKind::usual: break;
    }
    rep.lower_bounds.push_back(row);
    const double threshold = s.mean_radius_sq + 3.0 * s.radius_sq_se;
    rep.gates.push_back({row.bound + "_eps_" + detail::short_number(eps), row.floor, threshold,
                         "floor <= mean radius^2 + 3 SE", row.floor <= threshold});
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Inequality checks (the lemma_suite experiment)

namespace detail {

inline Gate within_3se(std::string name, double mean, double se, double target) {
  const double dev = std::abs(mean - target);
  return {std::move(name), mean, target, "|value - target| <= 3 SE (SE " + short_number(se) + ")", dev <= 3.0 * se};
}

inline Gate zero_violations(std::string name, int violations, int checked) {
  return {std::move(name), static_cast<double>(violations), 0.0,
          "violations == 0 over " + std::to_string(checked) + " checks", violations == 0};
}

// Mean and standard error of a per-replicate statistic.
inline std::pair<double, double> mean_se(const std::vector<double>& xs) {
  const double R = static_cast<double>(xs.size());
  CompensatedSum sum;
  for (double x : xs) sum.add(x);
  const double mean = sum.value() / R;
  CompensatedSum sq;
  for (double x : xs) sq.add((x - mean) * (x - mean));
  return {mean, std::sqrt(sq.value() / (R - 1.0) / R)};
}

}  // namespace detail

/// Block energies of theta at every level, blocked with size L.
inline std::vector<double> block_energies(const CoefficientVector& theta, int L) {
  std::vector<double> out;
  for (int j = 0; j < theta.levels(); ++j) {
    const auto lv = theta.level(j);
    for (const auto& blk : partition_level(j, L).blocks) out.push_back(squared_norm(lv.subspan(blk.begin, blk.size())));
  }
  return out;
}

inline ExperimentReport run_lemma_suite(std::uint64_t seed, unsigned threads = default_threads()) {
  using detail::mean_se;
  ExperimentConfig cfg;
  cfg.kind = ExperimentKind::lemma_suite;
  cfg.seed = seed;
  ExperimentReport rep;
  rep.config = config_to_json(cfg);
  rep.experiment_seed = experiment_seed(cfg);
  const auto key = [&](std::uint64_t tag) { return split_key(rep.experiment_seed, tag); };

  // Hypercube: the sign rule has risk Phi(-a/sigma) m at every vertex.
  {
    const int m = 100;
    const double a = 1.0;
    const double sigma = 1.0;
    const int reps = 10000;
    const double target = bayes_cube_risk(m, a, sigma);
    for (int variant = 0; variant < 2; ++variant) {
      SignPattern negative(m, false);
      if (variant == 1) {
        CounterRng srng(key(100));
        for (int i = 0; i < m; ++i) negative[static_cast<std::size_t>(i)] = (srng.next_u64() & 1U) != 0;
      }
      const auto misses = parallel_map(reps, threads, [&](std::size_t r) {
        auto rng = replicate_stream(key(101 + variant), r);
        std::vector<double> theta(m);
        std::vector<double> y(m);
        for (int i = 0; i < m; ++i) {
          theta[i] = negative[static_cast<std::size_t>(i)] ? -a : a;
          y[i] = theta[i] + sigma * rng.normal();
        }
        const auto est = bayes_cube_rule(y, a);
        int count = 0;
        for (int i = 0; i < m; ++i) count += std::abs(est[i] - theta[i]) >= a ? 1 : 0;
        return static_cast<double>(count);
      });
      const auto [mean, se] = mean_se(misses);
      rep.gates.push_back(detail::within_3se(variant == 0 ? "hypercube_risk_positive_vertex" : "hypercube_risk_random_vertex",
                                             mean, se, target));
    }
  }

  // Mixture over C(a, k) against N(0, I/n): L1 distance and likelihood-ratio mean.
  {
    const int k = 4;
    const double a = 0.05;
    const int n = 10;
    const int draws = 100000;
    const double bound = l1_mixture_bound(k, a, n);
    const auto ratios = parallel_map(draws, threads, [&](std::size_t r) {
      auto rng = replicate_stream(key(200), r);
      std::vector<double> y(k);
      for (double& v : y) v = rng.normal() / std::sqrt(static_cast<double>(n));
      return mixture_density_ratio(y, k, a, n);
    });
    std::vector<double> abs_dev(ratios.size());
    for (std::size_t i = 0; i < ratios.size(); ++i) abs_dev[i] = std::abs(1.0 - ratios[i]);
    const auto [l1, l1_se] = mean_se(abs_dev);
    rep.gates.push_back({"mixture_l1_bound", l1, bound + 3.0 * l1_se, "MC L1 <= bound + 3 SE", l1 <= bound + 3.0 * l1_se});
    const auto [lr, lr_se] = mean_se(ratios);
    rep.gates.push_back(detail::within_3se("mixture_likelihood_ratio_mean", lr, lr_se, 1.0));
  }

  // Chi-squared tail bounds against exact tails.
  {
    int upper_viol = 0;
    int cubic_viol = 0;
    int lower_viol = 0;
    int upper_checked = 0;
    int lower_checked = 0;
    for (int m = 1; m <= 50; ++m) {
      for (int i = 1; i <= 30; ++i) {
        const double d = 0.1 * i;
        const double exact = chi2_sf(m, (1.0 + d) * m);
        upper_viol += exact > chi2_tail_upper(m, d) ? 1 : 0;
        cubic_viol += exact > chi2_tail_upper_cubic(m, d) ? 1 : 0;
        ++upper_checked;
      }
      for (int i = 1; i <= 19; ++i) {
        const double d = 0.05 * i;
        lower_viol += chi2_cdf(m, (1.0 - d) * m) > chi2_tail_lower(m, d) ? 1 : 0;
        ++lower_checked;
      }
    }
    rep.gates.push_back(detail::zero_violations("chi2_upper_tail_dominance", upper_viol, upper_checked));
    rep.gates.push_back(detail::zero_violations("chi2_upper_tail_corollary_dominance", cubic_viol, upper_checked));
    rep.gates.push_back(detail::zero_violations("chi2_lower_tail_dominance", lower_viol, lower_checked));
  }

  // Keep/drop frequencies of a single block against the tau-threshold bounds.
  {
    const int L = 7;
    const double sigma2 = 1.0;
    const int reps = 10000;
    const double lam = lambda_star();
    for (double tau : {0.5, 1.0}) {
      const double lam_tau = tau_threshold(tau).lambda;
      const bool in_range = lam_tau > 1.0 && lam_tau < lam;
      rep.gates.push_back({"tau_threshold_in_range_tau_" + detail::short_number(tau), lam_tau, lam, "1 < lambda_tau < lambda_*",
                           in_range});
      const double gap = std::sqrt(lam) - std::sqrt(lam_tau);
      struct Case {
        const char* name;
        double energy;
        bool count_keep;
      };
      const Case cases[] = {{"small_signal_keep_frequency", gap * gap * L * sigma2, true},
                            {"large_signal_drop_frequency", 4.0 * lam * L * sigma2, false}};
      for (int ci = 0; ci < 2; ++ci) {
        const auto& cs = cases[ci];
        const auto bound = block_keep_bounds(tau, L, cs.energy, sigma2);
        const double per = std::sqrt(cs.energy / L);
        const auto events = parallel_map(reps, threads, [&](std::size_t r) {
          auto rng = replicate_stream(key(300 + static_cast<std::uint64_t>(tau * 10) + ci), r);
          double s2 = 0.0;
          for (int i = 0; i < L; ++i) {
            const double y = per + std::sqrt(sigma2) * rng.normal();
            s2 += y * y;
          }
          const bool keep = s2 >= lam * L * sigma2;
          return (cs.count_keep ? keep : !keep) ? 1.0 : 0.0;
        });
        const auto [freq, se_emp] = mean_se(events);
        const double se = std::max(se_emp, std::sqrt(bound.bound * (1.0 - bound.bound) / reps));
        rep.gates.push_back({std::string(cs.name) + "_tau_" + detail::short_number(tau), freq, bound.bound + 3.0 * se,
                             "frequency <= bound + 3 SE", freq <= bound.bound + 3.0 * se});
      }
    }
  }

  // Besov tail and block-cardinality bounds on random boundary members.
  {
    const int J = 10;
    const int n = 1024;
    const int members = 200;
    const int L = block_size_for(n);
    const double a = 4.0 * lambda_star();
    const BesovBody bodies[] = {{0.5, 2.0, 2.0, 1.0}, {1.0, 2.0, std::numeric_limits<double>::infinity(), 1.0},
                                {0.75, 4.0, 2.0, 2.0}};
    int tail_viol = 0;
    int tail_checked = 0;
    int card_viol = 0;
    int card_checked = 0;
    for (std::size_t b = 0; b < std::size(bodies); ++b) {
      const auto& body = bodies[b];
      const auto counts = parallel_map(members, threads, [&](std::size_t r) {
        auto rng = replicate_stream(key(400 + b), r);
        const auto theta = random_boundary_member(J, body, rng);
        std::pair<int, int> viol{0, 0};
        CompensatedSum tail;
        for (int m = J - 1; m >= 0; --m) {
          tail.add(squared_norm(theta.level(m)));
          viol.first += tail.value() > besov_tail_bound(body, m) * (1.0 + 1e-12) ? 1 : 0;
        }
        int big = 0;
        for (double e : block_energies(theta, L)) big += e > a * L / n ? 1 : 0;
        viol.second = big > besov_card_bound(body, a, L, n) ? 1 : 0;
        return viol;
      });
      for (const auto& [t, cv] : counts) {
        tail_viol += t;
        card_viol += cv;
      }
      tail_checked += members * J;
      card_checked += members;
    }
    rep.gates.push_back(detail::zero_violations("besov_tail_dominance", tail_viol, tail_checked));
    rep.gates.push_back(detail::zero_violations("besov_block_cardinality_dominance", card_viol, card_checked));
  }
  return rep;
}

inline ExperimentReport run_experiment(const ExperimentConfig& c, unsigned threads = default_threads()) {
  switch (c.kind) {
    case ExperimentKind::coverage: return run_coverage(c, threads);
    case ExperimentKind::radius_scan: return run_radius_scan(c, threads);
    case ExperimentKind::lower_bound_check: return run_lower_bound_check(c, threads);
    case ExperimentKind::lemma_suite: return run_lemma_suite(c.seed, threads);
  }
  throw std::logic_error("run_experiment: unhandled kind");
}

}  // namespace confball
