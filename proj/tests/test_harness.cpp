#include <catch_amalgamated.hpp>

#include <cmath>
#include <string>

#include "confball/harness.hpp"

using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;
using namespace confball;
using nlohmann::json;

namespace {

json coverage_config() {
  return json::parse(R"({
    "kind": "coverage",
    "ball": {"kind": "honest", "alpha": 0.1},
    "J": 6,
    "n": 128,
    "theta": {"kind": "zero"},
    "replicates": 200,
    "seed": 17
  })");
}

std::string config_error(const json& j) {
  try {
    parse_config(j);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("config errors name the field") {
  auto j = coverage_config();
  j["replicates"] = 50;
  CHECK_THAT(config_error(j), ContainsSubstring("replicates"));

  j = coverage_config();
  j["colour"] = "blue";
  CHECK_THAT(config_error(j), ContainsSubstring("colour"));

  j = coverage_config();
  j["ball"]["alpha"] = 1.5;
  CHECK_THAT(config_error(j), ContainsSubstring("ball.alpha"));

  j = coverage_config();
  j["theta"] = json{{"kind", "hypercube"}, {"level", 9}, {"a", 0.1}};
  CHECK_THAT(config_error(j), ContainsSubstring("theta.level"));

  j = coverage_config();
  j["theta"] = json{{"kind", "sphere"}};
  CHECK_THAT(config_error(j), ContainsSubstring("theta.kind"));

  j = coverage_config();
  j.erase("J");
  CHECK_THAT(config_error(j), ContainsSubstring("J"));

  j = coverage_config();
  j["kind"] = "radius_scan";
  j["n"] = json::array({128, 256, 200, 1024});
  CHECK_THAT(config_error(j), ContainsSubstring("n: scan values must be strictly increasing"));
  j["n"] = json::array({128, 256, 384});
  CHECK_THAT(config_error(j), ContainsSubstring("at least 4"));
  j["n"] = json::array({128, 160, 200, 256});
  CHECK_THAT(config_error(j), ContainsSubstring("2 octaves"));

  j = coverage_config();
  j["kind"] = "lower_bound_check";
  j["eps"] = json::array({0.1, 0.45});
  CHECK_THAT(config_error(j), ContainsSubstring("eps"));

  CHECK(config_error(coverage_config()).empty());
}

TEST_CASE("config echo is stable") {
  const auto c = parse_config(coverage_config());
  const auto echo = config_to_json(c);
  CHECK(config_to_json(parse_config(echo)) == echo);
  auto other = c;
  other.ball.alpha = 0.05;
  CHECK(experiment_seed(other) != experiment_seed(c));
}

TEST_CASE("reports are deterministic across thread counts") {
  const auto c = parse_config(coverage_config());
  const auto one = report_to_json(run_coverage(c, 1)).dump(2);
  const auto four = report_to_json(run_coverage(c, 4)).dump(2);
  CHECK(one == four);
  CHECK(report_to_json(run_coverage(c, 1)).dump(2) == one);
  auto reseeded = c;
  reseeded.seed = 18;
  CHECK(report_to_json(run_coverage(reseeded, 1)).dump(2) != one);
}

TEST_CASE("report JSON round-trips byte for byte") {
  auto j = coverage_config();
  j["record_replicates"] = true;
  const auto text = report_to_json(run_coverage(parse_config(j), 2)).dump(2);
  CHECK(json::parse(text).dump(2) == text);
  const auto lemmas = report_to_json(run_lemma_suite(3, 2)).dump(2);
  CHECK(json::parse(lemmas).dump(2) == lemmas);
}

TEST_CASE("coverage report fields") {
  const auto rep = run_coverage(parse_config(coverage_config()), 2);
  REQUIRE(rep.per_n.size() == 1);
  const auto& s = rep.per_n.front();
  CHECK(s.coverage >= 0.0);
  CHECK(s.coverage <= 1.0);
  CHECK_THAT(s.coverage_se, WithinAbs(std::sqrt(s.coverage * (1 - s.coverage) / 200), 1e-15));
  CHECK(rep.pass());
  const auto j = report_to_json(rep);
  CHECK(j.contains("empirical_coverage"));
  CHECK(j["pass"] == true);
}

TEST_CASE("coverage floors") {
  BallParams p{BallKind::honest, 0.1};
  CHECK_THAT(coverage_floor(p, 1024), WithinRel(0.9 - 2 / std::log(1024.0), 1e-15));
  p.kind = BallKind::besov_adaptive;
  p.beta = 0.5;
  p.M = 1.0;
  const double bracket = 1.0 / 1024 + 3 * std::pow(0.5, -0.5);
  CHECK_THAT(coverage_floor(p, 1024), WithinRel(0.9 - bracket / 7 * std::pow(1024.0, -0.5), 1e-14));
}

TEST_CASE("slope fit") {
  std::vector<McSummary> pts;
  for (int n : {100, 200, 400, 800, 1600}) pts.push_back({n, 10, 1, 0, 3.0 * std::pow(n, -0.7), 0});
  const auto f = fit_log_log(pts);
  CHECK_THAT(f.slope, WithinAbs(-0.7, 1e-12));
  CHECK_THAT(f.intercept, WithinAbs(std::log(3.0), 1e-10));
  CHECK(f.slope_se < 1e-10);
  CHECK_THAT(adaptive_rate_exponent(0.5, 0.5), WithinAbs(-0.5, 1e-15));
  CHECK_THAT(adaptive_rate_exponent(0.5, 1.5), WithinAbs(-2.0 / 3.0, 1e-15));
}

TEST_CASE("deterministic-term scan has slope -1") {
  const auto c = parse_config(json::parse(R"({
    "kind": "radius_scan",
    "ball": {"kind": "honest", "alpha": 0.1},
    "J": 8,
    "n": [64, 128, 256, 512],
    "theta": {"kind": "zero"},
    "replicates": 2,
    "radius_term": "deterministic",
    "target_slope": -1.0
  })"));
  const auto rep = run_radius_scan(c, 1);
  REQUIRE(rep.slope);
  CHECK_THAT(rep.slope->slope, WithinAbs(-1.0, 1e-12));
  CHECK(rep.pass());
  const auto csv = report_to_csv(rep);
  CHECK(csv.rfind("n,mean_radius_sq,se,coverage,coverage_se\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);
}

TEST_CASE("worst-case theta") {
  CHECK(worst_case_level(17, 1024, 0.5, 1.0) == 5);
  CHECK(worst_case_level(4, 1024, 0.5, 1.0) == 3);
  ThetaConfig t;
  t.kind = ThetaConfig::Kind::worst_case;
  t.tau = 1.0;
  t.M = 2.0;
  const auto theta = build_theta(t, 12, 4096);
  const BesovBody body(1.0, 2, 2, 2.0);
  CHECK_THAT(besov_norm(theta, body), WithinRel(2.0, 1e-13));
}

TEST_CASE("lower-bound check") {
  const auto c = parse_config(json::parse(R"({
    "kind": "lower_bound_check",
    "ball": {"kind": "single_level", "alpha": 0.05, "level": 7},
    "body": {"beta": 0.5, "M": 1},
    "J": 9,
    "n": 512,
    "replicates": 200,
    "eps": [0.1, 0.3]
  })"));
  const auto rep = run_lower_bound_check(c, 2);
  REQUIRE(rep.lower_bounds.size() == 2);
  CHECK(rep.lower_bounds[0].floor == lb_single_level_zero(BesovBody(0.5, 2, 2, 1), 7, 512, LowerBoundParams(0.05, 0.1)));
  CHECK(rep.pass());
}

TEST_CASE("inequality checks all pass") {
  const auto rep = run_lemma_suite(0, 2);
  for (const auto& g : rep.gates) {
    INFO(g.name << " value " << g.value << " threshold " << g.threshold);
    CHECK(g.pass);
  }
  CHECK(report_to_csv(rep).rfind("check,value,threshold,relation,pass\n", 0) == 0);
}
