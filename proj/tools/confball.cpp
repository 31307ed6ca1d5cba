// confball: command-line front end for the Monte-Carlo experiments.
//
//   confball coverage|radius-scan|lower-bound|lemmas --config c.json
//            [--seed U64] [--out path] [--format json|csv] [--threads N]
//
// Exit status: 0 all gates pass, 1 a gate failed, 2 bad config or usage.

#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "confball/harness.hpp"

namespace {

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_path;
  std::string format = "json";
  unsigned threads = confball::default_threads();
};

void add_common(CLI::App* sub, Options& opt, bool config_required) {
  auto* c = sub->add_option("--config", opt.config_path, "experiment config (JSON)");
  if (config_required) c->required();
  sub->add_option("--seed", opt.seed, "override the config seed");
  sub->add_option("--out", opt.out_path, "write the report here instead of stdout");
  sub->add_option("--format", opt.format, "report format")->check(CLI::IsMember({"json", "csv"}));
  sub->add_option("--threads", opt.threads, "worker threads")->check(CLI::PositiveNumber);
}

nlohmann::json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw confball::ConfigError("config: cannot open " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw confball::ConfigError("config: " + path + " is not valid JSON: " + e.what());
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Confidence balls for the Gaussian sequence model"};
  app.require_subcommand(1);
  Options opt;
  auto* coverage = app.add_subcommand("coverage", "empirical coverage of one ball");
  auto* scan = app.add_subcommand("radius-scan", "mean squared radius over a range of n");
  auto* lower = app.add_subcommand("lower-bound", "mean squared radius against lower-bound floors");
  auto* lemmas = app.add_subcommand("lemmas", "Monte-Carlo and grid checks of the auxiliary inequalities");
  add_common(coverage, opt, true);
  add_common(scan, opt, true);
  add_common(lower, opt, true);
  add_common(lemmas, opt, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  const std::string sub = app.get_subcommands().front()->get_name();
  confball::ExperimentReport report;
  try {
    nlohmann::json cfg = opt.config_path.empty() ? nlohmann::json{{"kind", "lemma_suite"}} : load_json(opt.config_path);
    if (!cfg.is_object()) throw confball::ConfigError("config: top level must be an object");
    const auto wanted = confball::experiment_kind_from_string(sub);
    if (!cfg.contains("kind")) cfg["kind"] = confball::to_string(wanted);
    auto config = confball::parse_config(cfg);
    if (config.kind != wanted) {
      throw confball::ConfigError(std::string("kind: config is ") + confball::to_string(config.kind) +
                                  " but subcommand is " + sub);
    }
    if (opt.seed) config.seed = *opt.seed;
    report = confball::run_experiment(config, opt.threads);
  } catch (const std::invalid_argument& e) {
    std::cerr << "confball: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "confball: " << e.what() << '\n';
    return 2;
  }

  const std::string text =
      opt.format == "csv" ? confball::report_to_csv(report) : confball::report_to_json(report).dump(2) + "\n";
  if (opt.out_path.empty()) {
    std::cout << text;
  } else {
    std::ofstream out(opt.out_path);
    if (!out) {
      std::cerr << "confball: cannot write " << opt.out_path << '\n';
      return 2;
    }
    out << text;
  }
  if (!report.pass()) {
    for (const auto& g : report.gates) {
      if (!g.pass) std::cerr << "gate failed: " << g.name << " (" << g.value << " vs " << g.threshold << ")\n";
    }
    return 1;
  }
  return 0;
}
