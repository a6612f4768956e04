// Command-line front end: gen, train, eval, score.

#include <cstdlib>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "lir/pipeline.hpp"

namespace {

void init_logging() {
  auto logger = spdlog::stderr_color_mt("lir");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%l] %v");
  spdlog::set_level(spdlog::level::warn);
  if (const char* level = std::getenv("LIR_LOG")) spdlog::set_level(spdlog::level::from_str(level));
}

lir::RunConfig load(const std::string& path, const std::optional<std::string>& out,
                    const std::vector<std::uint64_t>& seeds, bool include_logits) {
  auto cfg = lir::load_run_config(path);
  if (out) cfg.out_dir = *out;
  if (!seeds.empty()) cfg.seeds = seeds;
  if (include_logits) cfg.include_logits = true;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  init_logging();
  CLI::App app{"Out-of-distribution detection from intermediate-layer energies"};
  app.require_subcommand(1);

  std::string config;
  std::optional<std::string> out;
  std::vector<std::uint64_t> seeds;
  bool include_logits = false;
  auto add_run_flags = [&](CLI::App* sub) {
    sub->add_option("--config", config, "key=value run configuration")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", out, "output directory (overrides the config)");
    sub->add_option("--seed", seeds, "seed to run; repeatable (overrides the config)");
  };

  auto* gen = app.add_subcommand("gen", "generate the synthetic task for every seed");
  add_run_flags(gen);
  auto* train = app.add_subcommand("train", "train CE or R-EBO classifiers for every seed");
  add_run_flags(train);
  auto* eval = app.add_subcommand("eval", "fit detectors and write reports for every seed");
  add_run_flags(eval);
  eval->add_flag("--include-logits", include_logits, "let the best-layer oracle also consider the logits");

  std::string detector_file, energy_file;
  double threshold = 0.0;
  auto* score = app.add_subcommand("score", "score an energy file with a saved detector");
  score->add_option("--detector", detector_file, "LIRD detector file")->required()->check(CLI::ExistingFile);
  score->add_option("--energies", energy_file, "LIRE energy file")->required()->check(CLI::ExistingFile);
  score->add_option("--threshold", threshold, "decision threshold in the detector's score units")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) lir::cmd_gen(load(config, out, seeds, false));
    if (*train) lir::cmd_train(load(config, out, seeds, false));
    if (*eval) lir::cmd_eval(load(config, out, seeds, include_logits));
    if (*score) lir::cmd_score(detector_file, energy_file, threshold, std::cout);
  } catch (const lir::ConfigError& e) {
    std::cerr << "error: stage config: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
