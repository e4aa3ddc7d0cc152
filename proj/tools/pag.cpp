#include <cstdint>
#include <functional>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "pagkit/error.hpp"
#include "pagkit/report.hpp"

namespace {

using namespace pagkit;

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitStatistical = 4;

int exit_code_for(ErrorCode code) {
  switch (category_of(code)) {
    case ErrorCategory::Config: return kExitConfig;
    case ErrorCategory::Data: return kExitData;
    case ErrorCategory::Statistical: return kExitStatistical;
  }
  return kExitData;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Prostate age gap pipeline"};
  app.require_subcommand(1);
  app.fallthrough();

  std::optional<std::string> config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  app.add_option("--config", config_path, "JSON run configuration")->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "Override the run seed");
  app.add_option("--out", out_dir, "Override the output directory");

  std::function<void(const report::RunConfig&)> stage;
  const auto add_stage = [&](const char* name, const char* help, std::function<void(const report::RunConfig&)> fn) {
    app.add_subcommand(name, help)->callback([&stage, fn = std::move(fn)] { stage = fn; });
  };
  add_stage("synth", "Generate a synthetic phantom cohort", report::cmd_synth);
  add_stage("preprocess", "Normalize, crop and slice the cohort volumes", report::cmd_preprocess);
  add_stage("split", "Patient-level train/test split and CV folds", report::cmd_split);
  add_stage("train", "Train one regressor per CV fold", report::cmd_train);
  add_stage("predict", "Predict ages and age gaps", report::cmd_predict);
  add_stage("analyze", "Tables, odds ratios, ROC and group statistics", [](const report::RunConfig& c) { report::cmd_analyze(c); });
  add_stage("plot", "Render SVG figures from the analysis bundle", report::cmd_plot);
  add_stage("run-all", "Run every stage in order", report::cmd_run_all);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    std::optional<report::fs::path> config;
    if (config_path) config = *config_path;
    std::optional<report::fs::path> out;
    if (out_dir) out = *out_dir;
    const auto cfg = report::load_config(config, seed, out);
    stage(cfg);
  } catch (const Error& e) {
    std::cerr << "pag: " << e.what() << '\n';
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "pag: " << e.what() << '\n';
    return kExitData;
  }
  return 0;
}
