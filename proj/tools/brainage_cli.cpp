// brainage: phantom brain-age pipeline driver.
//
//   brainage [--config run.json] [--seed N] [--out DIR] <command>
//
// Commands: synth, split, train --modality t1w|aicbv, predict, ensemble,
// report, gradcam, all. Failures print one JSON object on stderr and exit 1.

#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "brainage/pipeline.hpp"

namespace bp = brainage::pipeline;

int main(int argc, char** argv) {
  CLI::App app{"Dual-modality brain-age pipeline on synthetic phantoms"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  bool quiet = false;
  app.add_option("--config", config_path, "Run configuration (JSON)")->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "Root seed; overrides the config");
  app.add_option("--out", out, "Output directory; overrides paths.out");
  app.add_flag("-q,--quiet", quiet, "Suppress progress lines");

  auto* synth = app.add_subcommand("synth", "Generate phantom volumes and the manifest");
  auto* split = app.add_subcommand("split", "Stratified 10-way partition with KL-selected holdouts");
  auto* train = app.add_subcommand("train", "Train one modality's VGG8 regressor");
  std::string modality;
  train->add_option("--modality", modality, "t1w or aicbv")
      ->required()
      ->check(CLI::IsMember({"t1w", "aicbv"}, CLI::ignore_case));
  auto* predict = app.add_subcommand("predict", "Predict every record with both models");
  auto* ensemble = app.add_subcommand("ensemble", "Fit stacked regressions and nested F tests");
  auto* report = app.add_subcommand("report", "Write the text table and breakdown CSVs");
  auto* gradcam = app.add_subcommand("gradcam", "Saliency overlays per modality and age decade");
  auto* all = app.add_subcommand("all", "Run every stage in order");

  CLI11_PARSE(app, argc, argv);

  try {
    bp::Context ctx;
    if (!config_path.empty()) ctx.cfg = bp::load_config(config_path);
    if (seed) ctx.cfg.seed = *seed;
    if (out) ctx.cfg.paths.out = *out;
    bp::validate(ctx.cfg);
    if (!quiet) ctx.log = [](std::string_view line) { std::cout << line << std::endl; };

    if (synth->parsed()) bp::cmd_synth(ctx);
    if (split->parsed()) bp::cmd_split(ctx);
    if (train->parsed()) bp::cmd_train(ctx, brainage::parse_modality(modality));
    if (predict->parsed()) bp::cmd_predict(ctx);
    if (ensemble->parsed()) bp::cmd_ensemble(ctx);
    if (report->parsed()) bp::cmd_report(ctx);
    if (gradcam->parsed()) bp::cmd_gradcam(ctx);
    if (all->parsed()) bp::cmd_all(ctx);
  } catch (const std::exception& e) {
    std::cerr << bp::error_json(e) << std::endl;
    return 1;
  }
  return 0;
}
