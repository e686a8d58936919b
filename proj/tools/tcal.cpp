#include <CLI11.hpp>

#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include "tcal/errors.hpp"
#include "tcal/io_formats.hpp"
#include "tcal/pipeline.hpp"

namespace {

std::vector<tcal::DatasetVariant> selected_variants(const std::string& which) {
  if (which == "all")
    return {tcal::DatasetVariant::I, tcal::DatasetVariant::II,
            tcal::DatasetVariant::III};
  return {tcal::parse_variant(which)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"texture classifier calibration pipeline"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::string out_dir = "out";
  std::string variant_flag;
  std::uint64_t seed = 0;
  int bins = 0;
  bool calibrated = false;
  bool force = false;

  app.add_option("--config", config_path, "configuration file (INI)");
  app.add_option("--out", out_dir, "output directory")->capture_default_str();
  app.add_option("--variant", variant_flag,
                 "dataset variant: I, II, III, or all");
  auto* seed_opt = app.add_option("--seed", seed, "root random seed");
  auto* bins_opt = app.add_option("--bins", bins, "confidence bin count");
  app.add_flag("--calibrated", calibrated,
               "evaluate with the fitted temperature");
  app.add_flag("--force", force, "overwrite existing outputs");

  auto* gen = app.add_subcommand("gen", "render the dataset and manifest");
  auto* train =
      app.add_subcommand("train", "cross-validated training per variant");
  auto* calibrate =
      app.add_subcommand("calibrate", "fit the temperature on the holdout");
  auto* report =
      app.add_subcommand("report", "metrics and reliability diagram");
  auto* sweep = app.add_subcommand("sweep", "blur and noise robustness curves");
  auto* all = app.add_subcommand("all", "full pipeline for variants I-III");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;  // bad usage is a configuration error
  }

  try {
    tcal::RunContext ctx;
    ctx.config = tcal::load_config(config_path);
    if (seed_opt->count() > 0) ctx.config.root_seed = seed;
    if (bins_opt->count() > 0) ctx.config.bins = bins;
    if (!variant_flag.empty()) ctx.config.variant = variant_flag;
    ctx.out_dir = out_dir;
    ctx.force = force;
    tcal::validate_config(ctx.config);

    if (gen->parsed()) tcal::cmd_gen(ctx);
    if (train->parsed())
      for (tcal::DatasetVariant v : selected_variants(ctx.config.variant))
        tcal::cmd_train(ctx, v);
    if (calibrate->parsed())
      for (tcal::DatasetVariant v : selected_variants(ctx.config.variant))
        tcal::cmd_calibrate(ctx, v);
    if (report->parsed())
      for (tcal::DatasetVariant v : selected_variants(ctx.config.variant))
        tcal::cmd_report(ctx, v, calibrated);
    if (sweep->parsed())
      for (tcal::DatasetVariant v : selected_variants(ctx.config.variant))
        tcal::cmd_sweep(ctx, v, calibrated);
    if (all->parsed()) tcal::cmd_all(ctx);
  } catch (const tcal::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const tcal::IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 3;
  } catch (const tcal::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 4;
  }
  return 0;
}
