#include "tcal/pipeline.hpp"

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "tcal/calib_metrics.hpp"
#include "tcal/calib_scaling.hpp"
#include "tcal/classifier.hpp"
#include "tcal/dataset.hpp"
#include "tcal/errors.hpp"
#include "tcal/rng.hpp"
#include "tcal/svg.hpp"

namespace tcal {

namespace {

namespace fs = std::filesystem;

std::ostream& logger(const RunContext& ctx) {
  return ctx.log ? *ctx.log : std::cout;
}

std::string artifact(const RunContext& ctx, const std::string& name) {
  return ctx.out_dir + "/" + name;
}

std::string mode_name(bool calibrated) {
  return calibrated ? "calibrated" : "uncalibrated";
}

void prepare_out_dir(const RunContext& ctx) {
  validate_config(ctx.config);
  fs::create_directories(ctx.out_dir);
  write_config_echo(ctx.config, artifact(ctx, "config_echo.ini"));
}

void require_file(const std::string& path, const std::string& what,
                  const std::string& producer) {
  if (!fs::exists(path))
    throw IoError("missing " + what + " '" + path + "'; run the " + producer +
                  " command first");
}

DatasetManifest load_dataset_manifest(const RunContext& ctx) {
  const std::string path = dataset_path(ctx) + "/manifest.csv";
  require_file(path, "dataset manifest", "gen");
  return read_manifest(path);
}

ModelConfig model_config_from(const ExperimentConfig& cfg) {
  ModelConfig mc;
  mc.input_size = cfg.input_size;
  mc.channels = cfg.channels;
  mc.dilations = cfg.dilations;
  return mc;
}

std::pair<ModelConfig, ModelParams> load_model(const RunContext& ctx,
                                               DatasetVariant variant) {
  const std::string path =
      artifact(ctx, "model_" + variant_name(variant) + ".ckpt");
  require_file(path, "model checkpoint", "train");
  return load_checkpoint(path);
}

double load_fitted_temperature(const RunContext& ctx, DatasetVariant variant) {
  const std::string path =
      artifact(ctx, "temperature_" + variant_name(variant) + ".txt");
  require_file(path, "temperature file", "calibrate");
  return read_temperature(path);
}

std::string metric_line(const ReliabilityReport& rep) {
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "accuracy %.4f | avg confidence %.4f | ECE %.4f | MCE %.4f | "
                "ACE %.4f (n=%d)",
                rep.accuracy, rep.avg_confidence, rep.ece, rep.mce, rep.ace,
                rep.n);
  return buf;
}

std::vector<double> blur_grid(int points) {
  std::vector<double> grid;
  for (int i = 0; i < points; ++i) grid.push_back(std::ldexp(1.0, i));
  return grid;
}

std::vector<double> noise_grid(int points) {
  std::vector<double> grid;
  for (int i = 0; i < points; ++i)
    grid.push_back(1.0 + std::floor(i * 49.0 / (points - 1)));
  return grid;
}

}  // namespace

std::string dataset_path(const RunContext& ctx) {
  return ctx.out_dir + "/" + ctx.config.dataset_dir;
}

void cmd_gen(const RunContext& ctx) {
  prepare_out_dir(ctx);
  const std::string dir = dataset_path(ctx);
  const ExperimentConfig& cfg = ctx.config;
  if (fs::exists(dir + "/manifest.csv")) {
    if (!ctx.force)
      throw ConfigError("dataset already exists at '" + dir +
                        "'; pass --force to regenerate");
    fs::remove_all(dir);
  }

  DatasetManifest manifest = build_dataset(cfg.root_seed, dir, cfg.image_size);
  stratified_split(manifest, cfg.test_fraction, cfg.root_seed);
  kfold(manifest, cfg.folds, cfg.root_seed);
  build_test_groups(manifest, cfg.group_blur_cap, cfg.group_noise_cap,
                    cfg.root_seed, dir);
  write_manifest(manifest, dir + "/manifest.csv");

  int base = 0, train = 0, test = 0;
  std::map<TextureClass, int> per_class;
  std::map<char, int> per_group;
  std::map<int, int> per_fold;
  for (const SampleRecord& rec : manifest.samples) {
    if (rec.group != '\0') {
      ++per_group[rec.group];
      continue;
    }
    ++base;
    ++per_class[rec.spec.texture];
    if (rec.split == "train") {
      ++train;
      ++per_fold[rec.fold];
    } else {
      ++test;
    }
  }

  std::ostream& log = logger(ctx);
  log << "dataset: " << base << " samples into '" << dir << "' (";
  bool first = true;
  for (TextureClass cls : kAllClasses) {
    if (!first) log << ", ";
    first = false;
    log << class_name(cls) << " " << per_class[cls];
  }
  log << ")\n";
  log << "split: " << train << " train / " << test << " test; folds:";
  for (const auto& [fold, count] : per_fold) log << " " << count;
  log << "\n";
  int expanded = 0;
  log << "expanded test groups:";
  for (const auto& [group, count] : per_group) {
    log << " " << group << " " << count;
    expanded += count;
  }
  log << " (" << expanded << " total)\n";
}

void cmd_train(const RunContext& ctx, DatasetVariant variant) {
  prepare_out_dir(ctx);
  const DatasetManifest manifest = load_dataset_manifest(ctx);
  const std::string tag = variant_name(variant);

  TrainConfig tc;
  tc.epochs = ctx.config.epochs;
  tc.batch_size = ctx.config.batch_size;
  tc.learning_rate = ctx.config.learning_rate;
  tc.momentum = ctx.config.momentum;
  tc.weight_decay = ctx.config.weight_decay;
  tc.variant = variant;
  tc.seed = derive_stream(derive_stream(ctx.config.root_seed, "train"), tag);

  const ModelConfig mc = model_config_from(ctx.config);
  const TrainOutput out = train(manifest, dataset_path(ctx), mc, tc);

  save_checkpoint(out.params, mc, artifact(ctx, "model_" + tag + ".ckpt"));
  write_logits(out.holdout, artifact(ctx, "holdout_" + tag + ".csv"));
  write_train_report(out.report, artifact(ctx, "train_report_" + tag + ".json"));

  std::ostream& log = logger(ctx);
  log << "variant " << tag << ": trained " << out.report.folds.size()
      << " folds; val accuracy";
  for (const FoldReport& f : out.report.folds) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), " %.3f", f.val_accuracy);
    log << buf;
  }
  log << "; best fold " << out.report.best_fold + 1 << ", final epochs "
      << out.report.final_epochs << "; holdout " << out.holdout.n << " rows\n";
}

void cmd_calibrate(const RunContext& ctx, DatasetVariant variant) {
  prepare_out_dir(ctx);
  const std::string tag = variant_name(variant);
  const std::string holdout_path = artifact(ctx, "holdout_" + tag + ".csv");
  require_file(holdout_path, "holdout logits", "train");
  const LogitMatrix holdout = read_logits(holdout_path);

  const double pre_nll = nll(holdout, 1.0);
  FitConfig fc;
  fc.log_t_lower = ctx.config.log_t_lower;
  fc.log_t_upper = ctx.config.log_t_upper;
  fc.tolerance = ctx.config.fit_tolerance;
  const Temperature fit = fit_temperature(holdout, fc);

  write_temperature(fit, pre_nll, artifact(ctx, "temperature_" + tag + ".txt"),
                    artifact(ctx, "temperature_" + tag + ".json"));

  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "variant %s: T = %.6f; holdout NLL %.6f (pre-fit) -> %.6f "
                "(post-fit)\n",
                tag.c_str(), fit.value, pre_nll, fit.nll_at_fit);
  logger(ctx) << buf;
}

void cmd_report(const RunContext& ctx, DatasetVariant variant,
                bool calibrated) {
  prepare_out_dir(ctx);
  const std::string tag = variant_name(variant);
  const auto [mc, params] = load_model(ctx, variant);
  const double temperature =
      calibrated ? load_fitted_temperature(ctx, variant) : 1.0;
  const DatasetManifest manifest = load_dataset_manifest(ctx);

  std::vector<SampleRecord> expanded;
  for (const SampleRecord& rec : manifest.samples)
    if (rec.group != '\0') expanded.push_back(rec);
  if (expanded.empty())
    throw ConfigError("manifest has no expanded test rows; run the gen "
                      "command first");

  const LogitMatrix logits =
      predict_logits(params, mc, expanded, dataset_path(ctx));
  const PredictionSet preds = scale_probabilities(logits, temperature);
  const ReliabilityReport rep = summarize(preds, BinningConfig{ctx.config.bins});

  const std::string mode = mode_name(calibrated);
  const std::string stem = tag + "_" + mode;
  write_metrics_json(tag, calibrated, rep, ctx.config.bins,
                     artifact(ctx, "metrics_" + stem + ".json"));
  write_reliability_csv(rep, artifact(ctx, "reliability_" + stem + ".csv"));
  write_reliability_svg(rep, "variant " + tag + " " + mode + " reliability",
                        artifact(ctx, "reliability_" + stem + ".svg"));

  logger(ctx) << "variant " << tag << " " << mode << ": " << metric_line(rep)
              << "\n";
}

void cmd_sweep(const RunContext& ctx, DatasetVariant variant, bool calibrated) {
  prepare_out_dir(ctx);
  const std::string tag = variant_name(variant);
  const auto [mc, params] = load_model(ctx, variant);
  const double temperature =
      calibrated ? load_fitted_temperature(ctx, variant) : 1.0;
  const DatasetManifest manifest = load_dataset_manifest(ctx);

  std::vector<SampleRecord> test_rows;
  for (const SampleRecord& rec : manifest.samples)
    if (rec.split == "test") test_rows.push_back(rec);
  if (test_rows.empty())
    throw ConfigError("manifest has no test rows; run the gen command first");

  std::vector<ImageBuffer> images;
  std::vector<int> labels;
  for (const SampleRecord& rec : test_rows) {
    images.push_back(read_pgm(dataset_path(ctx) + "/" + rec.path));
    labels.push_back(class_index(rec.spec.texture));
  }

  const std::uint64_t sweep_seed =
      derive_stream(ctx.config.root_seed, "sweep");
  const std::string mode = mode_name(calibrated);
  std::ostream& log = logger(ctx);

  for (const std::string& kind : {std::string("blur"), std::string("noise")}) {
    const std::vector<double> grid = kind == "blur"
                                         ? blur_grid(ctx.config.blur_points)
                                         : noise_grid(ctx.config.noise_points);
    const std::uint64_t kind_seed = derive_stream(sweep_seed, kind);
    std::vector<SweepRow> rows;
    for (std::size_t gi = 0; gi < grid.size(); ++gi) {
      const double sigma = grid[gi];
      const std::uint64_t sigma_seed =
          derive_stream(kind_seed, static_cast<std::uint64_t>(gi));
      LogitMatrix m;
      m.n = static_cast<int>(test_rows.size());
      m.k = mc.num_classes;
      for (std::size_t i = 0; i < images.size(); ++i) {
        ImageBuffer perturbed;
        if (kind == "blur") {
          perturbed = gaussian_blur(images[i], sigma);
        } else {
          Rng rng(derive_stream(sigma_seed, test_rows[i].sample_id), 0);
          perturbed = gaussian_noise(images[i], sigma, rng);
        }
        const std::vector<double> z = forward_image(params, mc, perturbed);
        m.logits.insert(m.logits.end(), z.begin(), z.end());
        m.labels.push_back(labels[i]);
        m.sample_ids.push_back(test_rows[i].sample_id);
      }
      const PredictionSet preds = scale_probabilities(m, temperature);
      const ReliabilityReport rep =
          summarize(preds, BinningConfig{ctx.config.bins});
      rows.push_back(
          SweepRow{kind, sigma, rep.accuracy, rep.avg_confidence, rep.ece});
    }
    const std::string stem = tag + "_" + kind + "_" + mode;
    write_sweep_csv(rows, artifact(ctx, "sweep_" + stem + ".csv"));
    write_sweep_svg(rows, "variant " + tag + " " + mode + " " + kind + " sweep",
                    artifact(ctx, "sweep_" + stem + ".svg"));
    log << "variant " << tag << " " << mode << " " << kind << " sweep:";
    for (const SweepRow& row : rows) {
      char buf[48];
      std::snprintf(buf, sizeof(buf), " %g:%.3f", row.sigma, row.accuracy);
      log << buf;
    }
    log << "\n";
  }
}

namespace {

struct VariantMetrics {
  double ece[2], mce[2], ace[2], conf[2];  // [0] uncalibrated, [1] calibrated
  double accuracy;
};

VariantMetrics read_back_metrics(const RunContext& ctx, const std::string& tag) {
  VariantMetrics vm{};
  for (int cal = 0; cal < 2; ++cal) {
    const std::string path = artifact(
        ctx, "metrics_" + tag + "_" + mode_name(cal == 1) + ".json");
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "' for reading");
    nlohmann::json j = nlohmann::json::parse(in);
    vm.ece[cal] = j.at("ece").get<double>();
    vm.mce[cal] = j.at("mce").get<double>();
    vm.ace[cal] = j.at("ace").get<double>();
    vm.conf[cal] = j.at("avg_confidence").get<double>();
    vm.accuracy = j.at("accuracy").get<double>();
  }
  return vm;
}

std::string summary_table(const RunContext& ctx) {
  std::ostringstream s;
  s << "Dataset |       ECE (u/c) |       MCE (u/c) |       ACE (u/c) |   "
       "AvgConf (u/c) | Accuracy\n";
  for (DatasetVariant v :
       {DatasetVariant::I, DatasetVariant::II, DatasetVariant::III}) {
    const std::string tag = variant_name(v);
    const VariantMetrics vm = read_back_metrics(ctx, tag);
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "%7s | %.4f / %.4f | %.4f / %.4f | %.4f / %.4f | %.4f / "
                  "%.4f |   %.4f\n",
                  tag.c_str(), vm.ece[0], vm.ece[1], vm.mce[0], vm.mce[1],
                  vm.ace[0], vm.ace[1], vm.conf[0], vm.conf[1], vm.accuracy);
    s << buf;
  }
  return s.str();
}

}  // namespace

void cmd_all(const RunContext& ctx) {
  prepare_out_dir(ctx);
  using Clock = std::chrono::steady_clock;
  const auto run_start = Clock::now();
  nlohmann::json timings = nlohmann::json::object();

  auto stage = [&](const std::string& name, auto&& fn) {
    const auto t0 = Clock::now();
    try {
      fn();
    } catch (const ConfigError& e) {
      throw ConfigError("stage " + name + ": " + e.what());
    } catch (const IoError& e) {
      throw IoError("stage " + name + ": " + e.what());
    } catch (const NumericError& e) {
      throw NumericError("stage " + name + ": " + e.what());
    }
    timings[name] =
        std::chrono::duration<double>(Clock::now() - t0).count();
  };

  stage("gen", [&] { cmd_gen(ctx); });
  for (DatasetVariant v :
       {DatasetVariant::I, DatasetVariant::II, DatasetVariant::III}) {
    const std::string tag = variant_name(v);
    stage("train " + tag, [&] { cmd_train(ctx, v); });
    stage("calibrate " + tag, [&] { cmd_calibrate(ctx, v); });
    stage("report " + tag + " uncalibrated", [&] { cmd_report(ctx, v, false); });
    stage("report " + tag + " calibrated", [&] { cmd_report(ctx, v, true); });
    stage("sweep " + tag + " uncalibrated", [&] { cmd_sweep(ctx, v, false); });
    stage("sweep " + tag + " calibrated", [&] { cmd_sweep(ctx, v, true); });
  }

  const std::string table = summary_table(ctx);
  logger(ctx) << "\n" << table;
  {
    std::ofstream out(artifact(ctx, "summary.txt"));
    if (!out) throw IoError("cannot open summary.txt for writing");
    out << table;
  }

  // Wall-clock bookkeeping; this is the one artifact that differs between
  // reruns.
  nlohmann::json info;
  info["format_version"] = 1;
  info["seed"] = ctx.config.root_seed;
  info["stage_seconds"] = timings;
  info["total_seconds"] =
      std::chrono::duration<double>(Clock::now() - run_start).count();
  const std::time_t now = std::time(nullptr);
  char stamp[32];
  std::strftime(stamp, sizeof(stamp), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  info["finished"] = stamp;
  std::ofstream out(artifact(ctx, "run_info.json"));
  if (!out) throw IoError("cannot open run_info.json for writing");
  out << info.dump(2) << "\n";
}

}  // namespace tcal
