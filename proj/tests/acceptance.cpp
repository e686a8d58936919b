// End-to-end acceptance gate. Runs the full default-configuration pipeline
// once, then checks every shipped guarantee and prints exactly one PASS/FAIL
// line per criterion. Exit status 0 only if all criteria hold.
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "oracles.hpp"
#include "tcal/augment.hpp"
#include "tcal/calib_metrics.hpp"
#include "tcal/calib_scaling.hpp"
#include "tcal/classifier.hpp"
#include "tcal/dataset.hpp"
#include "tcal/errors.hpp"
#include "tcal/image.hpp"
#include "tcal/io_formats.hpp"
#include "tcal/pipeline.hpp"
#include "tcal/rng.hpp"

using namespace tcal;
namespace fs = std::filesystem;

namespace {

constexpr const char* kOutDir = "acceptance_out";

struct Outcome {
  bool ok = false;
  std::string detail;
};

double g_pipeline_seconds = 0.0;

double elapsed_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

nlohmann::json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in.good()) throw IoError("cannot open '" + path + "'");
  return nlohmann::json::parse(in);
}

std::string fmt(const char* pattern, ...) {
  char buf[512];
  va_list args;
  va_start(args, pattern);
  std::vsnprintf(buf, sizeof buf, pattern, args);
  va_end(args);
  return buf;
}

// --- criterion 1: metrics against the brute-force oracle -------------------

Outcome check_metric_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  const int kSets = 1000;
  const int kBins[] = {1, 5, 10, 15};
  double worst = 0.0;
  Rng rng(190001, 0);
  for (int s = 0; s < kSets; ++s) {
    const auto rp = oracle::random_predictions(rng);
    const int m = kBins[s % 4];
    const PredictionSet ps =
        derive_predictions(rp.probabilities, rp.k, rp.labels);
    const ReliabilityReport rep = summarize(ps, BinningConfig{m});
    const oracle::Report ref =
        oracle::summarize(rp.probabilities, rp.k, rp.labels, m);
    for (double delta :
         {rep.ece - ref.ece, rep.mce - ref.mce, rep.ace - ref.ace,
          rep.accuracy - ref.accuracy,
          rep.avg_confidence - ref.avg_confidence})
      worst = std::max(worst, std::fabs(delta));
  }
  const double secs = elapsed_since(t0);
  return {worst < 1e-12 && secs < 10.0,
          fmt("1000 sets, max |delta| %.2e, %.1f s", worst, secs)};
}

// --- criterion 2: hand-worked two-bin example -------------------------------

Outcome check_hand_example() {
  const PredictionSet ps = derive_predictions(
      {0.85, 0.15, 0.90, 0.10, 0.95, 0.05, 0.60, 0.40}, 2, {0, 1, 1, 0});
  const auto bins = bin_predictions(ps, BinningConfig{5});
  const double e = ece(bins, ps.n);
  const double m = mce(bins);
  const double a = ace(bins);
  const bool ok = std::fabs(e - 0.525) < 1e-4 && std::fabs(m - 0.5667) < 1e-4 &&
                  std::fabs(a - 0.4833) < 1e-4;
  return {ok, fmt("ECE %.4f MCE %.4f ACE %.4f", e, m, a)};
}

// --- criterion 3: temperature recovery and scaling invariance ---------------

Outcome check_temperature_recovery() {
  const auto t0 = std::chrono::steady_clock::now();
  const FitConfig fit_cfg;
  double worst_rel = 0.0;
  double worst_inv = 0.0;
  for (double c : {0.5, 2.0, 3.0, 5.0}) {
    Rng rng(static_cast<std::uint64_t>(c * 1000) + 77, 0);
    const LogitMatrix scaled = oracle::calibrated_exact(rng, 100, c);
    const Temperature t = fit_temperature(scaled, fit_cfg);
    worst_rel = std::max(worst_rel, std::fabs(t.value - c) / c);

    LogitMatrix base = scaled;
    for (double& z : base.logits) z /= c;
    const Temperature tb = fit_temperature(base, fit_cfg);
    const double expected = c * tb.value;
    worst_inv =
        std::max(worst_inv, std::fabs(t.value - expected) / expected);
  }
  const double secs = elapsed_since(t0);
  return {worst_rel < 0.02 && worst_inv < 1e-3 && secs < 30.0,
          fmt("max rel err %.4f, invariance err %.2e, %.1f s", worst_rel,
              worst_inv, secs)};
}

// --- criteria 4 and 5: pipeline metrics -------------------------------------

struct VariantPair {
  nlohmann::json uncal;
  nlohmann::json cal;
};

std::map<std::string, VariantPair> load_metric_pairs() {
  std::map<std::string, VariantPair> pairs;
  for (const std::string tag : {"I", "II", "III"}) {
    pairs[tag] = {
        load_json(std::string(kOutDir) + "/metrics_" + tag +
                  "_uncalibrated.json"),
        load_json(std::string(kOutDir) + "/metrics_" + tag +
                  "_calibrated.json")};
  }
  return pairs;
}

Outcome check_accuracy_invariance() {
  std::string detail;
  bool ok = true;
  for (const auto& [tag, pair] : load_metric_pairs()) {
    const double u = pair.uncal.at("accuracy").get<double>();
    const double c = pair.cal.at("accuracy").get<double>();
    const int n = pair.uncal.at("n").get<int>();
    ok = ok && u == c && n == 188;
    if (!detail.empty()) detail += ", ";
    detail += fmt("%s acc %.4f (n=%d)", tag.c_str(), u, n);
  }
  return {ok, detail};
}

Outcome check_calibration_direction() {
  bool ok = true;
  std::string detail;
  for (const auto& [tag, pair] : load_metric_pairs()) {
    const double ue = pair.uncal.at("ece").get<double>();
    const double ce = pair.cal.at("ece").get<double>();
    const double ua = pair.uncal.at("ace").get<double>();
    const double ca = pair.cal.at("ace").get<double>();
    const double acc = pair.uncal.at("accuracy").get<double>();
    const double ugap =
        std::fabs(pair.uncal.at("avg_confidence").get<double>() - acc);
    const double cgap =
        std::fabs(pair.cal.at("avg_confidence").get<double>() - acc);
    bool v_ok = ce < ue && ca < ua && cgap < ugap;
    if (tag == "I") v_ok = v_ok && ugap >= 0.05;
    ok = ok && v_ok;
    if (!detail.empty()) detail += "; ";
    detail += fmt("%s ECE %.4f->%.4f gap %.4f->%.4f", tag.c_str(), ue, ce,
                  ugap, cgap);
  }
  ok = ok && g_pipeline_seconds < 900.0;
  detail += fmt("; pipeline %.0f s", g_pipeline_seconds);
  return {ok, detail};
}

// --- criterion 6: finite-difference gradient check ---------------------------

Outcome check_gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  ModelConfig cfg;
  cfg.input_size = 16;
  cfg.channels = {4, 8};
  cfg.dilations = {1, 2};
  const std::size_t params = param_count(cfg);

  Rng rng(424242, 0);
  Batch batch;
  const int npx = cfg.input_size * cfg.input_size;
  for (int i = 0; i < 4; ++i) {
    std::vector<double> plane(npx);
    for (double& v : plane) v = rng.uniform() * 2.0 - 1.0;
    batch.inputs.push_back(std::move(plane));
    batch.labels.push_back(static_cast<int>(rng.uniform_int(4)));
  }
  ModelParams model = init_model(cfg, 99);
  const double max_rel = gradient_check(model, cfg, batch, 512, 400);
  const double secs = elapsed_since(t0);
  return {params <= 5000 && max_rel < 1e-4 && secs < 60.0,
          fmt("%zu params, max rel err %.2e, %.1f s", params, max_rel, secs)};
}

// --- criterion 7: augmentation contracts -------------------------------------

Outcome check_augmentation() {
  bool ok = true;
  std::string detail;

  double worst_kernel = 0.0;
  for (double sigma : {0.5, 1.0, 7.3, 64.0, 256.0}) {
    const std::vector<double> k = gaussian_kernel(sigma);
    double sum = 0.0;
    for (double w : k) sum += w;
    worst_kernel = std::max(worst_kernel, std::fabs(sum - 1.0));
  }
  ok = ok && worst_kernel < 1e-12;

  Rng rng(606060, 0);
  ImageBuffer img(224, 224);
  for (auto& p : img.pixels)
    p = static_cast<std::uint8_t>(rng.uniform_int(256));
  const ImageBuffer flat = gaussian_blur(img, 256.0);
  int lo = 255, hi = 0;
  for (auto p : flat.pixels) {
    lo = std::min(lo, static_cast<int>(p));
    hi = std::max(hi, static_cast<int>(p));
  }
  ok = ok && (hi - lo) <= 2;

  ImageBuffer gray(224, 224);
  for (auto& p : gray.pixels) p = 128;
  Rng noise_rng(515151, 0);
  const ImageBuffer noisy = gaussian_noise(gray, 30.0, noise_rng);
  double mean = 0.0;
  for (auto p : noisy.pixels) mean += p;
  mean /= static_cast<double>(noisy.pixels.size());
  double var = 0.0;
  for (auto p : noisy.pixels) var += (p - mean) * (p - mean);
  var /= static_cast<double>(noisy.pixels.size());
  const double sd = std::sqrt(var);
  ok = ok && std::fabs(sd - 30.0) / 30.0 < 0.03;

  AugmentParams params;
  Rng a(727272, 0), b(727272, 0);
  const ImageBuffer one = training_pipeline(img, DatasetVariant::II, params, a);
  const ImageBuffer two = training_pipeline(img, DatasetVariant::II, params, b);
  ok = ok && one == two;

  detail = fmt("kernel err %.1e, flat range %d, noise sd %.2f, deterministic %s",
               worst_kernel, hi - lo, sd, one == two ? "yes" : "no");
  return {ok, detail};
}

// --- criterion 8: dataset topology -------------------------------------------

Outcome check_topology() {
  const DatasetManifest manifest =
      read_manifest(std::string(kOutDir) + "/dataset/manifest.csv");
  std::map<TextureClass, int> per_class;
  int base = 0, train = 0, test = 0, expanded = 0;
  std::vector<int> fold_sizes(5, 0);
  double b_max = 0.0, c_max = 0.0;
  bool groups_ok = true;
  for (const SampleRecord& rec : manifest.samples) {
    if (rec.group != '\0') {
      ++expanded;
      if (rec.group == 'B') b_max = std::max(b_max, rec.blur_sigma);
      if (rec.group == 'C') c_max = std::max(c_max, rec.noise_sigma);
      if (rec.group < 'A' || rec.group > 'D') groups_ok = false;
      continue;
    }
    ++base;
    per_class[rec.spec.texture] += 1;
    if (rec.split == "train") {
      ++train;
      if (rec.fold >= 0 && rec.fold < 5) fold_sizes[rec.fold] += 1;
    } else if (rec.split == "test") {
      ++test;
    }
  }
  bool folds_ok = true;
  for (int size : fold_sizes) folds_ok = folds_ok && size > 0;
  const bool ok = base == 229 && per_class[TextureClass::Asteroid] == 57 &&
                  per_class[TextureClass::Gyrus] == 57 &&
                  per_class[TextureClass::Oval] == 55 &&
                  per_class[TextureClass::Round] == 60 && train == 182 &&
                  test == 47 && expanded == 188 && folds_ok && groups_ok &&
                  b_max <= 32.0 && c_max <= 30.0;
  return {ok, fmt("229=%d classes %d/%d/%d/%d split %d/%d expanded %d "
                  "caps B %.0f C %.0f",
                  base, per_class[TextureClass::Asteroid],
                  per_class[TextureClass::Gyrus],
                  per_class[TextureClass::Oval],
                  per_class[TextureClass::Round], train, test, expanded, b_max,
                  c_max)};
}

// --- criterion 9: sweep grids and blur degradation ---------------------------

Outcome check_sweeps() {
  const auto blur = read_sweep_csv(std::string(kOutDir) +
                                   "/sweep_I_blur_uncalibrated.csv");
  const auto noise = read_sweep_csv(std::string(kOutDir) +
                                    "/sweep_I_noise_uncalibrated.csv");
  bool grid_ok = blur.size() == 9 && noise.size() == 7;
  if (grid_ok)
    for (int i = 0; i < 9; ++i)
      grid_ok = grid_ok && blur[i].sigma == std::ldexp(1.0, i);
  const double noise_grid[] = {1, 9, 17, 25, 33, 41, 50};
  if (grid_ok)
    for (int i = 0; i < 7; ++i) grid_ok = grid_ok && noise[i].sigma == noise_grid[i];
  const bool degraded =
      grid_ok && blur.back().accuracy < blur.front().accuracy;
  std::string detail = grid_ok
                           ? fmt("blur acc %.3f@1 -> %.3f@256",
                                 blur.front().accuracy, blur.back().accuracy)
                           : "unexpected grid";
  return {grid_ok && degraded, detail};
}

// --- criterion 10: lossless round-trips ---------------------------------------

Outcome check_round_trips() {
  fs::create_directories(std::string(kOutDir) + "/tmp");
  const std::string dir = std::string(kOutDir) + "/tmp";
  Rng rng(808080, 0);
  int failures = 0;

  for (int i = 0; i < 100; ++i) {
    ImageBuffer img(8 + static_cast<int>(rng.uniform_int(56)),
                    8 + static_cast<int>(rng.uniform_int(56)));
    for (auto& p : img.pixels)
      p = static_cast<std::uint8_t>(rng.uniform_int(256));
    const std::string path = dir + "/rt.pgm";
    write_pgm(img, path);
    if (!(read_pgm(path) == img)) ++failures;
  }

  for (int i = 0; i < 100; ++i) {
    LogitMatrix m;
    m.n = 1 + static_cast<int>(rng.uniform_int(16));
    m.k = 2 + static_cast<int>(rng.uniform_int(6));
    for (int r = 0; r < m.n; ++r) {
      m.sample_ids.push_back("s" + std::to_string(r));
      m.labels.push_back(static_cast<int>(rng.uniform_int(m.k)));
      for (int j = 0; j < m.k; ++j)
        m.logits.push_back((rng.uniform() * 2.0 - 1.0) * 30.0);
    }
    const std::string path = dir + "/rt.csv";
    write_logits(m, path);
    const LogitMatrix back = read_logits(path);
    if (back.n != m.n || back.k != m.k || back.logits != m.logits ||
        back.labels != m.labels || back.sample_ids != m.sample_ids)
      ++failures;
  }

  for (int i = 0; i < 100; ++i) {
    ModelConfig cfg;
    cfg.input_size = 16;
    cfg.channels = {2 + static_cast<int>(rng.uniform_int(4)),
                    2 + static_cast<int>(rng.uniform_int(6))};
    cfg.dilations = {1, 1 + static_cast<int>(rng.uniform_int(2))};
    ModelParams params = init_model(cfg, rng.uniform_int(1u << 20));
    const std::string path = dir + "/rt.ckpt";
    save_checkpoint(params, cfg, path);
    const auto [cfg_back, back] = load_checkpoint(path);
    if (!(back.values == params.values && cfg_back.input_size == cfg.input_size &&
          cfg_back.channels == cfg.channels &&
          cfg_back.dilations == cfg.dilations))
      ++failures;
  }

  for (int i = 0; i < 100; ++i) {
    ExperimentConfig cfg;
    cfg.root_seed = rng.uniform_int(1u << 30);
    cfg.image_size = 64 + static_cast<int>(rng.uniform_int(512));
    cfg.input_size = 16 * (1 + static_cast<int>(rng.uniform_int(4)));
    cfg.epochs = 1 + static_cast<int>(rng.uniform_int(100));
    cfg.batch_size = 1 + static_cast<int>(rng.uniform_int(64));
    cfg.learning_rate = std::pow(10.0, -1.0 - 3.0 * rng.uniform());
    cfg.momentum = rng.uniform();
    cfg.weight_decay = std::pow(10.0, -2.0 - 4.0 * rng.uniform());
    cfg.fit_tolerance = std::pow(10.0, -4.0 - 4.0 * rng.uniform());
    cfg.bins = 1 + static_cast<int>(rng.uniform_int(15));
    cfg.blur_points = 2 + static_cast<int>(rng.uniform_int(8));
    cfg.noise_points = 2 + static_cast<int>(rng.uniform_int(9));
    const std::string path = dir + "/rt.ini";
    write_config_echo(cfg, path);
    if (!(load_config(path) == cfg)) ++failures;
  }

  return {failures == 0, fmt("%d failures over 400 instances", failures)};
}

}  // namespace

int main() {
  std::fprintf(stderr, "running full pipeline (default config) into %s ...\n",
               kOutDir);
  try {
    fs::remove_all(kOutDir);
    std::ostringstream log;
    RunContext ctx;
    ctx.out_dir = kOutDir;
    ctx.log = &log;
    const auto t0 = std::chrono::steady_clock::now();
    cmd_all(ctx);
    g_pipeline_seconds = elapsed_since(t0);
    std::fprintf(stderr, "%s", log.str().c_str());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "pipeline run failed: %s\n", e.what());
  }

  struct Criterion {
    int id;
    const char* label;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria = {
      {1, "metric oracle equivalence", check_metric_oracle},
      {2, "hand-computed bin example", check_hand_example},
      {3, "temperature recovery", check_temperature_recovery},
      {4, "accuracy invariance under scaling", check_accuracy_invariance},
      {5, "calibration improves ECE/ACE/gap", check_calibration_direction},
      {6, "gradient correctness", check_gradients},
      {7, "augmentation contracts", check_augmentation},
      {8, "dataset topology", check_topology},
      {9, "sweep grids and blur degradation", check_sweeps},
      {10, "lossless round-trips", check_round_trips},
  };

  int failed = 0;
  for (const Criterion& c : criteria) {
    Outcome out;
    try {
      out = c.run();
    } catch (const std::exception& e) {
      out = {false, std::string("exception: ") + e.what()};
    }
    std::printf("%s  %2d  %s (%s)\n", out.ok ? "PASS" : "FAIL", c.id, c.label,
                out.detail.c_str());
    std::fflush(stdout);
    if (!out.ok) ++failed;
  }
  if (failed == 0) {
    std::printf("acceptance: all %zu criteria passed\n", criteria.size());
    return 0;
  }
  std::printf("acceptance: %d of %zu criteria FAILED\n", failed,
              criteria.size());
  return 1;
}
