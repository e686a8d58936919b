#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tcal/calib_metrics.hpp"
#include "tcal/calib_scaling.hpp"
#include "tcal/dataset.hpp"
#include "tcal/image.hpp"

namespace tcal {

// Binary PGM, P5 with maxval 255. The writer emits exactly
// "P5\n<w> <h>\n255\n" followed by the raw payload.
ImageBuffer read_pgm(const std::string& path);
void write_pgm(const ImageBuffer& img, const std::string& path);

// Logits CSV: header "sample_id,label,z0,...", one row per sample, values in
// shortest round-trip decimal form. k is inferred from the header.
LogitMatrix read_logits(const std::string& path);
void write_logits(const LogitMatrix& m, const std::string& path);

// Manifest CSV with the fixed column set
// sample_id,class,geometry_variant,material_level,contact_angle,split,fold,
// group,blur_sigma,noise_sigma,path; fields are empty where not applicable.
DatasetManifest read_manifest(const std::string& path);
void write_manifest(const DatasetManifest& manifest, const std::string& path);

// Temperature artifact: a one-line "T=<value>" text file plus a diagnostics
// JSON carrying the fit trace and the pre-fit (T=1) holdout NLL.
void write_temperature(const Temperature& t, double pre_nll, const std::string& txt_path,
                       const std::string& json_path);
double read_temperature(const std::string& txt_path);

void write_reliability_csv(const ReliabilityReport& report, const std::string& path);

struct SweepRow {
  std::string perturbation;  // "blur" or "noise"
  double sigma = 0.0;
  double accuracy = 0.0;
  double avg_confidence = 0.0;
  double ece = 0.0;
};

void write_sweep_csv(const std::vector<SweepRow>& rows, const std::string& path);
std::vector<SweepRow> read_sweep_csv(const std::string& path);

void write_metrics_json(const std::string& variant, bool calibrated,
                        const ReliabilityReport& report, int bins, const std::string& path);

struct ExperimentConfig {
  std::uint64_t root_seed = 2026;
  std::string dataset_dir = "dataset";  // resolved under the output root
  std::string variant = "all";          // "I", "II", "III", or "all"

  int image_size = 224;
  double test_fraction = 0.2;
  int folds = 5;
  double group_blur_cap = 32.0;
  double group_noise_cap = 30.0;

  int input_size = 64;
  std::vector<int> channels = {8, 16, 32};
  std::vector<int> dilations = {1, 2, 4};

  int epochs = 40;
  int batch_size = 8;
  double learning_rate = 0.005;
  double momentum = 0.9;
  double weight_decay = 1e-4;

  double log_t_lower = -2.99573227355399099;  // ln 0.05
  double log_t_upper = 2.99573227355399099;   // ln 20
  double fit_tolerance = 1e-6;

  int bins = 10;

  int blur_points = 9;
  int noise_points = 7;

  bool operator==(const ExperimentConfig&) const = default;
};

// Sectioned key-value text. Unknown keys are rejected; absent keys keep
// their defaults. An empty path yields the default config.
ExperimentConfig load_config(const std::string& path);
void validate_config(const ExperimentConfig& cfg);

// Writes the effective config with every key stated explicitly; reloading
// the echo reproduces the config exactly.
void write_config_echo(const ExperimentConfig& cfg, const std::string& path);

// Shortest decimal form that parses back to the identical double.
std::string format_double(double value);

}  // namespace tcal
