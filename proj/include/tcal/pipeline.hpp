#pragma once

#include <iosfwd>
#include <string>

#include "tcal/augment.hpp"
#include "tcal/io_formats.hpp"

namespace tcal {

// Shared state for the experiment commands. All artifacts live under
// out_dir; the dataset goes to out_dir/<config.dataset_dir>.
struct RunContext {
  ExperimentConfig config;
  std::string out_dir = "out";
  bool force = false;
  std::ostream* log = nullptr;  // null -> std::cout
};

std::string dataset_path(const RunContext& ctx);

// Renders the corpus, assigns splits/folds/groups, writes the manifest, and
// prints per-class/split/group counts. Refuses to clobber an existing
// dataset unless ctx.force is set.
void cmd_gen(const RunContext& ctx);

// Cross-validated training for one variant: writes model_<V>.ckpt,
// holdout_<V>.csv (pooled validation logits), and train_report_<V>.json.
void cmd_train(const RunContext& ctx, DatasetVariant variant);

// Fits the temperature on the holdout logits; writes temperature_<V>.txt
// and temperature_<V>.json and prints the pre/post-fit NLL.
void cmd_calibrate(const RunContext& ctx, DatasetVariant variant);

// Evaluates the expanded test set, optionally with the fitted temperature:
// metrics_<V>_<mode>.json, reliability_<V>_<mode>.csv, and the reliability
// diagram reliability_<V>_<mode>.svg.
void cmd_report(const RunContext& ctx, DatasetVariant variant, bool calibrated);

// Blur and noise robustness curves over the clean test split:
// sweep_<V>_{blur,noise}_<mode>.csv plus matching two-curve SVG charts.
void cmd_sweep(const RunContext& ctx, DatasetVariant variant, bool calibrated);

// gen, then train/calibrate/report/sweep for variants I-III, then a combined
// summary table (written to summary.txt) and run_info.json with timings.
void cmd_all(const RunContext& ctx);

}  // namespace tcal
