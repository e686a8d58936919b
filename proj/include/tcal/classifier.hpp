#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "tcal/augment.hpp"
#include "tcal/calib_scaling.hpp"
#include "tcal/dataset.hpp"
#include "tcal/image.hpp"

namespace tcal {

// A small dilated convolutional classifier. Every stage has one 3x3
// convolution (zero padding equal to its dilation, so spatial size is
// preserved), a ReLU, and a 2x2 average pool with stride 2. The stack is
// followed by global average pooling and a linear head.
struct ModelConfig {
  int input_size = 64;
  std::vector<int> channels = {8, 16, 32};
  int kernel_size = 3;
  std::vector<int> dilations = {1, 2, 4};
  int num_classes = 4;
};

void validate_model_config(const ModelConfig& cfg);

// Total number of trainable scalars (conv weights + biases, head weights +
// bias).
int param_count(const ModelConfig& cfg);

// Flat parameter vector. Layout, in order:
//   per conv stage l: weights [out][in][ky][kx], then bias [out]
//   head:            weights [class][feature],  then bias [class]
struct ModelParams {
  std::vector<double> values;
};

// Fan-in-scaled uniform init for weights, zeros for biases.
ModelParams init_model(const ModelConfig& cfg, std::uint64_t seed);

// Forward pass over one grayscale plane of input_size^2 values in [0, 1],
// row-major. Returns num_classes logits.
std::vector<double> forward_logits(const ModelParams& params,
                                   const ModelConfig& cfg,
                                   const std::vector<double>& input);

// Resizes the image to input_size and scales to [0, 1] before the forward
// pass.
std::vector<double> forward_image(const ModelParams& params,
                                  const ModelConfig& cfg,
                                  const ImageBuffer& image);

struct Batch {
  std::vector<std::vector<double>> inputs;  // each input_size^2, unit scale
  std::vector<int> labels;
};

// Mean cross-entropy over the batch, multiplied by loss_scale. When grad is
// non-null it receives d(loss)/d(params) in the flat layout above.
double batch_loss(const ModelParams& params, const ModelConfig& cfg,
                  const Batch& batch, std::vector<double>* grad,
                  double loss_scale = 1.0);

// Central finite differences against the analytic gradient on `probes`
// randomly chosen parameters. Probes whose +/-h steps flip a rectifier
// activation are discarded (the loss is not differentiable across the kink)
// and further parameters are drawn instead. Returns the worst relative error
// |a - f| / max(|a| + |f|, 1e-6).
double gradient_check(const ModelParams& params, const ModelConfig& cfg,
                      const Batch& batch, std::uint64_t seed, int probes = 200);

struct TrainConfig {
  int epochs = 40;
  int batch_size = 8;
  double learning_rate = 0.005;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::uint64_t seed = 0;
  DatasetVariant variant = DatasetVariant::I;
  AugmentParams augment;
};

struct FoldReport {
  double initial_loss = 0.0;         // clean-input loss before any update
  std::vector<double> epoch_losses;  // mean training loss per epoch
  double val_accuracy = 0.0;         // at the final epoch
  int best_epoch = 0;                // 1-based epoch with highest val accuracy
};

struct TrainReport {
  std::vector<FoldReport> folds;
  int best_fold = -1;                // highest final val accuracy, ties -> lowest
  int final_epochs = 0;              // epoch budget used for the final model
  double final_initial_loss = 0.0;
  std::vector<double> final_losses;  // training loss per epoch, final model
};

struct TrainOutput {
  ModelParams params;   // final model, retrained on every training sample
  TrainReport report;
  LogitMatrix holdout;  // pooled validation logits from all folds
};

// Cross-validated training over the manifest's "train" rows. Every row must
// carry a fold id; each fold trains on the remaining folds and contributes
// its clean validation logits to the pooled holdout. The final model is
// retrained on all training rows with the best fold's best-epoch budget.
TrainOutput train(const DatasetManifest& manifest,
                  const std::string& dataset_dir, const ModelConfig& model_cfg,
                  const TrainConfig& train_cfg);

// Clean-image logits for the given records, in the order passed.
LogitMatrix predict_logits(const ModelParams& params, const ModelConfig& cfg,
                           const std::vector<SampleRecord>& records,
                           const std::string& dataset_dir);

void save_checkpoint(const ModelParams& params, const ModelConfig& cfg,
                     const std::string& path);
std::pair<ModelConfig, ModelParams> load_checkpoint(const std::string& path);

void write_train_report(const TrainReport& report, const std::string& path);

}  // namespace tcal
