#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "tcal/calib_metrics.hpp"

namespace tcal {

// Unnormalized per-class scores with ground-truth labels.
struct LogitMatrix {
  int n = 0;
  int k = 0;
  std::vector<double> logits;  // n*k, row-major
  std::vector<int> labels;     // n
  std::vector<std::string> sample_ids;

  const double* row(int i) const { return logits.data() + static_cast<std::size_t>(i) * k; }
};

// The scalar T > 0 of temperature scaling, with fit diagnostics.
struct Temperature {
  double value = 1.0;
  double nll_at_fit = 0.0;
  int iterations = 0;  // objective evaluations spent by the fit
};

struct FitConfig {
  double log_t_lower = std::log(0.05);
  double log_t_upper = std::log(20.0);
  double tolerance = 1e-6;  // convergence threshold on ln T
  int max_iterations = 200;
};

// Softened distribution sigma_SM(z / T), computed with max subtraction.
std::vector<double> softmax_with_temperature(std::span<const double> logit_row,
                                             double temperature);

// Applies softmax_with_temperature row by row. Argmax per row is invariant
// in T, so accuracy never changes under scaling.
PredictionSet scale_probabilities(const LogitMatrix& m, double temperature);

// Mean negative log-likelihood -(1/n) sum_i ln sigma_SM(z_i/T)^(y_i),
// evaluated in log space via log-sum-exp.
double nll(const LogitMatrix& m, double temperature);

// Minimizes holdout NLL over T. Coarse 64-point grid on ln T picks the
// bracket, then golden-section search refines it to cfg.tolerance.
Temperature fit_temperature(const LogitMatrix& holdout, FitConfig cfg = {});

}  // namespace tcal
