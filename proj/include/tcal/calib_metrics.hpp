#pragma once

#include <string>
#include <vector>

namespace tcal {

// Per-sample probabilistic predictions plus derived (predicted class,
// confidence) pairs. Rows of `probabilities` are distributions over k classes.
struct PredictionSet {
  int n = 0;
  int k = 0;
  std::vector<double> probabilities;  // n*k, row-major
  std::vector<int> labels;            // n, values in [0, k)
  std::vector<std::string> sample_ids;
  std::vector<int> predicted;         // argmax per row, ties -> smallest index
  std::vector<double> confidence;     // row max

  const double* row(int i) const { return probabilities.data() + static_cast<std::size_t>(i) * k; }
};

struct BinningConfig {
  int m = 10;  // equal-width confidence bins
};

struct BinStats {
  int bin_index = 0;
  double lower = 0.0;
  double upper = 0.0;
  int count = 0;
  double accuracy = 0.0;    // 0 if empty
  double confidence = 0.0;  // 0 if empty
};

struct ReliabilityReport {
  std::vector<BinStats> bins;
  int n = 0;
  double ece = 0.0;
  double mce = 0.0;
  double ace = 0.0;
  double accuracy = 0.0;
  double avg_confidence = 0.0;
  int nonempty_bins = 0;
};

// Validates the rows (each must be a distribution, sum within 1e-6 of 1) and
// derives predicted class / confidence. `sample_ids` may be empty, in which
// case positional ids are generated.
PredictionSet derive_predictions(std::vector<double> probabilities, int k,
                                 std::vector<int> labels,
                                 std::vector<std::string> sample_ids = {});

// Sample i lands in bin floor(confidence * m), clamped to m-1 at confidence 1.
std::vector<BinStats> bin_predictions(const PredictionSet& preds, BinningConfig cfg);

// Sum over bins of (|B|/n) * |acc(B) - conf(B)|; empty bins contribute 0.
double ece(const std::vector<BinStats>& bins, int n);

// Max over nonempty bins of |acc(B) - conf(B)|.
double mce(const std::vector<BinStats>& bins);

// Mean over nonempty bins of |acc(B) - conf(B)|.
double ace(const std::vector<BinStats>& bins);

ReliabilityReport summarize(const PredictionSet& preds, BinningConfig cfg);

}  // namespace tcal
