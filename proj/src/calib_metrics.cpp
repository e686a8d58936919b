#include "tcal/calib_metrics.hpp"

#include <cmath>
#include <string>

#include "tcal/errors.hpp"

namespace tcal {

namespace {

constexpr double kRowSumTolerance = 1e-6;
constexpr double kEntrySlack = 1e-9;

}  // namespace

PredictionSet derive_predictions(std::vector<double> probabilities, int k,
                                 std::vector<int> labels,
                                 std::vector<std::string> sample_ids) {
  if (k < 2) throw NumericError("derive_predictions: class count must be >= 2");
  if (probabilities.empty() || probabilities.size() % static_cast<std::size_t>(k) != 0)
    throw NumericError("derive_predictions: matrix size is not a multiple of k");
  const int n = static_cast<int>(probabilities.size() / static_cast<std::size_t>(k));
  if (static_cast<int>(labels.size()) != n)
    throw NumericError("derive_predictions: label count does not match row count");
  if (!sample_ids.empty() && static_cast<int>(sample_ids.size()) != n)
    throw NumericError("derive_predictions: sample_id count does not match row count");

  PredictionSet out;
  out.n = n;
  out.k = k;
  out.predicted.resize(n);
  out.confidence.resize(n);

  for (int i = 0; i < n; ++i) {
    const double* row = probabilities.data() + static_cast<std::size_t>(i) * k;
    double sum = 0.0;
    int arg = 0;
    double best = row[0];
    for (int j = 0; j < k; ++j) {
      const double p = row[j];
      if (!(p >= -kEntrySlack && p <= 1.0 + kEntrySlack))
        throw NumericError("derive_predictions: entry outside [0, 1] at row " + std::to_string(i));
      sum += p;
      if (p > best) {
        best = p;
        arg = j;
      }
    }
    if (std::abs(sum - 1.0) > kRowSumTolerance)
      throw NumericError("derive_predictions: row " + std::to_string(i) + " is not normalized");
    if (labels[i] < 0 || labels[i] >= k)
      throw NumericError("derive_predictions: label out of range at row " + std::to_string(i));
    out.predicted[i] = arg;
    out.confidence[i] = best;
  }

  out.probabilities = std::move(probabilities);
  out.labels = std::move(labels);
  if (sample_ids.empty()) {
    out.sample_ids.reserve(n);
    for (int i = 0; i < n; ++i) out.sample_ids.push_back("s" + std::to_string(i));
  } else {
    out.sample_ids = std::move(sample_ids);
  }
  return out;
}

std::vector<BinStats> bin_predictions(const PredictionSet& preds, BinningConfig cfg) {
  if (cfg.m < 1) throw NumericError("bin_predictions: bin count must be >= 1");
  const int m = cfg.m;
  std::vector<BinStats> bins(m);
  for (int b = 0; b < m; ++b) {
    bins[b].bin_index = b;
    bins[b].lower = static_cast<double>(b) / m;
    bins[b].upper = static_cast<double>(b + 1) / m;
  }
  std::vector<double> acc_sum(m, 0.0), conf_sum(m, 0.0);
  for (int i = 0; i < preds.n; ++i) {
    int b = static_cast<int>(preds.confidence[i] * m);
    if (b > m - 1) b = m - 1;
    if (b < 0) b = 0;
    bins[b].count += 1;
    acc_sum[b] += (preds.predicted[i] == preds.labels[i]) ? 1.0 : 0.0;
    conf_sum[b] += preds.confidence[i];
  }
  for (int b = 0; b < m; ++b) {
    if (bins[b].count > 0) {
      bins[b].accuracy = acc_sum[b] / bins[b].count;
      bins[b].confidence = conf_sum[b] / bins[b].count;
    }
  }
  return bins;
}

double ece(const std::vector<BinStats>& bins, int n) {
  if (n <= 0) throw NumericError("ece: sample count must be positive");
  double total = 0.0;
  for (const auto& b : bins) {
    if (b.count == 0) continue;
    total += (static_cast<double>(b.count) / n) * std::abs(b.accuracy - b.confidence);
  }
  return total;
}

double mce(const std::vector<BinStats>& bins) {
  double best = -1.0;
  for (const auto& b : bins) {
    if (b.count == 0) continue;
    best = std::max(best, std::abs(b.accuracy - b.confidence));
  }
  if (best < 0.0) throw NumericError("mce: all bins are empty");
  return best;
}

double ace(const std::vector<BinStats>& bins) {
  double total = 0.0;
  int nonempty = 0;
  for (const auto& b : bins) {
    if (b.count == 0) continue;
    total += std::abs(b.accuracy - b.confidence);
    ++nonempty;
  }
  if (nonempty == 0) throw NumericError("ace: all bins are empty");
  return total / nonempty;
}

ReliabilityReport summarize(const PredictionSet& preds, BinningConfig cfg) {
  ReliabilityReport report;
  report.bins = bin_predictions(preds, cfg);
  report.n = preds.n;
  report.ece = ece(report.bins, preds.n);
  report.mce = mce(report.bins);
  report.ace = ace(report.bins);
  double correct = 0.0, conf = 0.0;
  for (int i = 0; i < preds.n; ++i) {
    correct += (preds.predicted[i] == preds.labels[i]) ? 1.0 : 0.0;
    conf += preds.confidence[i];
  }
  report.accuracy = correct / preds.n;
  report.avg_confidence = conf / preds.n;
  for (const auto& b : report.bins)
    if (b.count > 0) ++report.nonempty_bins;
  return report;
}

}  // namespace tcal
