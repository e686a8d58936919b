#include "tcal/calib_scaling.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "tcal/errors.hpp"

namespace tcal {

namespace {

void check_temperature(double t) {
  if (!(t > 0.0) || !std::isfinite(t))
    throw NumericError("temperature must be positive and finite");
}

void check_matrix(const LogitMatrix& m) {
  if (m.n < 1 || m.k < 2) throw NumericError("logit matrix is empty or has < 2 classes");
  if (m.logits.size() != static_cast<std::size_t>(m.n) * m.k)
    throw NumericError("logit matrix storage does not match n*k");
  if (static_cast<int>(m.labels.size()) != m.n)
    throw NumericError("logit matrix label count does not match n");
  for (double z : m.logits)
    if (!std::isfinite(z)) throw NumericError("non-finite logit");
  for (int y : m.labels)
    if (y < 0 || y >= m.k) throw NumericError("label out of range");
}

}  // namespace

std::vector<double> softmax_with_temperature(std::span<const double> logit_row,
                                             double temperature) {
  check_temperature(temperature);
  if (logit_row.empty()) throw NumericError("softmax: empty logit row");
  for (double z : logit_row)
    if (!std::isfinite(z)) throw NumericError("softmax: non-finite logit");

  std::vector<double> out(logit_row.size());
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < logit_row.size(); ++j) {
    out[j] = logit_row[j] / temperature;
    mx = std::max(mx, out[j]);
  }
  double sum = 0.0;
  for (double& v : out) {
    v = std::exp(v - mx);
    sum += v;
  }
  for (double& v : out) v /= sum;
  return out;
}

PredictionSet scale_probabilities(const LogitMatrix& m, double temperature) {
  check_matrix(m);
  check_temperature(temperature);
  std::vector<double> probs(m.logits.size());
  for (int i = 0; i < m.n; ++i) {
    const auto row = softmax_with_temperature({m.row(i), static_cast<std::size_t>(m.k)},
                                              temperature);
    std::copy(row.begin(), row.end(), probs.begin() + static_cast<std::size_t>(i) * m.k);
  }
  return derive_predictions(std::move(probs), m.k, m.labels, m.sample_ids);
}

double nll(const LogitMatrix& m, double temperature) {
  check_matrix(m);
  check_temperature(temperature);
  double total = 0.0;
  for (int i = 0; i < m.n; ++i) {
    const double* row = m.row(i);
    double mx = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < m.k; ++j) mx = std::max(mx, row[j] / temperature);
    double sum = 0.0;
    for (int j = 0; j < m.k; ++j) sum += std::exp(row[j] / temperature - mx);
    const double lse = mx + std::log(sum);
    total += lse - row[m.labels[i]] / temperature;
  }
  return total / m.n;
}

Temperature fit_temperature(const LogitMatrix& holdout, FitConfig cfg) {
  check_matrix(holdout);
  if (!(cfg.log_t_lower < cfg.log_t_upper))
    throw NumericError("fit_temperature: log_t_lower must be below log_t_upper");
  if (!(cfg.tolerance > 0.0)) throw NumericError("fit_temperature: tolerance must be positive");

  int evals = 0;
  double best_u = cfg.log_t_lower;
  double best_f = std::numeric_limits<double>::infinity();
  auto objective = [&](double u) {
    const double f = nll(holdout, std::exp(u));
    ++evals;
    if (!std::isfinite(f)) throw NumericError("fit_temperature: non-finite NLL");
    if (f < best_f) {
      best_f = f;
      best_u = u;
    }
    return f;
  };

  // Coarse scan guards against local minima before the 1-D refinement.
  constexpr int kGridPoints = 64;
  const double span = cfg.log_t_upper - cfg.log_t_lower;
  int best_idx = 0;
  double best_grid = std::numeric_limits<double>::infinity();
  for (int i = 0; i < kGridPoints; ++i) {
    const double u = cfg.log_t_lower + span * i / (kGridPoints - 1);
    const double f = objective(u);
    if (f < best_grid) {
      best_grid = f;
      best_idx = i;
    }
  }
  double a = cfg.log_t_lower + span * std::max(best_idx - 1, 0) / (kGridPoints - 1);
  double b = cfg.log_t_lower + span * std::min(best_idx + 1, kGridPoints - 1) / (kGridPoints - 1);

  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double x1 = b - inv_phi * (b - a);
  double x2 = a + inv_phi * (b - a);
  double f1 = objective(x1);
  double f2 = objective(x2);
  int gs_iters = 0;
  while (b - a > cfg.tolerance && gs_iters < cfg.max_iterations) {
    if (f1 < f2) {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - inv_phi * (b - a);
      f1 = objective(x1);
    } else {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + inv_phi * (b - a);
      f2 = objective(x2);
    }
    ++gs_iters;
  }

  Temperature result;
  result.value = std::exp(best_u);
  result.nll_at_fit = best_f;
  result.iterations = evals;
  return result;
}

}  // namespace tcal
