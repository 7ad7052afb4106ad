#include "mil/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <tuple>
#include <utility>

#include "mil/error.hpp"

namespace mil::metrics {

namespace {

void check_labels(std::span<const int> y, const char* what) {
  for (int v : y)
    if (v != 0 && v != 1) fail(ErrorKind::validation, std::string(what) + " contains label " + std::to_string(v));
}

void check_lengths(std::size_t a, std::size_t b) {
  if (a != b) {
    fail(ErrorKind::validation, "length mismatch: " + std::to_string(a) + " vs " + std::to_string(b));
  }
  if (a == 0) fail(ErrorKind::validation, "metrics need at least one example");
}

}  // namespace

ConfusionCounts confusion(std::span<const int> y_true, std::span<const int> y_pred) {
  check_lengths(y_true.size(), y_pred.size());
  check_labels(y_true, "y_true");
  check_labels(y_pred, "y_pred");
  ConfusionCounts c;
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    if (y_true[i] == 1)
      (y_pred[i] == 1 ? c.tp : c.fn)++;
    else
      (y_pred[i] == 1 ? c.fp : c.tn)++;
  }
  return c;
}

double accuracy(const ConfusionCounts& c) {
  if (c.total() == 0) fail(ErrorKind::validation, "accuracy of zero examples");
  return static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
}

double f1(const ConfusionCounts& c) {
  if (f1_is_degenerate(c)) return 1.0;
  const double tp = static_cast<double>(c.tp);
  return tp / (tp + 0.5 * static_cast<double>(c.fp + c.fn));
}

double auroc(std::span<const double> scores, std::span<const int> y_true) {
  check_lengths(scores.size(), y_true.size());
  check_labels(y_true, "y_true");
  const std::size_t n = scores.size();
  const auto n_pos = static_cast<std::size_t>(std::count(y_true.begin(), y_true.end(), 1));
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) fail(ErrorKind::data, "AUROC is undefined for single-class input");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Sum of average ranks (1-based) held by positives.
  double pos_rank_sum = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t t = i; t < j; ++t)
      if (y_true[order[t]] == 1) pos_rank_sum += avg_rank;
    i = j;
  }
  const double np = static_cast<double>(n_pos);
  const double u = pos_rank_sum - np * (np + 1.0) / 2.0;
  return u / (np * static_cast<double>(n_neg));
}

std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const int> y_true) {
  check_lengths(scores.size(), y_true.size());
  check_labels(y_true, "y_true");
  const std::size_t n = scores.size();
  const auto n_pos = static_cast<std::size_t>(std::count(y_true.begin(), y_true.end(), 1));
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) fail(ErrorKind::data, "ROC curve is undefined for single-class input");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  std::vector<RocPoint> pts;
  pts.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) {
      (y_true[order[j]] == 1 ? tp : fp)++;
      ++j;
    }
    pts.push_back({scores[order[i]], static_cast<double>(fp) / static_cast<double>(n_neg),
                   static_cast<double>(tp) / static_cast<double>(n_pos)});
    i = j;
  }
  return pts;
}

std::vector<int> threshold_predictions(std::span<const double> prob_positive, double threshold) {
  std::vector<int> out(prob_positive.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = prob_positive[i] > threshold ? 1 : 0;
  return out;
}

MetricSet evaluate(std::span<const double> prob_positive, std::span<const int> y_true, double threshold) {
  const auto pred = threshold_predictions(prob_positive, threshold);
  const ConfusionCounts c = confusion(y_true, pred);
  MetricSet m;
  m.accuracy = accuracy(c);
  m.auroc = auroc(prob_positive, y_true);
  m.f1 = f1(c);
  m.f1_degenerate = f1_is_degenerate(c);
  return m;
}

namespace {

// Mean and population std of one field. Deviations are taken from the first
// value so identical inputs give exactly that value and exactly zero spread.
std::pair<double, double> mean_std(std::span<const MetricSet> folds, double MetricSet::*field) {
  const double k = static_cast<double>(folds.size());
  const double base = folds.front().*field;
  double shift = 0.0;
  for (const auto& m : folds) shift += m.*field - base;
  const double mean = base + shift / k;
  double var = 0.0;
  for (const auto& m : folds) var += (m.*field - mean) * (m.*field - mean);
  return {mean, std::sqrt(var / k)};
}

}  // namespace

FoldSummary aggregate_folds(std::span<const MetricSet> per_fold) {
  if (per_fold.empty()) fail(ErrorKind::validation, "no folds to aggregate");
  FoldSummary s;
  std::tie(s.mean.accuracy, s.std.accuracy) = mean_std(per_fold, &MetricSet::accuracy);
  std::tie(s.mean.auroc, s.std.auroc) = mean_std(per_fold, &MetricSet::auroc);
  std::tie(s.mean.f1, s.std.f1) = mean_std(per_fold, &MetricSet::f1);
  for (const auto& m : per_fold) s.mean.f1_degenerate = s.mean.f1_degenerate || m.f1_degenerate;
  return s;
}

}  // namespace mil::metrics
