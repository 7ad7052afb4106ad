#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace mil::metrics {

struct ConfusionCounts {
  std::size_t tp = 0, tn = 0, fp = 0, fn = 0;

  std::size_t total() const { return tp + tn + fp + fn; }
  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

struct MetricSet {
  double accuracy = 0.0;
  double auroc = 0.0;
  double f1 = 0.0;
  // Set when F1 was computed with TP = FP = FN = 0 (no positives anywhere).
  bool f1_degenerate = false;
};

// Positive class is label 1.
ConfusionCounts confusion(std::span<const int> y_true, std::span<const int> y_pred);
double accuracy(const ConfusionCounts& c);
// TP / (TP + (FP + FN) / 2); 1.0 when TP = FP = FN = 0.
double f1(const ConfusionCounts& c);
inline bool f1_is_degenerate(const ConfusionCounts& c) { return c.tp == 0 && c.fp == 0 && c.fn == 0; }

/// Area under the ROC curve via the Mann-Whitney rank statistic with average
/// ranks for ties. Needs at least one positive and one negative.
double auroc(std::span<const double> scores, std::span<const int> y_true);

struct RocPoint {
  double threshold;
  double fpr;
  double tpr;
};
// Operating points from the highest threshold down, starting at (0, 0).
// Tied scores collapse into one point.
std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const int> y_true);

// Predictions use prob_positive > threshold.
MetricSet evaluate(std::span<const double> prob_positive, std::span<const int> y_true,
                   double threshold = 0.5);
std::vector<int> threshold_predictions(std::span<const double> prob_positive, double threshold);

struct FoldSummary {
  MetricSet mean;
  MetricSet std;  // population standard deviation (divide by k)
};
FoldSummary aggregate_folds(std::span<const MetricSet> per_fold);

}  // namespace mil::metrics
