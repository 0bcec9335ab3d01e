#pragma once

#include <cstdint>
#include <vector>

namespace afn {

/// Fraud probabilities aligned with ground-truth labels (1 = fraudulent).
struct ScoredSet {
  std::vector<double> scores;  // each in [0, 1]
  std::vector<int> labels;     // each 0 or 1
};

struct Confusion {
  std::int64_t tp = 0, fp = 0, tn = 0, fn = 0;
};

struct Prf {
  double precision = 0.0, recall = 0.0, f1 = 0.0;
};

/// Everything reported for one model at one operating point.
struct MetricsReport {
  double pr_auc = 0.0;
  double balanced_accuracy = 0.0;
  double threshold = 0.0;
  Prf fraud;     // positive class 1
  Prf nonfraud;  // positive class 0
};

/// Predict fraud iff score >= threshold. Counts always sum to N.
Confusion confusion_at(const ScoredSet& s, double threshold);

/// Precision/recall/F1 treating `positive_class` (0 or 1) as positive.
/// 0/0 ratios are 0 by convention.
Prf prf1(const Confusion& c, int positive_class);

/// Average precision: descending-score sweep, equal scores collapsed into one
/// threshold group. Requires at least one positive example.
double pr_auc(const ScoredSet& s);

/// Unweighted mean of the two per-class recalls. Requires both classes.
double balanced_accuracy(const Confusion& c);

/// Operating point for the >= min_recall fraud-recall requirement: among
/// candidate thresholds (the distinct scores) whose fraud recall meets
/// min_recall, pick max precision, break ties toward higher recall, then
/// toward the larger threshold. Requires at least one positive example.
double tune_threshold(const ScoredSet& s, double min_recall = 0.80);

/// Full report for a scored set at a fixed (already tuned) threshold.
MetricsReport compute_report(const ScoredSet& s, double threshold);

}  // namespace afn
