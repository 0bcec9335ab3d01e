#include "afn/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "afn/errors.hpp"

namespace afn {

namespace {

void validate(const ScoredSet& s) {
  if (s.scores.empty() || s.scores.size() != s.labels.size())
    throw DataError("scored set needs equal, nonempty scores/labels; got " +
                    std::to_string(s.scores.size()) + " scores, " +
                    std::to_string(s.labels.size()) + " labels");
  for (double x : s.scores)
    if (!(x >= 0.0 && x <= 1.0))
      throw DataError("score outside [0,1]: " + std::to_string(x));
  for (int y : s.labels)
    if (y != 0 && y != 1) throw DataError("label must be 0 or 1, got " + std::to_string(y));
}

std::int64_t positive_count(const ScoredSet& s) {
  return std::count(s.labels.begin(), s.labels.end(), 1);
}

double ratio_or_zero(std::int64_t num, std::int64_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

/// Indices sorted by descending score (stable, so deterministic under ties).
std::vector<std::size_t> by_score_desc(const ScoredSet& s) {
  std::vector<std::size_t> idx(s.scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return s.scores[a] > s.scores[b]; });
  return idx;
}

}  // namespace

Confusion confusion_at(const ScoredSet& s, double threshold) {
  validate(s);
  if (!(threshold >= 0.0 && threshold <= 1.0))
    throw ConfigError("threshold outside [0,1]: " + std::to_string(threshold));
  Confusion c;
  for (std::size_t i = 0; i < s.scores.size(); ++i) {
    const bool pred = s.scores[i] >= threshold;
    if (s.labels[i] == 1)
      (pred ? c.tp : c.fn)++;
    else
      (pred ? c.fp : c.tn)++;
  }
  return c;
}

Prf prf1(const Confusion& c, int positive_class) {
  if (positive_class != 0 && positive_class != 1)
    throw ConfigError("positive_class must be 0 or 1");
  std::int64_t tp = c.tp, fp = c.fp, fn = c.fn;
  if (positive_class == 0) {
    tp = c.tn;
    fp = c.fn;
    fn = c.fp;
  }
  Prf out;
  out.precision = ratio_or_zero(tp, tp + fp);
  out.recall = ratio_or_zero(tp, tp + fn);
  const double pr = out.precision + out.recall;
  out.f1 = pr > 0.0 ? 2.0 * out.precision * out.recall / pr : 0.0;
  return out;
}

double pr_auc(const ScoredSet& s) {
  validate(s);
  const std::int64_t npos = positive_count(s);
  if (npos == 0) throw DataError("pr_auc undefined: scored set has no positive examples");

  const auto idx = by_score_desc(s);
  double ap = 0.0;
  std::int64_t tp = 0, seen = 0;
  std::size_t i = 0;
  while (i < idx.size()) {
    // consume one tie group: every example sharing this score
    const double score = s.scores[idx[i]];
    std::int64_t group_tp = 0, group_n = 0;
    while (i < idx.size() && s.scores[idx[i]] == score) {
      group_tp += s.labels[idx[i]];
      ++group_n;
      ++i;
    }
    tp += group_tp;
    seen += group_n;
    if (group_tp > 0)
      ap += static_cast<double>(group_tp) * (static_cast<double>(tp) / static_cast<double>(seen));
  }
  return ap / static_cast<double>(npos);
}

double balanced_accuracy(const Confusion& c) {
  if (c.tp + c.fn == 0 || c.tn + c.fp == 0)
    throw DataError("balanced_accuracy undefined: a class is absent");
  const double recall_fraud = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  const double recall_nonfraud = static_cast<double>(c.tn) / static_cast<double>(c.tn + c.fp);
  return 0.5 * (recall_fraud + recall_nonfraud);
}

double tune_threshold(const ScoredSet& s, double min_recall) {
  validate(s);
  if (!(min_recall >= 0.0 && min_recall <= 1.0))
    throw ConfigError("min_recall outside [0,1]: " + std::to_string(min_recall));
  if (positive_count(s) == 0)
    throw DataError("tune_threshold undefined: scored set has no positive examples");

  const auto idx = by_score_desc(s);
  bool found = false;
  double best_t = 0.0, best_p = -1.0, best_r = -1.0;
  std::int64_t tp = 0, seen = 0;
  const auto npos = positive_count(s);
  std::size_t i = 0;
  while (i < idx.size()) {
    const double t = s.scores[idx[i]];
    while (i < idx.size() && s.scores[idx[i]] == t) {
      tp += s.labels[idx[i]];
      ++seen;
      ++i;
    }
    // threshold == t predicts fraud exactly for the `seen` examples so far
    const double recall = static_cast<double>(tp) / static_cast<double>(npos);
    if (recall < min_recall) continue;
    const double precision = static_cast<double>(tp) / static_cast<double>(seen);
    const bool better = precision > best_p || (precision == best_p && recall > best_r) ||
                        (precision == best_p && recall == best_r && t > best_t);
    if (!found || better) {
      found = true;
      best_t = t;
      best_p = precision;
      best_r = recall;
    }
  }
  if (!found)
    // min_recall > 0 is always achievable at the minimum score; only an
    // unachievable requirement (impossible here) would land us in this branch
    throw ConfigError("tune_threshold: no threshold reaches recall " +
                      std::to_string(min_recall));
  return best_t;
}

MetricsReport compute_report(const ScoredSet& s, double threshold) {
  MetricsReport r;
  r.pr_auc = pr_auc(s);
  r.threshold = threshold;
  const Confusion c = confusion_at(s, threshold);
  r.balanced_accuracy = balanced_accuracy(c);
  r.fraud = prf1(c, 1);
  r.nonfraud = prf1(c, 0);
  return r;
}

}  // namespace afn
