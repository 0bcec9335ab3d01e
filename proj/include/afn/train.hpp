#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "afn/errors.hpp"
#include "afn/metrics.hpp"
#include "afn/model.hpp"
#include "afn/rng.hpp"

namespace afn {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct TrainConfig {
  double lr = 1e-3;
  int batch_size = 64;  // even: every batch is half fraud, half non-fraud
  int max_epochs = 50;
  int patience = 3;
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  std::string monitor = "pr_auc";  // or "balanced_accuracy"
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double min_recall = 0.80;               // threshold-tuning constraint
  std::vector<double> split = {0.8, 0.1, 0.1};

  void validate() const;
  std::string to_json() const;
  static TrainConfig from_json(const std::string& text);
};

// ---------------------------------------------------------------------------
// Splits and batches
// ---------------------------------------------------------------------------

struct SplitIndices {
  std::vector<std::int64_t> train, val, test;
};

/// Shuffle each class independently and cut it train/val/test, keeping every
/// class within one claim of the requested proportions in every part.
SplitIndices split_stratified(const std::vector<int>& labels,
                              const std::vector<double>& ratios, std::uint64_t seed);

/// One epoch of class-balanced batches over `pool`: each batch holds exactly
/// batch_size/2 claims per class. The majority class is swept once (wrapping
/// to fill the last batches); the minority class is resampled with
/// replacement. Epoch length = ceil(2 * majority / batch_size).
std::vector<std::vector<std::int64_t>> balanced_batches(
    const std::vector<std::int64_t>& pool, const std::vector<int>& labels, int batch_size,
    std::uint64_t seed);

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

/// Adam with bias correction. Moment state is kept in double regardless of T.
template <typename T>
class Adam {
 public:
  Adam(Graph<T>& g, double lr, double beta1, double beta2, double eps)
      : g_(&g), lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {
    if (!(lr > 0.0)) throw ConfigError("lr must be positive, got " + std::to_string(lr));
    m_.resize(g.num_params());
    v_.resize(g.num_params());
    for (std::size_t i = 0; i < g.num_params(); ++i) {
      const auto n = g.param_entry(static_cast<int>(i)).value.v.size();
      m_[i].assign(n, 0.0);
      v_[i].assign(n, 0.0);
    }
  }

  explicit Adam(Graph<T>& g, const TrainConfig& cfg)
      : Adam(g, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps) {}

  /// Applies one update from the accumulated registry gradients.
  void step() {
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < g_->num_params(); ++i) {
      auto& entry = g_->param_entry(static_cast<int>(i));
      auto& mv = m_[i];
      auto& vv = v_[i];
      for (std::size_t k = 0; k < entry.value.v.size(); ++k) {
        const double grad = static_cast<double>(entry.grad.v[k]);
        if (!std::isfinite(grad))
          throw NumericError("non-finite gradient in " + entry.name + " element " +
                             std::to_string(k) + " at adam step " + std::to_string(t_));
        mv[k] = b1_ * mv[k] + (1.0 - b1_) * grad;
        vv[k] = b2_ * vv[k] + (1.0 - b2_) * grad * grad;
        const double mhat = mv[k] / c1;
        const double vhat = vv[k] / c2;
        entry.value.v[k] = static_cast<T>(static_cast<double>(entry.value.v[k]) -
                                          lr_ * mhat / (std::sqrt(vhat) + eps_));
      }
    }
  }

  std::int64_t steps_taken() const { return t_; }

 private:
  Graph<T>* g_;
  double lr_, b1_, b2_, eps_;
  std::int64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

// ---------------------------------------------------------------------------
// Early stopping
// ---------------------------------------------------------------------------

/// Tracks the best validation metric; only a strict increase counts as an
/// improvement. update() returns true once `patience` consecutive epochs have
/// failed to improve.
struct EarlyStopper {
  int patience;
  double best = -std::numeric_limits<double>::infinity();
  int best_epoch = -1;
  int stale = 0;

  explicit EarlyStopper(int patience_in) : patience(patience_in) {
    if (patience < 1)
      throw ConfigError("patience must be >= 1, got " + std::to_string(patience));
  }

  bool update(double metric, int epoch) {
    if (metric > best) {
      best = metric;
      best_epoch = epoch;
      stale = 0;
      return false;
    }
    return ++stale >= patience;
  }
};

// ---------------------------------------------------------------------------
// Fit
// ---------------------------------------------------------------------------

struct EpochStats {
  int epoch = 0;            // 1-based
  double train_loss = 0.0;  // mean total over the epoch's batches
  double l_f1 = 0.0, l_f2 = 0.0, l_c = 0.0;
  double val_metric = 0.0;
};

struct FitResult {
  std::vector<EpochStats> history;
  int best_epoch = -1;
  double best_metric = 0.0;
  int epochs_run = 0;
};

inline double monitor_value(const std::string& monitor, const ScoredSet& scored,
                            double min_recall) {
  if (monitor == "pr_auc") return pr_auc(scored);
  if (monitor == "balanced_accuracy") {
    const double t = tune_threshold(scored, min_recall);
    return balanced_accuracy(confusion_at(scored, t));
  }
  throw ConfigError("unknown monitor '" + monitor +
                    "'; expected pr_auc or balanced_accuracy");
}

/// Trains in place: balanced batches, Adam, early stopping on the validation
/// metric, and restores the best-epoch parameters before returning.
template <typename T>
FitResult fit(Model<T>& model, const DatasetTensors<T>& data, const SplitIndices& split,
              const TrainConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (split.train.empty() || split.val.empty())
    throw DataError("fit needs non-empty train and validation splits");

  auto& g = model.graph();
  Adam<T> opt(g, cfg);
  EarlyStopper stopper(cfg.patience);
  FitResult out;
  std::vector<Tensor<T>> best_params = g.snapshot_params();
  std::uint64_t step = 0;

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto batches = balanced_batches(
        split.train, data.labels, cfg.batch_size,
        key_combine(key_combine(seed, key_of("batches")), static_cast<std::uint64_t>(epoch)));
    EpochStats stats;
    stats.epoch = epoch;
    for (const auto& batch : batches) {
      g.reset();
      FwdCtx ctx;
      ctx.training = true;
      ctx.seed = seed;
      ctx.step = step++;
      const auto bundle = model.loss(data, batch, ctx);
      g.zero_grads();
      g.backward(bundle.total_var);
      opt.step();
      stats.train_loss += bundle.total;
      stats.l_f1 += bundle.l_f1;
      stats.l_f2 += bundle.l_f2;
      stats.l_c += bundle.l_c;
    }
    const double nb = static_cast<double>(batches.size());
    stats.train_loss /= nb;
    stats.l_f1 /= nb;
    stats.l_f2 /= nb;
    stats.l_c /= nb;

    stats.val_metric = monitor_value(cfg.monitor, model.scored_set(data, split.val),
                                     cfg.min_recall);
    out.history.push_back(stats);
    out.epochs_run = epoch;

    const double before_best = stopper.best;
    const bool stop = stopper.update(stats.val_metric, epoch);
    if (stopper.best > before_best) best_params = g.snapshot_params();
    if (stop) break;
  }

  g.restore_params(best_params);
  out.best_epoch = stopper.best_epoch;
  out.best_metric = stopper.best;
  return out;
}

// ---------------------------------------------------------------------------
// Multi-seed aggregation
// ---------------------------------------------------------------------------

struct AggregateStat {
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation; 0 for a single run
};

AggregateStat aggregate(const std::vector<double>& xs);

struct RunResult {
  std::uint64_t seed = 0;
  MetricsReport report;      // on the test split, threshold tuned on validation
  MetricsReport val_report;  // on validation at the same threshold
  FitResult fit;
};

struct SeedAggregate {
  std::vector<RunResult> runs;
  AggregateStat pr_auc, balanced_accuracy, threshold;
  AggregateStat fraud_precision, fraud_recall, fraud_f1;
  AggregateStat nonfraud_precision, nonfraud_recall, nonfraud_f1;
};

/// One full experiment: per seed, re-split the data, train a freshly
/// initialized model, tune the decision threshold on validation, report on
/// test; then aggregate across seeds.
template <typename T>
SeedAggregate multi_seed_run(const ModelConfig& mcfg, const DatasetTensors<T>& data,
                             const TrainConfig& tcfg) {
  tcfg.validate();
  SeedAggregate agg;
  for (const auto seed : tcfg.seeds) {
    RunResult run;
    run.seed = seed;
    const auto split = split_stratified(data.labels, tcfg.split, seed);
    Model<T> model(mcfg, key_combine(seed, key_of("init")));
    run.fit = fit(model, data, split, tcfg, seed);
    const auto val_scored = model.scored_set(data, split.val);
    const double threshold = tune_threshold(val_scored, tcfg.min_recall);
    run.val_report = compute_report(val_scored, threshold);
    run.report = compute_report(model.scored_set(data, split.test), threshold);
    agg.runs.push_back(std::move(run));
  }

  auto collect = [&](auto getter) {
    std::vector<double> xs;
    xs.reserve(agg.runs.size());
    for (const auto& r : agg.runs) xs.push_back(getter(r.report));
    return aggregate(xs);
  };
  agg.pr_auc = collect([](const MetricsReport& r) { return r.pr_auc; });
  agg.balanced_accuracy = collect([](const MetricsReport& r) { return r.balanced_accuracy; });
  agg.threshold = collect([](const MetricsReport& r) { return r.threshold; });
  agg.fraud_precision = collect([](const MetricsReport& r) { return r.fraud.precision; });
  agg.fraud_recall = collect([](const MetricsReport& r) { return r.fraud.recall; });
  agg.fraud_f1 = collect([](const MetricsReport& r) { return r.fraud.f1; });
  agg.nonfraud_precision = collect([](const MetricsReport& r) { return r.nonfraud.precision; });
  agg.nonfraud_recall = collect([](const MetricsReport& r) { return r.nonfraud.recall; });
  agg.nonfraud_f1 = collect([](const MetricsReport& r) { return r.nonfraud.f1; });
  return agg;
}

}  // namespace afn
