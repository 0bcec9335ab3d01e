#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "afn/data.hpp"
#include "afn/model.hpp"
#include "afn/train.hpp"

namespace afn {

// ---------------------------------------------------------------------------
// Experiment description
// ---------------------------------------------------------------------------

/// A training recipe plus a base model whose dims, encoder width, trunk, and
/// fusion templates every generated configuration inherits.
struct ExperimentConfig {
  TrainConfig train;
  ModelConfig base;
};

/// Copy the template with `kind` installed, reconciling the dimensions the
/// strategy constrains: mfb/mfh pooling needs mm_dim = pool_k * out_dim, so
/// out_dim becomes mm_dim / pool_k (mm_dim must divide evenly).
FusionConfig fusion_for_kind(FusionConfig tpl, FusionKind kind);

// ---------------------------------------------------------------------------
// Run records: the serializable distillation of one seed's training run
// ---------------------------------------------------------------------------

struct RunRecord {
  std::uint64_t seed = 0;
  MetricsReport test;              // at the threshold tuned on validation
  double val_fraud_recall = 0.0;   // fraud recall on validation at that threshold
  int best_epoch = 0;
  int epochs_run = 0;
};

std::string to_json(const RunRecord& r);
RunRecord run_record_from_json(const std::string& text);

AggregateStat stat_of(const std::vector<RunRecord>& runs,
                      const std::function<double(const RunRecord&)>& get);
inline AggregateStat pr_auc_stat(const std::vector<RunRecord>& runs) {
  return stat_of(runs, [](const RunRecord& r) { return r.test.pr_auc; });
}

/// Train one freshly initialized model on the seed's stratified split, tune
/// the threshold on validation, and report on test. Identical inputs give the
/// same numbers as multi_seed_run. `keep_model` (optional) receives the
/// trained model, restored to its best epoch.
RunRecord run_one_seed(const ModelConfig& mcfg, const DatasetTensors<float>& data,
                       const TrainConfig& tcfg, std::uint64_t seed,
                       std::optional<Model<float>>* keep_model = nullptr);

// ---------------------------------------------------------------------------
// Shared runner options
// ---------------------------------------------------------------------------

struct RunOptions {
  std::string out_dir;  // empty: keep everything in memory, write nothing
  bool resume = false;  // reuse per-cell files whose configs still match
  int threads = 1;
  std::function<void(const std::string&)> log;  // optional progress sink
};

// ---------------------------------------------------------------------------
// Grid: every cross-modality pair x every fusion strategy
// ---------------------------------------------------------------------------

struct GridCell {
  FeatureId a = FeatureId::CDS, b = FeatureId::SPUD;
  FusionKind kind = FusionKind::ConcatMlp;
  ModelConfig config;
  std::vector<RunRecord> runs;
};

struct GridResult {
  std::vector<GridCell> cells;  // 8 pairs x 7 strategies, fixed order
};

GridResult run_grid(const DatasetTensors<float>& data, const ExperimentConfig& cfg,
                    const RunOptions& opts);

std::string grid_csv(const GridResult& grid);
std::string grid_text(const GridResult& grid);

// ---------------------------------------------------------------------------
// Suite: the eight report configurations, in their canonical order
// ---------------------------------------------------------------------------

struct SuiteRowSpec {
  std::string key;      // file-system-safe identifier
  std::string display;  // table label
  ModelConfig config;
};

/// concat_all, concat_wo_text, sf_mfb, sf_mlb, sf_block, sf_bt, autofraudnet,
/// autofraudnet_heads — all derived from the base template.
std::vector<SuiteRowSpec> make_suite_rows(const ModelConfig& base);

struct SuiteRow {
  std::string key, display;
  ModelConfig config;
  std::int64_t params = 0;
  std::vector<RunRecord> runs;
};

struct SuiteResult {
  std::vector<SuiteRow> rows;
};

/// Shared data and seeds across rows; per-seed splits are identical between
/// rows by construction. With an out_dir, also saves one checkpoint per row
/// (the first seed's trained model).
SuiteResult run_suite(const DatasetTensors<float>& data, const ExperimentConfig& cfg,
                      const RunOptions& opts);

std::string suite_csv(const SuiteResult& suite);
std::string suite_text(const SuiteResult& suite);

// ---------------------------------------------------------------------------
// Ordering study: unimodal vs bimodal vs the slow-fusion flagship
// ---------------------------------------------------------------------------

struct OrderingEntry {
  std::string name;
  ModelConfig config;
  std::vector<RunRecord> runs;
};

struct OrderingResult {
  std::vector<OrderingEntry> unimodal;  // one per feature
  std::vector<OrderingEntry> bimodal;   // one per pair, base fusion kind
  OrderingEntry afn, afn_heads;

  const OrderingEntry& best_unimodal() const;
  const OrderingEntry& best_bimodal() const;
};

OrderingResult run_ordering(const DatasetTensors<float>& data, const ExperimentConfig& cfg,
                            const RunOptions& opts);

std::string ordering_csv(const OrderingResult& r);

// ---------------------------------------------------------------------------
// Rendering and single-run artifacts
// ---------------------------------------------------------------------------

/// Align a comma-separated table (ours contain no quoted commas) into padded
/// columns for reading.
std::string render_csv_table(const std::string& csv);

/// One JSON object per epoch: epoch, train_loss, l_f1, l_f2, l_c, val_metric.
std::string history_jsonl(const FitResult& fit);

}  // namespace afn
