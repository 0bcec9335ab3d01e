#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "afn/experiment.hpp"
#include "doctest.h"

using namespace afn;
namespace fs = std::filesystem;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(bool(f));
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

/// A quick generated dataset at contract dimensions: small but learnable.
DatasetTensors<float> quick_data() {
  SynthConfig cfg;
  cfg.n_claims = 120;
  cfg.fraud_rate = 0.25;
  cfg.min_images = 1;
  cfg.max_images = 1;
  cfg.seed = 3;
  return build_dataset_tensors<float>(generate_synthetic(cfg));
}

/// Training and model settings scaled down until a full grid runs in seconds.
ExperimentConfig quick_config() {
  ExperimentConfig cfg;
  cfg.train.batch_size = 8;
  cfg.train.max_epochs = 1;
  cfg.train.patience = 1;
  cfg.train.seeds = {1};
  cfg.train.split = {0.7, 0.15, 0.15};

  cfg.base.encoder_hidden = 3;
  cfg.base.mlp_hidden = {4};
  cfg.base.dropout_p = 0.1;
  auto shrink = [](FusionConfig& f) {
    f.mm_dim = 4;
    f.out_dim = 4;
    f.chunks = 2;
    f.rank = 2;
    f.pool_k = 2;
    f.mfh_stages = 2;
    f.mlp_hidden = {4};
    f.dropout_p = 0.1;
  };
  shrink(cfg.base.fusion1);
  shrink(cfg.base.fusion2);
  return cfg;
}

struct TempDir {
  std::string path;
  explicit TempDir(const std::string& stem) {
    static int counter = 0;
    path = "test_experiment_tmp_" + stem + "_" + std::to_string(counter++);
    fs::remove_all(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("fusion_for_kind installs the kind and reconciles pooled dims") {
  FusionConfig tpl;
  tpl.mm_dim = 1600;
  tpl.out_dim = 1600;
  tpl.pool_k = 5;

  for (const auto k : {FusionKind::ConcatMlp, FusionKind::LinearSum, FusionKind::Mlb,
                       FusionKind::Block, FusionKind::BlockTucker}) {
    const auto got = fusion_for_kind(tpl, k);
    CHECK(got.kind == k);
    CHECK(got.out_dim == 1600);
    CHECK(got.mm_dim == 1600);
  }
  for (const auto k : {FusionKind::Mfb, FusionKind::Mfh}) {
    const auto got = fusion_for_kind(tpl, k);
    CHECK(got.kind == k);
    CHECK(got.mm_dim == 1600);
    CHECK(got.out_dim == 320);  // mm_dim / pool_k
  }

  tpl.mm_dim = 7;
  CHECK_THROWS_AS((void)fusion_for_kind(tpl, FusionKind::Mfb), ConfigError);
}

TEST_CASE("suite rows follow the canonical order and derive from the base") {
  ModelConfig base;  // defaults: block_tucker templates, contract dims
  const auto rows = make_suite_rows(base);
  REQUIRE(rows.size() == 8);

  const std::vector<std::string> keys = {"concat_all", "concat_wo_text", "sf_mfb",
                                         "sf_mlb",     "sf_block",       "sf_bt",
                                         "autofraudnet", "autofraudnet_heads"};
  const std::vector<std::string> displays = {
      "Concat MLP - All", "Concat MLP - w/o Text", "SF - MFB",     "SF - MLB",
      "SF - BLOCK",       "SF - BT",               "AutoFraudNet", "AutoFraudNet + Heads"};
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(rows[i].key == keys[i]);
    CHECK(rows[i].display == displays[i]);
  }

  CHECK(rows[0].config.arch == Arch::ConcatAll);
  CHECK(rows[1].config.arch == Arch::ConcatWoText);
  CHECK(rows[2].config.arch == Arch::SlowFusion);
  CHECK(rows[2].config.fusion1.kind == FusionKind::Mfb);
  CHECK(rows[2].config.fusion2.kind == FusionKind::Mfb);
  CHECK(rows[2].config.fusion1.out_dim == 320);
  CHECK(rows[3].config.fusion1.kind == FusionKind::Mlb);
  CHECK(rows[4].config.fusion1.kind == FusionKind::Block);
  CHECK(rows[5].config.fusion1.kind == FusionKind::BlockTucker);
  CHECK(rows[6].config.arch == Arch::AutoFraudNet);
  CHECK(rows[7].config.arch == Arch::AutoFraudNetHeads);

  // the auxiliary heads cost exactly two extra 1600-d affine heads
  const auto afn = parameter_count(rows[6].config);
  const auto heads = parameter_count(rows[7].config);
  CHECK(heads - afn == 6404);
}

TEST_CASE("run records survive the json round trip exactly") {
  RunRecord r;
  r.seed = 42;
  r.test.pr_auc = 0.123456789123;
  r.test.balanced_accuracy = 0.75;
  r.test.threshold = 0.3141592653589793;
  r.test.fraud = {0.1, 0.82, 0.178217821782178};
  r.test.nonfraud = {0.99, 0.7, 0.82};
  r.val_fraud_recall = 0.8125;
  r.best_epoch = 7;
  r.epochs_run = 10;

  const auto back = run_record_from_json(to_json(r));
  CHECK(back.seed == r.seed);
  CHECK(back.test.pr_auc == r.test.pr_auc);
  CHECK(back.test.balanced_accuracy == r.test.balanced_accuracy);
  CHECK(back.test.threshold == r.test.threshold);
  CHECK(back.test.fraud.precision == r.test.fraud.precision);
  CHECK(back.test.fraud.recall == r.test.fraud.recall);
  CHECK(back.test.fraud.f1 == r.test.fraud.f1);
  CHECK(back.test.nonfraud.f1 == r.test.nonfraud.f1);
  CHECK(back.val_fraud_recall == r.val_fraud_recall);
  CHECK(back.best_epoch == r.best_epoch);
  CHECK(back.epochs_run == r.epochs_run);

  CHECK_THROWS_AS((void)run_record_from_json("nope"), DataError);
  CHECK_THROWS_AS((void)run_record_from_json("{\"seed\":1}"), DataError);
}

TEST_CASE("run_one_seed matches multi_seed_run number for number") {
  const auto data = quick_data();
  auto cfg = quick_config();
  cfg.train.seeds = {4};
  ModelConfig mcfg = cfg.base;
  mcfg.arch = Arch::Unimodal;
  mcfg.feature = FeatureId::SPUD;

  const auto rec = run_one_seed(mcfg, data, cfg.train, 4);
  const auto agg = multi_seed_run<float>(mcfg, data, cfg.train);
  REQUIRE(agg.runs.size() == 1);
  CHECK(rec.test.pr_auc == agg.runs[0].report.pr_auc);
  CHECK(rec.test.threshold == agg.runs[0].report.threshold);
  CHECK(rec.test.fraud.f1 == agg.runs[0].report.fraud.f1);
  CHECK(rec.val_fraud_recall == agg.runs[0].val_report.fraud.recall);
  CHECK(rec.best_epoch == agg.runs[0].fit.best_epoch);
}

TEST_CASE("the grid covers every pair-strategy cell and resumes from disk") {
  const auto data = quick_data();
  const auto cfg = quick_config();

  TempDir dir("grid");
  RunOptions opts;
  opts.out_dir = dir.path;

  const auto grid = run_grid(data, cfg, opts);
  REQUIRE(grid.cells.size() == 56);

  std::set<std::string> seen;
  for (const auto& c : grid.cells) {
    seen.insert(to_string(c.a) + "|" + to_string(c.b) + "|" + to_string(c.kind));
    REQUIRE(c.runs.size() == 1);  // one seed -> std 0
    CHECK(pr_auc_stat(c.runs).stddev == 0.0);
    CHECK(c.config.arch == Arch::Bimodal);
  }
  CHECK(seen.size() == 56);

  const auto csv1 = slurp(dir.path + "/results.csv");
  CHECK(csv1.rfind("# afn-grid-v1", 0) == 0);
  CHECK(std::count(csv1.begin(), csv1.end(), '\n') == 58);  // marker + header + 56 cells
  CHECK(fs::exists(dir.path + "/results.txt"));
  CHECK(fs::exists(dir.path + "/meta.json"));

  // resume: everything reused, nothing retrained, identical outputs
  std::vector<std::string> log_lines;
  RunOptions resume = opts;
  resume.resume = true;
  resume.log = [&](const std::string& line) { log_lines.push_back(line); };
  const auto again = run_grid(data, cfg, resume);
  CHECK(slurp(dir.path + "/results.csv") == csv1);
  REQUIRE(log_lines.size() == 56);
  for (const auto& line : log_lines) CHECK(line.find("reused") != std::string::npos);
  for (std::size_t i = 0; i < grid.cells.size(); ++i)
    CHECK(again.cells[i].runs[0].test.pr_auc == grid.cells[i].runs[0].test.pr_auc);

  // a deleted cell is recomputed to the same numbers; a config change voids the cache
  fs::remove(dir.path + "/cells/CDS-SPUD-mlb.json");
  log_lines.clear();
  const auto third = run_grid(data, cfg, resume);
  CHECK(std::count_if(log_lines.begin(), log_lines.end(), [](const std::string& l) {
          return l.find("reused") != std::string::npos;
        }) == 55);
  for (std::size_t i = 0; i < grid.cells.size(); ++i)
    CHECK(third.cells[i].runs[0].test.pr_auc == grid.cells[i].runs[0].test.pr_auc);

  auto changed = cfg;
  changed.train.lr = 2e-3;
  log_lines.clear();
  (void)run_grid(data, changed, resume);
  CHECK(std::count_if(log_lines.begin(), log_lines.end(), [](const std::string& l) {
          return l.find("reused") != std::string::npos;
        }) == 0);
}

TEST_CASE("grid runs are identical across thread counts") {
  const auto data = quick_data();
  const auto cfg = quick_config();

  RunOptions serial;
  const auto one = run_grid(data, cfg, serial);
  RunOptions parallel;
  parallel.threads = 4;
  const auto four = run_grid(data, cfg, parallel);

  REQUIRE(one.cells.size() == four.cells.size());
  for (std::size_t i = 0; i < one.cells.size(); ++i) {
    CHECK(one.cells[i].runs[0].test.pr_auc == four.cells[i].runs[0].test.pr_auc);
    CHECK(one.cells[i].runs[0].test.threshold == four.cells[i].runs[0].test.threshold);
  }
  CHECK(grid_csv(one) == grid_csv(four));
}

TEST_CASE("the suite trains the eight rows with shared splits and writes reports") {
  const auto data = quick_data();
  auto cfg = quick_config();
  cfg.train.seeds = {1, 2};

  TempDir dir("suite");
  RunOptions opts;
  opts.out_dir = dir.path;

  const auto suite = run_suite(data, cfg, opts);
  REQUIRE(suite.rows.size() == 8);
  for (const auto& row : suite.rows) {
    REQUIRE(row.runs.size() == 2);
    CHECK(row.params == parameter_count(row.config));
    // threshold tuning guarantees the validation recall constraint
    for (const auto& run : row.runs) CHECK(run.val_fraud_recall >= cfg.train.min_recall);
    CHECK(fs::exists(dir.path + "/checkpoints/" + row.key + ".ckpt"));
  }

  // checkpoints reload into the row's architecture
  const auto ckpt = dir.path + "/checkpoints/autofraudnet_heads.ckpt";
  auto reloaded = load_checkpoint(ckpt);
  CHECK(reloaded.config().arch == Arch::AutoFraudNetHeads);

  const auto csv = slurp(dir.path + "/results.csv");
  CHECK(csv.rfind("# afn-suite-v1", 0) == 0);
  std::istringstream is(csv);
  std::string line;
  std::getline(is, line);  // marker
  std::getline(is, line);  // header
  CHECK(line.rfind("model,display,params,", 0) == 0);
  std::vector<std::string> first_col;
  while (std::getline(is, line)) first_col.push_back(line.substr(0, line.find(',')));
  const std::vector<std::string> want = {"concat_all", "concat_wo_text", "sf_mfb",
                                         "sf_mlb",     "sf_block",       "sf_bt",
                                         "autofraudnet", "autofraudnet_heads"};
  CHECK(first_col == want);

  const auto text = slurp(dir.path + "/results.txt");
  CHECK(text.find("AutoFraudNet + Heads") != std::string::npos);
  CHECK(text.find("Concat MLP - w/o Text") != std::string::npos);
}

TEST_CASE("the ordering study fields every family and picks maxima correctly") {
  const auto data = quick_data();
  const auto cfg = quick_config();

  TempDir dir("ordering");
  RunOptions opts;
  opts.out_dir = dir.path;
  const auto r = run_ordering(data, cfg, opts);

  REQUIRE(r.unimodal.size() == 5);
  REQUIRE(r.bimodal.size() == 8);
  CHECK(r.afn.config.arch == Arch::AutoFraudNet);
  CHECK(r.afn_heads.config.arch == Arch::AutoFraudNetHeads);
  for (const auto& e : r.unimodal) REQUIRE(e.runs.size() == 1);

  const auto& bu = r.best_unimodal();
  for (const auto& e : r.unimodal)
    CHECK(pr_auc_stat(bu.runs).mean >= pr_auc_stat(e.runs).mean);
  const auto& bb = r.best_bimodal();
  for (const auto& e : r.bimodal)
    CHECK(pr_auc_stat(bb.runs).mean >= pr_auc_stat(e.runs).mean);

  const auto csv = slurp(dir.path + "/results.csv");
  CHECK(csv.rfind("# afn-ordering-v1", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 17);  // marker + header + 15 rows
}

TEST_CASE("csv tables render into aligned columns") {
  const std::string csv = "# v1\na,bb,c\nlong-cell,x,yy\n1,234567,8\n";
  const auto text = render_csv_table(csv);
  std::istringstream is(text);
  std::string line;
  std::getline(is, line);
  CHECK(line == "# v1");
  std::getline(is, line);
  const auto header = line;
  std::getline(is, line);
  const auto row1 = line;
  std::getline(is, line);
  const auto row2 = line;
  // column 2 starts at the same offset everywhere
  const auto col2 = row1.find("x");
  CHECK(header.find("bb") == col2);
  CHECK(row2.find("234567") == col2);
}

TEST_CASE("fit histories serialize one epoch per line") {
  FitResult fit;
  fit.history.push_back({1, 0.6931, 0.0, 0.0, 0.6931, 0.25});
  fit.history.push_back({2, 0.60, 0.0, 0.0, 0.60, 0.33});
  const auto text = history_jsonl(fit);
  CHECK(std::count(text.begin(), text.end(), '\n') == 2);
  CHECK(text.find("\"epoch\":1") != std::string::npos);
  CHECK(text.find("\"val_metric\":0.33") != std::string::npos);
}
