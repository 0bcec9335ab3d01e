#include "afn/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "afn/errors.hpp"
#include "json.hpp"

namespace afn {

namespace fs = std::filesystem;
using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Config derivation
// ---------------------------------------------------------------------------

FusionConfig fusion_for_kind(FusionConfig tpl, FusionKind kind) {
  tpl.kind = kind;
  if (kind == FusionKind::Mfb || kind == FusionKind::Mfh) {
    if (tpl.pool_k <= 0 || tpl.mm_dim % tpl.pool_k != 0)
      throw ConfigError("cannot derive a " + to_string(kind) + " block: mm_dim " +
                        std::to_string(tpl.mm_dim) + " is not a multiple of pool_k " +
                        std::to_string(tpl.pool_k));
    tpl.out_dim = tpl.mm_dim / tpl.pool_k;
  }
  return tpl;
}

// ---------------------------------------------------------------------------
// Run records
// ---------------------------------------------------------------------------

namespace {

json report_to_json(const MetricsReport& r) {
  json j;
  j["pr_auc"] = r.pr_auc;
  j["balanced_accuracy"] = r.balanced_accuracy;
  j["threshold"] = r.threshold;
  j["fraud"] = {{"precision", r.fraud.precision},
                {"recall", r.fraud.recall},
                {"f1", r.fraud.f1}};
  j["nonfraud"] = {{"precision", r.nonfraud.precision},
                   {"recall", r.nonfraud.recall},
                   {"f1", r.nonfraud.f1}};
  return j;
}

MetricsReport report_from_json(const json& j) {
  MetricsReport r;
  r.pr_auc = j.at("pr_auc").get<double>();
  r.balanced_accuracy = j.at("balanced_accuracy").get<double>();
  r.threshold = j.at("threshold").get<double>();
  const auto& f = j.at("fraud");
  r.fraud = {f.at("precision").get<double>(), f.at("recall").get<double>(),
             f.at("f1").get<double>()};
  const auto& n = j.at("nonfraud");
  r.nonfraud = {n.at("precision").get<double>(), n.at("recall").get<double>(),
                n.at("f1").get<double>()};
  return r;
}

json record_to_json_obj(const RunRecord& r) {
  json j;
  j["seed"] = r.seed;
  j["test"] = report_to_json(r.test);
  j["val_fraud_recall"] = r.val_fraud_recall;
  j["best_epoch"] = r.best_epoch;
  j["epochs_run"] = r.epochs_run;
  return j;
}

RunRecord record_from_json_obj(const json& j) {
  RunRecord r;
  r.seed = j.at("seed").get<std::uint64_t>();
  r.test = report_from_json(j.at("test"));
  r.val_fraud_recall = j.at("val_fraud_recall").get<double>();
  r.best_epoch = j.at("best_epoch").get<int>();
  r.epochs_run = j.at("epochs_run").get<int>();
  return r;
}

}  // namespace

std::string to_json(const RunRecord& r) { return record_to_json_obj(r).dump(); }

RunRecord run_record_from_json(const std::string& text) {
  json j = json::parse(text, nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded() || !j.is_object())
    throw DataError("run record is not a JSON object");
  try {
    return record_from_json_obj(j);
  } catch (const json::exception& e) {
    throw DataError(std::string("run record is malformed: ") + e.what());
  }
}

AggregateStat stat_of(const std::vector<RunRecord>& runs,
                      const std::function<double(const RunRecord&)>& get) {
  std::vector<double> xs;
  xs.reserve(runs.size());
  for (const auto& r : runs) xs.push_back(get(r));
  return aggregate(xs);
}

RunRecord run_one_seed(const ModelConfig& mcfg, const DatasetTensors<float>& data,
                       const TrainConfig& tcfg, std::uint64_t seed,
                       std::optional<Model<float>>* keep_model) {
  const auto split = split_stratified(data.labels, tcfg.split, seed);
  Model<float> model(mcfg, key_combine(seed, key_of("init")));
  const auto fit_result = fit(model, data, split, tcfg, seed);

  const auto val_scored = model.scored_set(data, split.val);
  const double threshold = tune_threshold(val_scored, tcfg.min_recall);
  const auto val_report = compute_report(val_scored, threshold);

  RunRecord rec;
  rec.seed = seed;
  rec.test = compute_report(model.scored_set(data, split.test), threshold);
  rec.val_fraud_recall = val_report.fraud.recall;
  rec.best_epoch = fit_result.best_epoch;
  rec.epochs_run = fit_result.epochs_run;
  if (keep_model != nullptr) keep_model->emplace(std::move(model));
  return rec;
}

// ---------------------------------------------------------------------------
// The shared cell engine
// ---------------------------------------------------------------------------

namespace {

struct CellJob {
  std::string key;
  ModelConfig config;
};

std::string read_text_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open " + path + " for reading");
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot open " + path + " for writing");
  f << text;
  if (!f) throw DataError("failed while writing " + path);
}

/// Reuse a cell file when it parses and was produced by the same model and
/// training configs; anything else means recompute.
bool try_load_cell(const std::string& path, const CellJob& job, const TrainConfig& tcfg,
                   std::vector<RunRecord>* runs) {
  std::error_code ec;
  if (!fs::exists(path, ec)) return false;
  json j = json::parse(read_text_file(path), nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded() || !j.is_object()) return false;
  if (!j.contains("schema") || j["schema"] != "afn-cell-v1") return false;
  if (!j.contains("model") || !j.contains("train") || !j.contains("runs")) return false;
  if (j["model"].dump() != json::parse(job.config.to_json()).dump()) return false;
  if (j["train"].dump() != json::parse(tcfg.to_json()).dump()) return false;
  if (!j["runs"].is_array()) return false;
  std::vector<RunRecord> loaded;
  try {
    for (const auto& r : j["runs"]) loaded.push_back(record_from_json_obj(r));
  } catch (const json::exception&) {
    return false;
  }
  *runs = std::move(loaded);
  return true;
}

void write_cell(const std::string& path, const CellJob& job, const TrainConfig& tcfg,
                const std::vector<RunRecord>& runs) {
  json j;
  j["schema"] = "afn-cell-v1";
  j["key"] = job.key;
  j["model"] = json::parse(job.config.to_json());
  j["train"] = json::parse(tcfg.to_json());
  json arr = json::array();
  for (const auto& r : runs) arr.push_back(record_to_json_obj(r));
  j["runs"] = std::move(arr);
  write_text_file(path, j.dump(2) + "\n");
}

/// Runs every job (or reuses its cell file) and returns per-job run lists in
/// job order. With `checkpoint_dir` set, the first seed's model of each
/// freshly computed job is saved there as <key>.ckpt.
std::vector<std::vector<RunRecord>> run_cells(const std::vector<CellJob>& jobs,
                                              const DatasetTensors<float>& data,
                                              const ExperimentConfig& cfg,
                                              const RunOptions& opts,
                                              const std::string& checkpoint_dir = "") {
  cfg.train.validate();
  const std::string cell_dir = opts.out_dir.empty() ? "" : opts.out_dir + "/cells";
  if (!cell_dir.empty()) fs::create_directories(cell_dir);
  if (!checkpoint_dir.empty()) fs::create_directories(checkpoint_dir);

  std::vector<std::vector<RunRecord>> results(jobs.size());
  std::mutex log_mutex;
  auto log = [&](const std::string& line) {
    if (!opts.log) return;
    std::lock_guard<std::mutex> hold(log_mutex);
    opts.log(line);
  };

  auto run_job = [&](std::size_t j) {
    const auto& job = jobs[j];
    const std::string cell_path =
        cell_dir.empty() ? "" : cell_dir + "/" + job.key + ".json";
    if (opts.resume && !cell_path.empty()) {
      std::vector<RunRecord> cached;
      if (try_load_cell(cell_path, job, cfg.train, &cached) &&
          cached.size() == cfg.train.seeds.size()) {
        bool seeds_match = true;
        for (std::size_t s = 0; s < cached.size(); ++s)
          seeds_match = seeds_match && cached[s].seed == cfg.train.seeds[s];
        if (seeds_match) {
          results[j] = std::move(cached);
          log(job.key + ": reused " + std::to_string(results[j].size()) + " runs");
          return;
        }
      }
    }

    std::vector<RunRecord> runs;
    runs.reserve(cfg.train.seeds.size());
    for (std::size_t s = 0; s < cfg.train.seeds.size(); ++s) {
      const auto seed = cfg.train.seeds[s];
      std::optional<Model<float>> kept;
      const bool want_ckpt = s == 0 && !checkpoint_dir.empty();
      runs.push_back(run_one_seed(job.config, data, cfg.train, seed,
                                  want_ckpt ? &kept : nullptr));
      if (want_ckpt && kept.has_value())
        save_checkpoint(*kept, checkpoint_dir + "/" + job.key + ".ckpt");
    }
    if (!cell_path.empty()) write_cell(cell_path, job, cfg.train, runs);
    const auto stat = pr_auc_stat(runs);
    {
      char buf[64];
      std::snprintf(buf, sizeof(buf), "pr_auc %.4f +- %.4f", stat.mean, stat.stddev);
      log(job.key + ": " + buf);
    }
    results[j] = std::move(runs);
  };

  const int threads = std::max(1, opts.threads);
  if (threads == 1 || jobs.size() <= 1) {
    for (std::size_t j = 0; j < jobs.size(); ++j) run_job(j);
  } else {
    std::atomic<std::size_t> next{0};
    std::exception_ptr first_error;
    std::mutex error_mutex;
    auto worker = [&] {
      for (;;) {
        const auto j = next.fetch_add(1);
        if (j >= jobs.size()) return;
        try {
          run_job(j);
        } catch (...) {
          std::lock_guard<std::mutex> hold(error_mutex);
          if (!first_error) first_error = std::current_exception();
          return;
        }
      }
    };
    std::vector<std::thread> pool;
    const auto n_workers = std::min<std::size_t>(static_cast<std::size_t>(threads),
                                                 jobs.size());
    pool.reserve(n_workers);
    for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
    if (first_error) std::rethrow_exception(first_error);
  }
  return results;
}

void write_meta(const std::string& out_dir, const std::string& schema,
                const ExperimentConfig& cfg, std::int64_t n_claims) {
  json j;
  j["schema"] = schema;
  j["train"] = json::parse(cfg.train.to_json());
  j["base_model"] = json::parse(cfg.base.to_json());
  j["n_claims"] = n_claims;
  write_text_file(out_dir + "/meta.json", j.dump(2) + "\n");
}

std::string fmt(double x, const char* spec = "%.6f") {
  char buf[48];
  std::snprintf(buf, sizeof(buf), spec, x);
  return buf;
}

const std::vector<FusionKind>& all_kinds() {
  static const std::vector<FusionKind> kinds = {
      FusionKind::ConcatMlp, FusionKind::LinearSum, FusionKind::Mlb, FusionKind::Mfb,
      FusionKind::Mfh,       FusionKind::Block,     FusionKind::BlockTucker};
  return kinds;
}

}  // namespace

// ---------------------------------------------------------------------------
// Grid
// ---------------------------------------------------------------------------

GridResult run_grid(const DatasetTensors<float>& data, const ExperimentConfig& cfg,
                    const RunOptions& opts) {
  std::vector<CellJob> jobs;
  GridResult out;
  for (const auto& [a, b] : enumerate_pairs()) {
    for (const auto kind : all_kinds()) {
      GridCell cell;
      cell.a = a;
      cell.b = b;
      cell.kind = kind;
      cell.config = cfg.base;
      cell.config.arch = Arch::Bimodal;
      cell.config.pair_a = a;
      cell.config.pair_b = b;
      cell.config.fusion1 = fusion_for_kind(cfg.base.fusion1, kind);
      out.cells.push_back(cell);
      jobs.push_back({to_string(a) + "-" + to_string(b) + "-" + to_string(kind),
                      out.cells.back().config});
    }
  }

  auto runs = run_cells(jobs, data, cfg, opts);
  for (std::size_t i = 0; i < runs.size(); ++i) out.cells[i].runs = std::move(runs[i]);

  if (!opts.out_dir.empty()) {
    write_meta(opts.out_dir, "afn-grid-v1", cfg, data.size());
    write_text_file(opts.out_dir + "/results.csv", grid_csv(out));
    write_text_file(opts.out_dir + "/results.txt", grid_text(out));
  }
  return out;
}

std::string grid_csv(const GridResult& grid) {
  std::ostringstream os;
  os << "# afn-grid-v1\n";
  os << "pair_a,pair_b,strategy,n_seeds,pr_auc_mean,pr_auc_std,balanced_accuracy_mean,"
        "balanced_accuracy_std,fraud_f1_mean,fraud_f1_std\n";
  for (const auto& c : grid.cells) {
    const auto pr = pr_auc_stat(c.runs);
    const auto ba = stat_of(c.runs, [](const RunRecord& r) { return r.test.balanced_accuracy; });
    const auto f1 = stat_of(c.runs, [](const RunRecord& r) { return r.test.fraud.f1; });
    os << to_string(c.a) << ',' << to_string(c.b) << ',' << to_string(c.kind) << ','
       << c.runs.size() << ',' << fmt(pr.mean) << ',' << fmt(pr.stddev) << ','
       << fmt(ba.mean) << ',' << fmt(ba.stddev) << ',' << fmt(f1.mean) << ','
       << fmt(f1.stddev) << '\n';
  }
  return os.str();
}

std::string grid_text(const GridResult& grid) {
  // rows: pairs in canonical order; columns: strategies
  const auto pairs = enumerate_pairs();
  const auto& kinds = all_kinds();
  auto find_cell = [&](const std::pair<FeatureId, FeatureId>& p,
                       FusionKind k) -> const GridCell* {
    for (const auto& c : grid.cells)
      if (c.a == p.first && c.b == p.second && c.kind == k) return &c;
    return nullptr;
  };

  std::ostringstream os;
  auto panel = [&](const char* title, bool want_std) {
    std::ostringstream csv;
    csv << "pair";
    for (const auto k : kinds) csv << ',' << to_string(k);
    csv << '\n';
    for (const auto& p : pairs) {
      csv << to_string(p.first) << '+' << to_string(p.second);
      for (const auto k : kinds) {
        const auto* c = find_cell(p, k);
        if (c == nullptr || c->runs.empty()) {
          csv << ",-";
          continue;
        }
        const auto st = pr_auc_stat(c->runs);
        csv << ',' << fmt(want_std ? st.stddev : st.mean, "%.4f");
      }
      csv << '\n';
    }
    os << title << "\n" << render_csv_table(csv.str()) << "\n";
  };
  panel("PR AUC mean over seeds (rows: pairs, columns: fusion strategies)", false);
  panel("PR AUC sample std over seeds", true);
  return os.str();
}

// ---------------------------------------------------------------------------
// Suite
// ---------------------------------------------------------------------------

std::vector<SuiteRowSpec> make_suite_rows(const ModelConfig& base) {
  std::vector<SuiteRowSpec> rows;
  auto add = [&](const std::string& key, const std::string& display, Arch arch,
                 std::optional<FusionKind> sf_kind = std::nullopt) {
    SuiteRowSpec row;
    row.key = key;
    row.display = display;
    row.config = base;
    row.config.arch = arch;
    if (sf_kind.has_value()) {
      row.config.fusion1 = fusion_for_kind(base.fusion1, *sf_kind);
      row.config.fusion2 = fusion_for_kind(base.fusion2, *sf_kind);
    }
    rows.push_back(std::move(row));
  };

  add("concat_all", "Concat MLP - All", Arch::ConcatAll);
  add("concat_wo_text", "Concat MLP - w/o Text", Arch::ConcatWoText);
  add("sf_mfb", "SF - MFB", Arch::SlowFusion, FusionKind::Mfb);
  add("sf_mlb", "SF - MLB", Arch::SlowFusion, FusionKind::Mlb);
  add("sf_block", "SF - BLOCK", Arch::SlowFusion, FusionKind::Block);
  add("sf_bt", "SF - BT", Arch::SlowFusion, FusionKind::BlockTucker);
  add("autofraudnet", "AutoFraudNet", Arch::AutoFraudNet);
  add("autofraudnet_heads", "AutoFraudNet + Heads", Arch::AutoFraudNetHeads);
  return rows;
}

SuiteResult run_suite(const DatasetTensors<float>& data, const ExperimentConfig& cfg,
                      const RunOptions& opts) {
  const auto specs = make_suite_rows(cfg.base);
  std::vector<CellJob> jobs;
  SuiteResult out;
  for (const auto& spec : specs) {
    SuiteRow row;
    row.key = spec.key;
    row.display = spec.display;
    row.config = spec.config;
    row.params = parameter_count(spec.config);
    out.rows.push_back(std::move(row));
    jobs.push_back({spec.key, spec.config});
  }

  const std::string ckpt_dir =
      opts.out_dir.empty() ? "" : opts.out_dir + "/checkpoints";
  auto runs = run_cells(jobs, data, cfg, opts, ckpt_dir);
  for (std::size_t i = 0; i < runs.size(); ++i) out.rows[i].runs = std::move(runs[i]);

  if (!opts.out_dir.empty()) {
    write_meta(opts.out_dir, "afn-suite-v1", cfg, data.size());
    write_text_file(opts.out_dir + "/results.csv", suite_csv(out));
    write_text_file(opts.out_dir + "/results.txt", suite_text(out));
  }
  return out;
}

std::string suite_csv(const SuiteResult& suite) {
  std::ostringstream os;
  os << "# afn-suite-v1\n";
  os << "model,display,params,n_seeds,pr_auc_mean,pr_auc_std,balanced_accuracy_mean,"
        "balanced_accuracy_std,threshold_mean,fraud_precision_mean,fraud_recall_mean,"
        "fraud_f1_mean,nonfraud_precision_mean,nonfraud_recall_mean,nonfraud_f1_mean,"
        "val_fraud_recall_min\n";
  for (const auto& r : suite.rows) {
    auto st = [&](double (*get)(const RunRecord&)) { return stat_of(r.runs, get); };
    const auto pr = st([](const RunRecord& x) { return x.test.pr_auc; });
    const auto ba = st([](const RunRecord& x) { return x.test.balanced_accuracy; });
    const auto th = st([](const RunRecord& x) { return x.test.threshold; });
    const auto fp = st([](const RunRecord& x) { return x.test.fraud.precision; });
    const auto fr = st([](const RunRecord& x) { return x.test.fraud.recall; });
    const auto ff = st([](const RunRecord& x) { return x.test.fraud.f1; });
    const auto np = st([](const RunRecord& x) { return x.test.nonfraud.precision; });
    const auto nr = st([](const RunRecord& x) { return x.test.nonfraud.recall; });
    const auto nf = st([](const RunRecord& x) { return x.test.nonfraud.f1; });
    double val_min = 1.0;
    for (const auto& run : r.runs) val_min = std::min(val_min, run.val_fraud_recall);
    os << r.key << ',' << r.display << ',' << r.params << ',' << r.runs.size() << ','
       << fmt(pr.mean) << ',' << fmt(pr.stddev) << ',' << fmt(ba.mean) << ','
       << fmt(ba.stddev) << ',' << fmt(th.mean) << ',' << fmt(fp.mean) << ','
       << fmt(fr.mean) << ',' << fmt(ff.mean) << ',' << fmt(np.mean) << ','
       << fmt(nr.mean) << ',' << fmt(nf.mean) << ',' << fmt(val_min) << '\n';
  }
  return os.str();
}

std::string suite_text(const SuiteResult& suite) {
  std::ostringstream csv;
  csv << "Model,Params,PR AUC,(std),Bal. Acc.,Thr,Fraud P,Fraud R,Fraud F1,"
         "NonFraud P,NonFraud R,NonFraud F1\n";
  for (const auto& r : suite.rows) {
    auto st = [&](double (*get)(const RunRecord&)) { return stat_of(r.runs, get); };
    csv << r.display << ',' << r.params << ','
        << fmt(st([](const RunRecord& x) { return x.test.pr_auc; }).mean, "%.3f") << ','
        << fmt(st([](const RunRecord& x) { return x.test.pr_auc; }).stddev, "%.3f") << ','
        << fmt(st([](const RunRecord& x) { return x.test.balanced_accuracy; }).mean, "%.3f")
        << ','
        << fmt(st([](const RunRecord& x) { return x.test.threshold; }).mean, "%.3f") << ','
        << fmt(st([](const RunRecord& x) { return x.test.fraud.precision; }).mean, "%.3f")
        << ','
        << fmt(st([](const RunRecord& x) { return x.test.fraud.recall; }).mean, "%.3f") << ','
        << fmt(st([](const RunRecord& x) { return x.test.fraud.f1; }).mean, "%.3f") << ','
        << fmt(st([](const RunRecord& x) { return x.test.nonfraud.precision; }).mean, "%.3f")
        << ','
        << fmt(st([](const RunRecord& x) { return x.test.nonfraud.recall; }).mean, "%.3f")
        << ','
        << fmt(st([](const RunRecord& x) { return x.test.nonfraud.f1; }).mean, "%.3f")
        << '\n';
  }
  return render_csv_table(csv.str());
}

// ---------------------------------------------------------------------------
// Ordering study
// ---------------------------------------------------------------------------

namespace {

const OrderingEntry& best_of(const std::vector<OrderingEntry>& entries) {
  if (entries.empty()) throw ConfigError("ordering study holds no entries");
  const OrderingEntry* best = &entries.front();
  double best_mean = pr_auc_stat(best->runs).mean;
  for (const auto& e : entries) {
    const double m = pr_auc_stat(e.runs).mean;
    if (m > best_mean) {
      best = &e;
      best_mean = m;
    }
  }
  return *best;
}

}  // namespace

const OrderingEntry& OrderingResult::best_unimodal() const { return best_of(unimodal); }
const OrderingEntry& OrderingResult::best_bimodal() const { return best_of(bimodal); }

OrderingResult run_ordering(const DatasetTensors<float>& data, const ExperimentConfig& cfg,
                            const RunOptions& opts) {
  OrderingResult out;
  std::vector<CellJob> jobs;

  for (const auto f : {FeatureId::CDS, FeatureId::UD, FeatureId::SPUD, FeatureId::Struct,
                       FeatureId::Text}) {
    OrderingEntry e;
    e.name = "uni_" + to_string(f);
    e.config = cfg.base;
    e.config.arch = Arch::Unimodal;
    e.config.feature = f;
    out.unimodal.push_back(e);
    jobs.push_back({e.name, e.config});
  }
  for (const auto& [a, b] : enumerate_pairs()) {
    OrderingEntry e;
    e.name = "bi_" + to_string(a) + "_" + to_string(b);
    e.config = cfg.base;
    e.config.arch = Arch::Bimodal;
    e.config.pair_a = a;
    e.config.pair_b = b;
    out.bimodal.push_back(e);
    jobs.push_back({e.name, e.config});
  }
  out.afn.name = "afn";
  out.afn.config = cfg.base;
  out.afn.config.arch = Arch::AutoFraudNet;
  jobs.push_back({out.afn.name, out.afn.config});
  out.afn_heads.name = "afn_heads";
  out.afn_heads.config = cfg.base;
  out.afn_heads.config.arch = Arch::AutoFraudNetHeads;
  jobs.push_back({out.afn_heads.name, out.afn_heads.config});

  auto runs = run_cells(jobs, data, cfg, opts);
  std::size_t j = 0;
  for (auto& e : out.unimodal) e.runs = std::move(runs[j++]);
  for (auto& e : out.bimodal) e.runs = std::move(runs[j++]);
  out.afn.runs = std::move(runs[j++]);
  out.afn_heads.runs = std::move(runs[j++]);

  if (!opts.out_dir.empty()) {
    write_meta(opts.out_dir, "afn-ordering-v1", cfg, data.size());
    write_text_file(opts.out_dir + "/results.csv", ordering_csv(out));
    write_text_file(opts.out_dir + "/results.txt", render_csv_table(ordering_csv(out)));
  }
  return out;
}

std::string ordering_csv(const OrderingResult& r) {
  std::ostringstream os;
  os << "# afn-ordering-v1\n";
  os << "family,name,n_seeds,pr_auc_mean,pr_auc_std,balanced_accuracy_mean\n";
  auto line = [&](const char* family, const OrderingEntry& e) {
    const auto pr = pr_auc_stat(e.runs);
    const auto ba = stat_of(e.runs, [](const RunRecord& x) { return x.test.balanced_accuracy; });
    os << family << ',' << e.name << ',' << e.runs.size() << ',' << fmt(pr.mean) << ','
       << fmt(pr.stddev) << ',' << fmt(ba.mean) << '\n';
  };
  for (const auto& e : r.unimodal) line("unimodal", e);
  for (const auto& e : r.bimodal) line("bimodal", e);
  line("slow_fusion", r.afn);
  line("slow_fusion", r.afn_heads);
  return os.str();
}

// ---------------------------------------------------------------------------
// Rendering helpers
// ---------------------------------------------------------------------------

std::string render_csv_table(const std::string& csv) {
  std::vector<std::string> passthrough;
  std::vector<std::vector<std::string>> rows;
  std::istringstream is(csv);
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line[0] == '#') {
      passthrough.push_back(line);
      continue;
    }
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::size_t start = 0;
    for (;;) {
      const auto comma = line.find(',', start);
      cells.push_back(line.substr(start, comma - start));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    rows.push_back(std::move(cells));
  }

  std::vector<std::size_t> width;
  for (const auto& r : rows)
    for (std::size_t c = 0; c < r.size(); ++c) {
      if (width.size() <= c) width.resize(c + 1, 0);
      width[c] = std::max(width[c], r[c].size());
    }

  std::ostringstream os;
  for (const auto& p : passthrough) os << p << '\n';
  for (const auto& r : rows) {
    for (std::size_t c = 0; c < r.size(); ++c) {
      os << r[c];
      if (c + 1 < r.size())
        os << std::string(width[c] - r[c].size() + 2, ' ');
    }
    os << '\n';
  }
  return os.str();
}

std::string history_jsonl(const FitResult& fit) {
  std::ostringstream os;
  for (const auto& e : fit.history) {
    json j;
    j["epoch"] = e.epoch;
    j["train_loss"] = e.train_loss;
    j["l_f1"] = e.l_f1;
    j["l_f2"] = e.l_f2;
    j["l_c"] = e.l_c;
    j["val_metric"] = e.val_metric;
    os << j.dump() << '\n';
  }
  return os.str();
}

}  // namespace afn
