#include "afn/afn_c.h"

#include <cstdlib>
#include <cstring>
#include <optional>
#include <string>

#include "afn/data.hpp"
#include "afn/errors.hpp"
#include "afn/experiment.hpp"
#include "afn/model.hpp"
#include "afn/train.hpp"
#include "afn/version.hpp"
#include "json.hpp"

using namespace afn;
using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Handles and error plumbing
// ---------------------------------------------------------------------------

struct afn_dataset {
  std::vector<ClaimRecord> claims;
  mutable std::optional<DatasetTensors<float>> tensors;

  const DatasetTensors<float>& materialized() const {
    if (!tensors.has_value()) tensors = build_dataset_tensors<float>(claims);
    return *tensors;
  }
};

struct afn_model {
  Model<float> model;
};

namespace {

thread_local std::string g_last_error;

afn_status fail(afn_status code, const std::string& message) {
  g_last_error = message;
  return code;
}

/// Runs `body`, mapping the error taxonomy onto status codes.
template <typename Fn>
afn_status guarded(Fn&& body) {
  try {
    body();
  } catch (const ConfigError& e) {
    return fail(AFN_ERR_CONFIG, e.what());
  } catch (const DataError& e) {
    return fail(AFN_ERR_DATA, e.what());
  } catch (const NumericError& e) {
    return fail(AFN_ERR_NUMERIC, e.what());
  } catch (const std::exception& e) {
    return fail(AFN_ERR_INTERNAL, e.what());
  } catch (...) {
    return fail(AFN_ERR_INTERNAL, "unknown error");
  }
  g_last_error.clear();
  return AFN_OK;
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out == nullptr) return nullptr;
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void require(bool ok, const char* what) {
  if (!ok) throw ConfigError(std::string("null argument: ") + what);
}

ExperimentConfig parse_experiment(const char* text) {
  require(text != nullptr, "experiment_json");
  json j = json::parse(text, nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded() || !j.is_object())
    throw ConfigError("experiment config is not a JSON object");
  ExperimentConfig cfg;
  for (const auto& [key, value] : j.items()) {
    if (key == "train") cfg.train = TrainConfig::from_json(value.dump());
    else if (key == "base_model") cfg.base = ModelConfig::from_json(value.dump());
    else throw ConfigError("experiment config has unknown key '" + key + "'");
  }
  return cfg;
}

RunOptions make_options(const char* out_dir, int resume, int threads, afn_log_fn log,
                        void* log_user) {
  RunOptions opts;
  opts.out_dir = out_dir == nullptr ? "" : out_dir;
  opts.resume = resume != 0;
  opts.threads = threads < 1 ? 1 : threads;
  if (log != nullptr)
    opts.log = [log, log_user](const std::string& line) { log(line.c_str(), log_user); };
  return opts;
}

}  // namespace

// ---------------------------------------------------------------------------
// Basics
// ---------------------------------------------------------------------------

const char* afn_version(void) { return version(); }

const char* afn_last_error(void) { return g_last_error.c_str(); }

void afn_string_free(char* s) { std::free(s); }

// ---------------------------------------------------------------------------
// Datasets
// ---------------------------------------------------------------------------

afn_status afn_dataset_generate(const char* synth_config_json, afn_dataset** out) {
  return guarded([&] {
    require(synth_config_json != nullptr, "synth_config_json");
    require(out != nullptr, "out");
    const auto cfg = SynthConfig::from_json(synth_config_json);
    auto* ds = new afn_dataset;
    ds->claims = generate_synthetic(cfg);
    *out = ds;
  });
}

afn_status afn_dataset_load(const char* path, afn_dataset** out) {
  return guarded([&] {
    require(path != nullptr, "path");
    require(out != nullptr, "out");
    auto* ds = new afn_dataset;
    try {
      ds->claims = load_claims(path);
    } catch (...) {
      delete ds;
      throw;
    }
    if (ds->claims.empty()) {
      delete ds;
      throw DataError(std::string(path) + ": no claims found");
    }
    *out = ds;
  });
}

afn_status afn_dataset_save(const afn_dataset* ds, const char* path) {
  return guarded([&] {
    require(ds != nullptr, "ds");
    require(path != nullptr, "path");
    save_claims(ds->claims, path);
  });
}

afn_status afn_dataset_size(const afn_dataset* ds, int64_t* out) {
  return guarded([&] {
    require(ds != nullptr, "ds");
    require(out != nullptr, "out");
    *out = static_cast<int64_t>(ds->claims.size());
  });
}

afn_status afn_dataset_fraud_count(const afn_dataset* ds, int64_t* out) {
  return guarded([&] {
    require(ds != nullptr, "ds");
    require(out != nullptr, "out");
    int64_t n = 0;
    for (const auto& rec : ds->claims) n += rec.label;
    *out = n;
  });
}

void afn_dataset_free(afn_dataset* ds) { delete ds; }

// ---------------------------------------------------------------------------
// Models
// ---------------------------------------------------------------------------

afn_status afn_model_create(const char* model_config_json, uint64_t init_seed,
                            afn_model** out) {
  return guarded([&] {
    require(model_config_json != nullptr, "model_config_json");
    require(out != nullptr, "out");
    const auto cfg = ModelConfig::from_json(model_config_json);
    *out = new afn_model{Model<float>(cfg, init_seed)};
  });
}

afn_status afn_model_load(const char* path, const char* expected_config_json,
                          afn_model** out) {
  return guarded([&] {
    require(path != nullptr, "path");
    require(out != nullptr, "out");
    if (expected_config_json != nullptr) {
      const auto expected = ModelConfig::from_json(expected_config_json);
      *out = new afn_model{load_checkpoint(path, &expected)};
    } else {
      *out = new afn_model{load_checkpoint(path)};
    }
  });
}

afn_status afn_model_save(afn_model* m, const char* path) {
  return guarded([&] {
    require(m != nullptr, "m");
    require(path != nullptr, "path");
    save_checkpoint(m->model, path);
  });
}

afn_status afn_model_config(const afn_model* m, char** config_json_out) {
  return guarded([&] {
    require(m != nullptr, "m");
    require(config_json_out != nullptr, "config_json_out");
    *config_json_out = dup_string(m->model.config().to_json());
  });
}

afn_status afn_checkpoint_config(const char* path, char** config_json_out) {
  return guarded([&] {
    require(path != nullptr, "path");
    require(config_json_out != nullptr, "config_json_out");
    *config_json_out = dup_string(load_checkpoint_config(path).to_json());
  });
}

afn_status afn_model_parameter_count(const afn_model* m, int64_t* out) {
  return guarded([&] {
    require(m != nullptr, "m");
    require(out != nullptr, "out");
    *out = parameter_count(m->model.config());
  });
}

void afn_model_free(afn_model* m) { delete m; }

// ---------------------------------------------------------------------------
// Training and evaluation
// ---------------------------------------------------------------------------

afn_status afn_fit(afn_model* m, const afn_dataset* ds, const char* train_config_json,
                   uint64_t seed, char** result_json_out) {
  return guarded([&] {
    require(m != nullptr, "m");
    require(ds != nullptr, "ds");
    require(train_config_json != nullptr, "train_config_json");
    const auto tcfg = TrainConfig::from_json(train_config_json);
    const auto& data = ds->materialized();
    const auto split = split_stratified(data.labels, tcfg.split, seed);
    const auto result = fit(m->model, data, split, tcfg, seed);
    if (result_json_out != nullptr) {
      json j;
      j["best_epoch"] = result.best_epoch;
      j["best_metric"] = result.best_metric;
      j["epochs_run"] = result.epochs_run;
      json hist = json::array();
      for (const auto& e : result.history) {
        hist.push_back({{"epoch", e.epoch},
                        {"train_loss", e.train_loss},
                        {"l_f1", e.l_f1},
                        {"l_f2", e.l_f2},
                        {"l_c", e.l_c},
                        {"val_metric", e.val_metric}});
      }
      j["history"] = std::move(hist);
      *result_json_out = dup_string(j.dump());
    }
  });
}

afn_status afn_evaluate(afn_model* m, const afn_dataset* ds, const char* train_config_json,
                        uint64_t seed, const char* split, char** report_json_out) {
  return guarded([&] {
    require(m != nullptr, "m");
    require(ds != nullptr, "ds");
    require(train_config_json != nullptr, "train_config_json");
    require(split != nullptr, "split");
    require(report_json_out != nullptr, "report_json_out");

    const auto tcfg = TrainConfig::from_json(train_config_json);
    const auto& data = ds->materialized();
    const auto parts = split_stratified(data.labels, tcfg.split, seed);

    const std::string which = split;
    std::vector<std::int64_t> idx;
    if (which == "train") idx = parts.train;
    else if (which == "val") idx = parts.val;
    else if (which == "test") idx = parts.test;
    else if (which == "all") {
      idx.resize(static_cast<std::size_t>(data.size()));
      for (std::int64_t i = 0; i < data.size(); ++i) idx[static_cast<std::size_t>(i)] = i;
    } else {
      throw ConfigError("unknown split '" + which + "'; expected train, val, test, or all");
    }

    const auto val_scored = m->model.scored_set(data, parts.val);
    const double threshold = tune_threshold(val_scored, tcfg.min_recall);
    const auto report = compute_report(m->model.scored_set(data, idx), threshold);

    json j;
    j["split"] = which;
    j["n"] = idx.size();
    j["pr_auc"] = report.pr_auc;
    j["balanced_accuracy"] = report.balanced_accuracy;
    j["threshold"] = report.threshold;
    j["fraud"] = {{"precision", report.fraud.precision},
                  {"recall", report.fraud.recall},
                  {"f1", report.fraud.f1}};
    j["nonfraud"] = {{"precision", report.nonfraud.precision},
                     {"recall", report.nonfraud.recall},
                     {"f1", report.nonfraud.f1}};
    *report_json_out = dup_string(j.dump());
  });
}

// ---------------------------------------------------------------------------
// Experiment batteries
// ---------------------------------------------------------------------------

afn_status afn_run_grid(const afn_dataset* ds, const char* experiment_json,
                        const char* out_dir, int resume, int threads, afn_log_fn log,
                        void* log_user, char** summary_text_out) {
  return guarded([&] {
    require(ds != nullptr, "ds");
    const auto cfg = parse_experiment(experiment_json);
    const auto opts = make_options(out_dir, resume, threads, log, log_user);
    const auto grid = run_grid(ds->materialized(), cfg, opts);
    if (summary_text_out != nullptr) *summary_text_out = dup_string(grid_text(grid));
  });
}

afn_status afn_run_suite(const afn_dataset* ds, const char* experiment_json,
                         const char* out_dir, int resume, int threads, afn_log_fn log,
                         void* log_user, char** summary_text_out) {
  return guarded([&] {
    require(ds != nullptr, "ds");
    const auto cfg = parse_experiment(experiment_json);
    const auto opts = make_options(out_dir, resume, threads, log, log_user);
    const auto suite = run_suite(ds->materialized(), cfg, opts);
    if (summary_text_out != nullptr) *summary_text_out = dup_string(suite_text(suite));
  });
}

// ---------------------------------------------------------------------------
// Report rendering
// ---------------------------------------------------------------------------

afn_status afn_render_csv(const char* csv_text, char** text_out) {
  return guarded([&] {
    require(csv_text != nullptr, "csv_text");
    require(text_out != nullptr, "text_out");
    *text_out = dup_string(render_csv_table(csv_text));
  });
}
