// afn — command-line front end for the multimodal fraud-fusion toolkit.
//
// The binary is a thin client of the C API in afn/afn_c.h: each subcommand
// assembles JSON configs (from an optional config file plus flag overrides),
// hands them to the library, and writes the returned artifacts. Exit codes
// follow the library's status taxonomy: 0 success, 2 usage or validation
// error, 3 data error, 4 numeric failure.

#include <cctype>
#include <cerrno>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "afn/afn_c.h"
#include "json.hpp"

namespace {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Exit handling and RAII over the C handles
// ---------------------------------------------------------------------------

struct CliError {
  int code;
  std::string message;
};

[[noreturn]] void die(int code, std::string message) {
  throw CliError{code, std::move(message)};
}

/// Print the library's thread-local error message and map the status straight
/// to the process exit code (the enum values already match the taxonomy).
int fail_from_api(afn_status st) {
  std::cerr << "error: " << afn_last_error() << '\n';
  return static_cast<int>(st);
}

struct StringFree {
  void operator()(char* s) const { afn_string_free(s); }
};
using ApiString = std::unique_ptr<char, StringFree>;

struct DatasetFree {
  void operator()(afn_dataset* ds) const { afn_dataset_free(ds); }
};
using DatasetPtr = std::unique_ptr<afn_dataset, DatasetFree>;

struct ModelFree {
  void operator()(afn_model* m) const { afn_model_free(m); }
};
using ModelPtr = std::unique_ptr<afn_model, ModelFree>;

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) die(3, "cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (out) out << text;
  if (!out) die(3, "cannot write " + path);
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) die(3, "cannot create directory " + dir + ": " + ec.message());
}

std::string join(const std::string& dir, const char* name) {
  return (std::filesystem::path(dir) / name).string();
}

std::string fmt4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

// ---------------------------------------------------------------------------
// Config files
//
// The accepted format is a small TOML-style dialect: `[section]` headers
// (dots nest, e.g. [model.fusion1]), `key = value` pairs, and # comments.
// Values are quoted strings, booleans, integers, floats, or flat arrays of
// those. Section and key names mirror the library's JSON configs, so the
// parsed tree feeds the C API directly:
//
//   [synth]   n_claims, fraud_rate, min_images, max_images, latent_v,
//             latent_t, beta, alpha_v, alpha_t, sigma, seed
//   [train]   lr, batch_size, max_epochs, patience, seeds, monitor,
//             beta1, beta2, eps, min_recall, split
//   [model]   arch, feature, pair, mlp_hidden, dropout_p, encoder_hidden,
//             loss_weights; subsections dims, fusion1, fusion2
//
// Flags override file values. Unknown keys are rejected by the library's
// strict parsers with a message naming the key.
// ---------------------------------------------------------------------------

std::string trim(const std::string& s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

bool is_bare_key(const std::string& s) {
  if (s.empty()) return false;
  for (char c : s)
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_' && c != '-') return false;
  return true;
}

[[noreturn]] void config_error(int line_no, const std::string& what) {
  die(2, "config line " + std::to_string(line_no) + ": " + what);
}

/// Cut a trailing # comment, honoring quotes so a # inside a string survives.
std::string strip_comment(const std::string& line, int line_no) {
  bool in_string = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (in_string) {
      if (c == '\\')
        ++i;
      else if (c == '"')
        in_string = false;
    } else if (c == '"') {
      in_string = true;
    } else if (c == '#') {
      return line.substr(0, i);
    }
  }
  if (in_string) config_error(line_no, "unterminated string");
  return line;
}

json parse_scalar(const std::string& token, int line_no) {
  if (token.front() == '"') {
    std::string out;
    std::size_t i = 1;
    for (; i < token.size() && token[i] != '"'; ++i) {
      char c = token[i];
      if (c == '\\') {
        if (++i == token.size()) break;
        switch (token[i]) {
          case '"': c = '"'; break;
          case '\\': c = '\\'; break;
          case 'n': c = '\n'; break;
          case 't': c = '\t'; break;
          case 'r': c = '\r'; break;
          default: config_error(line_no, std::string("unsupported escape \\") + token[i]);
        }
      }
      out += c;
    }
    if (i >= token.size()) config_error(line_no, "unterminated string");
    if (i + 1 != token.size()) config_error(line_no, "text after closing quote");
    return out;
  }
  if (token == "true") return true;
  if (token == "false") return false;

  const std::size_t digits = (token[0] == '+' || token[0] == '-') ? 1 : 0;
  bool integral = digits < token.size();
  for (std::size_t i = digits; i < token.size(); ++i)
    if (!std::isdigit(static_cast<unsigned char>(token[i]))) integral = false;
  errno = 0;
  char* end = nullptr;
  if (integral) {
    const long long v = std::strtoll(token.c_str(), &end, 10);
    if (errno != 0 || end != token.c_str() + token.size())
      config_error(line_no, "integer out of range: " + token);
    return v;
  }
  const double v = std::strtod(token.c_str(), &end);
  if (errno == 0 && end == token.c_str() + token.size() && end != token.c_str()) return v;
  config_error(line_no, "cannot parse value `" + token + "`");
}

json parse_value(const std::string& token, int line_no) {
  if (token.front() != '[') return parse_scalar(token, line_no);
  if (token.back() != ']') config_error(line_no, "unterminated array");

  // Split the body on commas outside quotes; a trailing comma is allowed.
  std::vector<std::string> items;
  std::string cur;
  bool in_string = false;
  for (std::size_t i = 1; i + 1 < token.size(); ++i) {
    const char c = token[i];
    if (in_string) {
      cur += c;
      if (c == '\\' && i + 2 < token.size())
        cur += token[++i];
      else if (c == '"')
        in_string = false;
    } else if (c == '"') {
      in_string = true;
      cur += c;
    } else if (c == '[' || c == ']') {
      config_error(line_no, "nested arrays are not supported");
    } else if (c == ',') {
      items.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  items.push_back(cur);

  json arr = json::array();
  for (std::size_t i = 0; i < items.size(); ++i) {
    const std::string t = trim(items[i]);
    if (t.empty()) {
      if (i + 1 == items.size()) continue;
      config_error(line_no, "empty array element");
    }
    arr.push_back(parse_scalar(t, line_no));
  }
  return arr;
}

json parse_config_text(const std::string& text) {
  json root = json::object();
  json* section = &root;
  std::istringstream lines(text);
  std::string raw;
  int line_no = 0;
  while (std::getline(lines, raw)) {
    ++line_no;
    const std::string line = trim(strip_comment(raw, line_no));
    if (line.empty()) continue;

    if (line.front() == '[') {
      if (line.back() != ']') config_error(line_no, "unterminated section header");
      const std::string path = trim(line.substr(1, line.size() - 2));
      section = &root;
      std::size_t start = 0;
      while (true) {
        const std::size_t dot = path.find('.', start);
        const std::string part = trim(path.substr(start, dot - start));
        if (!is_bare_key(part)) config_error(line_no, "bad section name `" + path + "`");
        json& slot = (*section)[part];
        if (slot.is_null()) slot = json::object();
        if (!slot.is_object())
          config_error(line_no, "section [" + path + "] collides with an earlier key");
        section = &slot;
        if (dot == std::string::npos) break;
        start = dot + 1;
      }
      continue;
    }

    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      config_error(line_no, "expected `key = value` or a [section] header");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (!is_bare_key(key)) config_error(line_no, "bad key `" + key + "`");
    if (value.empty()) config_error(line_no, "missing value for `" + key + "`");
    (*section)[key] = parse_value(value, line_no);
  }
  return root;
}

json load_config_file(const std::string& path) {
  if (path.empty()) return json::object();
  return parse_config_text(read_file(path));
}

// ---------------------------------------------------------------------------
// Flag overrides
//
// Each synth/train/model flag is registered together with the config-tree
// slot it overrides; after parsing, flags the user actually passed are folded
// into the tree on top of the config file's values.
// ---------------------------------------------------------------------------

struct OverrideSet {
  std::vector<std::function<void(json&)>> ops;
  void apply(json& root) const {
    for (const auto& op : ops) op(root);
  }
};

template <typename T>
CLI::Option* add_override(CLI::App& cmd, OverrideSet& ov, const std::string& flag,
                          const char* section, const char* key, const std::string& desc) {
  auto holder = std::make_shared<T>();
  CLI::Option* opt = cmd.add_option(flag, *holder, desc);
  ov.ops.push_back([opt, holder, section, key](json& root) {
    if (opt->count() > 0) root[section][key] = *holder;
  });
  return opt;
}

void add_train_flags(CLI::App& cmd, OverrideSet& ov) {
  add_override<double>(cmd, ov, "--lr", "train", "lr", "Adam learning rate");
  add_override<int>(cmd, ov, "--batch-size", "train", "batch_size",
                    "claims per balanced batch");
  add_override<int>(cmd, ov, "--max-epochs", "train", "max_epochs", "epoch cap");
  add_override<int>(cmd, ov, "--patience", "train", "patience", "early-stopping patience");
  add_override<std::string>(cmd, ov, "--monitor", "train", "monitor",
                            "validation metric (pr_auc or balanced_accuracy)");
  add_override<double>(cmd, ov, "--min-recall", "train", "min_recall",
                       "fraud-recall floor for threshold tuning");
  add_override<std::vector<double>>(cmd, ov, "--split-frac", "train", "split",
                                    "train/val/test fractions")
      ->expected(3);
}

void add_model_flags(CLI::App& cmd, OverrideSet& ov) {
  add_override<std::string>(
      cmd, ov, "--arch", "model", "arch",
      "architecture: unimodal, bimodal, concat_all, concat_wo_text, slow_fusion, "
      "autofraudnet, autofraudnet_heads");
  add_override<std::string>(cmd, ov, "--feature", "model", "feature",
                            "unimodal feature: CDS, UD, SPUD, Struct, Text");
  add_override<std::vector<std::string>>(cmd, ov, "--pair", "model", "pair",
                                         "bimodal feature pair")
      ->expected(2);
}

json section_or_empty(const json& root, const char* name) {
  return root.contains(name) ? root.at(name) : json::object();
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string config_path;
  std::string out_dir = ".";
  OverrideSet ov;
};

int cmd_synth(const SynthArgs& a) {
  json root = load_config_file(a.config_path);
  a.ov.apply(root);
  const json synth = section_or_empty(root, "synth");

  afn_dataset* raw = nullptr;
  if (const afn_status st = afn_dataset_generate(synth.dump().c_str(), &raw); st != AFN_OK)
    return fail_from_api(st);
  const DatasetPtr ds(raw);

  ensure_dir(a.out_dir);
  const std::string claims_path = join(a.out_dir, "claims.jsonl");
  if (const afn_status st = afn_dataset_save(ds.get(), claims_path.c_str()); st != AFN_OK)
    return fail_from_api(st);
  write_file(join(a.out_dir, "synth.json"), synth.dump(2) + "\n");

  std::int64_t n = 0;
  std::int64_t fraud = 0;
  afn_dataset_size(ds.get(), &n);
  afn_dataset_fraud_count(ds.get(), &fraud);
  std::cout << "wrote " << claims_path << " (" << n << " claims, " << fraud << " fraud)\n";
  return 0;
}

struct TrainArgs {
  std::string config_path;
  std::string data_path;
  std::string out_dir = ".";
  std::uint64_t seed = 1;
  OverrideSet ov;
};

int cmd_train(const TrainArgs& a) {
  json root = load_config_file(a.config_path);
  a.ov.apply(root);
  const std::string train_json = section_or_empty(root, "train").dump();
  const std::string model_json = section_or_empty(root, "model").dump();

  afn_dataset* ds_raw = nullptr;
  if (const afn_status st = afn_dataset_load(a.data_path.c_str(), &ds_raw); st != AFN_OK)
    return fail_from_api(st);
  const DatasetPtr ds(ds_raw);

  afn_model* m_raw = nullptr;
  if (const afn_status st = afn_model_create(model_json.c_str(), a.seed, &m_raw);
      st != AFN_OK)
    return fail_from_api(st);
  const ModelPtr model(m_raw);

  char* fit_raw = nullptr;
  if (const afn_status st =
          afn_fit(model.get(), ds.get(), train_json.c_str(), a.seed, &fit_raw);
      st != AFN_OK)
    return fail_from_api(st);
  const ApiString fit_text(fit_raw);
  const json fit = json::parse(fit_text.get());

  ensure_dir(a.out_dir);
  const std::string ckpt_path = join(a.out_dir, "model.ckpt");
  if (const afn_status st = afn_model_save(model.get(), ckpt_path.c_str()); st != AFN_OK)
    return fail_from_api(st);

  std::string history;
  for (const json& epoch : fit.at("history")) history += epoch.dump() + "\n";
  write_file(join(a.out_dir, "history.jsonl"), history);

  json result = {{"seed", a.seed},
                 {"best_epoch", fit.at("best_epoch")},
                 {"best_metric", fit.at("best_metric")},
                 {"epochs_run", fit.at("epochs_run")}};
  for (const char* split : {"val", "test"}) {
    char* rep_raw = nullptr;
    if (const afn_status st = afn_evaluate(model.get(), ds.get(), train_json.c_str(),
                                           a.seed, split, &rep_raw);
        st != AFN_OK)
      return fail_from_api(st);
    const ApiString rep(rep_raw);
    result[split] = json::parse(rep.get());
  }
  write_file(join(a.out_dir, "result.json"), result.dump(2) + "\n");

  std::cout << "best epoch " << fit.at("best_epoch").get<int>() << " of "
            << fit.at("epochs_run").get<int>() << "; test pr_auc "
            << fmt4(result["test"]["pr_auc"].get<double>()) << ", balanced accuracy "
            << fmt4(result["test"]["balanced_accuracy"].get<double>()) << "\n"
            << "wrote model.ckpt, history.jsonl, result.json to " << a.out_dir << "\n";
  return 0;
}

struct EvalArgs {
  std::string config_path;
  std::string data_path;
  std::string ckpt_path;
  std::string out_path;
  std::string split = "test";
  std::string expect_arch;
  std::uint64_t seed = 1;
  OverrideSet ov;
};

int cmd_eval(const EvalArgs& a) {
  json root = load_config_file(a.config_path);
  a.ov.apply(root);
  const std::string train_json = section_or_empty(root, "train").dump();

  if (!a.expect_arch.empty()) {
    char* cfg_raw = nullptr;
    if (const afn_status st = afn_checkpoint_config(a.ckpt_path.c_str(), &cfg_raw);
        st != AFN_OK)
      return fail_from_api(st);
    const ApiString cfg(cfg_raw);
    const auto arch = json::parse(cfg.get()).at("arch").get<std::string>();
    if (arch != a.expect_arch)
      die(2, "checkpoint " + a.ckpt_path + " holds a " + arch + " model, not " +
                 a.expect_arch);
  }

  afn_dataset* ds_raw = nullptr;
  if (const afn_status st = afn_dataset_load(a.data_path.c_str(), &ds_raw); st != AFN_OK)
    return fail_from_api(st);
  const DatasetPtr ds(ds_raw);

  afn_model* m_raw = nullptr;
  if (const afn_status st = afn_model_load(a.ckpt_path.c_str(), nullptr, &m_raw);
      st != AFN_OK)
    return fail_from_api(st);
  const ModelPtr model(m_raw);

  char* rep_raw = nullptr;
  if (const afn_status st = afn_evaluate(model.get(), ds.get(), train_json.c_str(), a.seed,
                                         a.split.c_str(), &rep_raw);
      st != AFN_OK)
    return fail_from_api(st);
  const ApiString rep(rep_raw);
  const std::string pretty = json::parse(rep.get()).dump(2) + "\n";

  std::cout << pretty;
  if (!a.out_path.empty()) write_file(a.out_path, pretty);
  return 0;
}

struct BatteryArgs {
  std::string config_path;
  std::string data_path;
  std::string out_dir;
  bool resume = false;
  int threads = 1;
  std::vector<std::uint64_t> seeds;
  OverrideSet ov;
};

int cmd_battery(const BatteryArgs& a, bool suite) {
  json root = load_config_file(a.config_path);
  a.ov.apply(root);
  if (!a.seeds.empty()) root["train"]["seeds"] = a.seeds;
  const json exp = {{"train", section_or_empty(root, "train")},
                    {"base_model", section_or_empty(root, "model")}};
  const std::string exp_json = exp.dump();

  afn_dataset* ds_raw = nullptr;
  if (const afn_status st = afn_dataset_load(a.data_path.c_str(), &ds_raw); st != AFN_OK)
    return fail_from_api(st);
  const DatasetPtr ds(ds_raw);

  const auto log = [](const char* line, void*) { std::fprintf(stderr, "%s\n", line); };
  char* summary_raw = nullptr;
  const afn_status st =
      suite ? afn_run_suite(ds.get(), exp_json.c_str(), a.out_dir.c_str(),
                            a.resume ? 1 : 0, a.threads, log, nullptr, &summary_raw)
            : afn_run_grid(ds.get(), exp_json.c_str(), a.out_dir.c_str(),
                           a.resume ? 1 : 0, a.threads, log, nullptr, &summary_raw);
  if (st != AFN_OK) return fail_from_api(st);
  const ApiString summary(summary_raw);

  std::cout << summary.get();
  std::cerr << "results written to " << a.out_dir << "\n";
  return 0;
}

struct ReportArgs {
  std::string csv_path;
};

int cmd_report(const ReportArgs& a) {
  const std::string csv = read_file(a.csv_path);
  char* out_raw = nullptr;
  if (const afn_status st = afn_render_csv(csv.c_str(), &out_raw); st != AFN_OK)
    return fail_from_api(st);
  const ApiString text(out_raw);
  std::cout << text.get();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multimodal fraud-fusion experimentation toolkit", "afn"};
  app.set_version_flag("--version", afn_version());
  app.require_subcommand(1);

  SynthArgs synth_args;
  CLI::App* synth = app.add_subcommand("synth", "Generate a synthetic claims dataset");
  synth->add_option("--config", synth_args.config_path, "config file with a [synth] section");
  synth->add_option("--out", synth_args.out_dir,
                    "output directory for claims.jsonl and synth.json");
  add_override<std::int64_t>(*synth, synth_args.ov, "--n", "synth", "n_claims",
                             "number of claims");
  add_override<double>(*synth, synth_args.ov, "--fraud-rate", "synth", "fraud_rate",
                       "target fraud prevalence in (0,1)");
  add_override<int>(*synth, synth_args.ov, "--min-images", "synth", "min_images",
                    "fewest images per claim");
  add_override<int>(*synth, synth_args.ov, "--max-images", "synth", "max_images",
                    "most images per claim");
  add_override<int>(*synth, synth_args.ov, "--latent-v", "synth", "latent_v",
                    "visual latent dimension");
  add_override<int>(*synth, synth_args.ov, "--latent-t", "synth", "latent_t",
                    "tabular latent dimension");
  add_override<double>(*synth, synth_args.ov, "--beta", "synth", "beta",
                       "cross-modal interaction strength");
  add_override<double>(*synth, synth_args.ov, "--alpha-v", "synth", "alpha_v",
                       "visual main-effect strength");
  add_override<double>(*synth, synth_args.ov, "--alpha-t", "synth", "alpha_t",
                       "tabular main-effect strength");
  add_override<double>(*synth, synth_args.ov, "--sigma", "synth", "sigma",
                       "observation noise scale");
  add_override<std::uint64_t>(*synth, synth_args.ov, "--seed", "synth", "seed",
                              "generator seed");

  TrainArgs train_args;
  CLI::App* train = app.add_subcommand("train", "Train one model and write a checkpoint");
  train->add_option("--config", train_args.config_path,
                    "config file with [train] and [model] sections");
  train->add_option("--data", train_args.data_path, "claims JSONL file")->required();
  train->add_option("--out", train_args.out_dir,
                    "output directory for model.ckpt, history.jsonl, result.json");
  train->add_option("--seed", train_args.seed, "split/init/batch seed");
  add_train_flags(*train, train_args.ov);
  add_model_flags(*train, train_args.ov);

  EvalArgs eval_args;
  CLI::App* eval = app.add_subcommand("eval", "Score a dataset split with a checkpoint");
  eval->add_option("--config", eval_args.config_path, "config file with a [train] section");
  eval->add_option("--data", eval_args.data_path, "claims JSONL file")->required();
  eval->add_option("--ckpt", eval_args.ckpt_path, "checkpoint to load")->required();
  eval->add_option("--split", eval_args.split, "split to report on")
      ->check(CLI::IsMember({"train", "val", "test", "all"}));
  eval->add_option("--seed", eval_args.seed, "split seed (match the training seed)");
  eval->add_option("--expect-arch", eval_args.expect_arch,
                   "reject the checkpoint unless its architecture matches");
  eval->add_option("--out", eval_args.out_path, "also write the report JSON here");
  add_train_flags(*eval, eval_args.ov);

  BatteryArgs grid_args;
  CLI::App* grid =
      app.add_subcommand("grid", "Run the 8-pair x 7-strategy bimodal PR AUC grid");
  BatteryArgs suite_args;
  CLI::App* suite =
      app.add_subcommand("suite", "Run the eight-configuration comparison suite");
  for (auto [cmd, args] : {std::pair{grid, &grid_args}, std::pair{suite, &suite_args}}) {
    cmd->add_option("--config", args->config_path,
                    "config file with [train] and [model] sections");
    cmd->add_option("--data", args->data_path, "claims JSONL file")->required();
    cmd->add_option("--out", args->out_dir, "output directory")->required();
    cmd->add_flag("--resume", args->resume, "reuse finished cells found in --out");
    cmd->add_option("--threads", args->threads, "worker threads")
        ->check(CLI::PositiveNumber);
    cmd->add_option("--seeds", args->seeds, "training seeds")->delimiter(',');
    add_train_flags(*cmd, args->ov);
    add_model_flags(*cmd, args->ov);
  }

  ReportArgs report_args;
  CLI::App* report =
      app.add_subcommand("report", "Align one of the toolkit's CSV files as text");
  report->add_option("csv", report_args.csv_path, "results.csv to render")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (synth->parsed()) return cmd_synth(synth_args);
    if (train->parsed()) return cmd_train(train_args);
    if (eval->parsed()) return cmd_eval(eval_args);
    if (grid->parsed()) return cmd_battery(grid_args, /*suite=*/false);
    if (suite->parsed()) return cmd_battery(suite_args, /*suite=*/true);
    if (report->parsed()) return cmd_report(report_args);
  } catch (const CliError& e) {
    std::cerr << "error: " << e.message << '\n';
    return e.code;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
