#include "afn/train.hpp"

#include <algorithm>
#include <cmath>

#include "json.hpp"

namespace afn {

using json = nlohmann::json;

namespace {

void check_ratios(const std::vector<double>& ratios) {
  if (ratios.size() != 3)
    throw ConfigError("split ratios must hold three parts, got " +
                      std::to_string(ratios.size()));
  double sum = 0.0;
  for (double r : ratios) {
    if (!(r >= 0.0))
      throw ConfigError("split ratios must be non-negative, got " + std::to_string(r));
    sum += r;
  }
  if (std::abs(sum - 1.0) > 1e-9)
    throw ConfigError("split ratios must sum to 1, got " + std::to_string(sum));
}

void shuffle_ids(std::vector<std::int64_t>& ids, Rng& rng) {
  for (std::int64_t i = static_cast<std::int64_t>(ids.size()) - 1; i > 0; --i)
    std::swap(ids[static_cast<std::size_t>(i)],
              ids[static_cast<std::size_t>(rng.uniform_int(0, i))]);
}

}  // namespace

void TrainConfig::validate() const {
  if (!(std::isfinite(lr) && lr > 0.0))
    throw ConfigError("lr must be positive, got " + std::to_string(lr));
  if (batch_size < 2 || batch_size % 2 != 0)
    throw ConfigError("batch_size must be even and >= 2, got " +
                      std::to_string(batch_size));
  if (max_epochs < 1)
    throw ConfigError("max_epochs must be >= 1, got " + std::to_string(max_epochs));
  if (patience < 1)
    throw ConfigError("patience must be >= 1, got " + std::to_string(patience));
  if (seeds.empty()) throw ConfigError("seeds must name at least one run");
  if (monitor != "pr_auc" && monitor != "balanced_accuracy")
    throw ConfigError("unknown monitor '" + monitor +
                      "'; expected pr_auc or balanced_accuracy");
  for (double b : {beta1, beta2})
    if (!(b >= 0.0 && b < 1.0))
      throw ConfigError("adam betas must lie in [0,1), got " + std::to_string(b));
  if (!(eps > 0.0)) throw ConfigError("adam eps must be positive, got " + std::to_string(eps));
  if (!(min_recall >= 0.0 && min_recall <= 1.0))
    throw ConfigError("min_recall must lie in [0,1], got " + std::to_string(min_recall));
  check_ratios(split);
}

std::string TrainConfig::to_json() const {
  json j;
  j["lr"] = lr;
  j["batch_size"] = batch_size;
  j["max_epochs"] = max_epochs;
  j["patience"] = patience;
  j["seeds"] = seeds;
  j["monitor"] = monitor;
  j["beta1"] = beta1;
  j["beta2"] = beta2;
  j["eps"] = eps;
  j["min_recall"] = min_recall;
  j["split"] = split;
  return j.dump();
}

TrainConfig TrainConfig::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("train config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("train config must be a JSON object");

  TrainConfig cfg;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "lr")
        cfg.lr = value.get<double>();
      else if (key == "batch_size")
        cfg.batch_size = value.get<int>();
      else if (key == "max_epochs")
        cfg.max_epochs = value.get<int>();
      else if (key == "patience")
        cfg.patience = value.get<int>();
      else if (key == "seeds")
        cfg.seeds = value.get<std::vector<std::uint64_t>>();
      else if (key == "monitor")
        cfg.monitor = value.get<std::string>();
      else if (key == "beta1")
        cfg.beta1 = value.get<double>();
      else if (key == "beta2")
        cfg.beta2 = value.get<double>();
      else if (key == "eps")
        cfg.eps = value.get<double>();
      else if (key == "min_recall")
        cfg.min_recall = value.get<double>();
      else if (key == "split")
        cfg.split = value.get<std::vector<double>>();
      else
        throw ConfigError("unknown train config key: " + key);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("train config field has the wrong type: ") + e.what());
  }
  return cfg;
}

SplitIndices split_stratified(const std::vector<int>& labels,
                              const std::vector<double>& ratios, std::uint64_t seed) {
  check_ratios(ratios);
  std::vector<std::int64_t> by_class[2];
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int l = labels[i];
    if (l != 0 && l != 1)
      throw DataError("label must be 0 or 1, got " + std::to_string(l) + " at claim " +
                      std::to_string(i));
    by_class[l].push_back(static_cast<std::int64_t>(i));
  }
  for (int c : {0, 1})
    if (by_class[c].size() < 3)
      throw DataError("class " + std::to_string(c) + " holds only " +
                      std::to_string(by_class[c].size()) +
                      " claims; stratified splitting needs at least 3");

  SplitIndices out;
  for (int c : {0, 1}) {
    auto ids = by_class[c];
    Rng rng(key_combine(key_combine(seed, key_of("split")), static_cast<std::uint64_t>(c)));
    shuffle_ids(ids, rng);
    const auto n = static_cast<std::int64_t>(ids.size());
    // Largest-remainder apportionment keeps every part within one claim of
    // its per-class quota.
    std::int64_t counts[3];
    double rem[3];
    std::int64_t used = 0;
    for (int p = 0; p < 3; ++p) {
      const double quota = static_cast<double>(n) * ratios[static_cast<std::size_t>(p)];
      counts[p] = static_cast<std::int64_t>(std::floor(quota + 1e-9));
      rem[p] = std::max(0.0, quota - static_cast<double>(counts[p]));
      used += counts[p];
    }
    int order[3] = {0, 1, 2};
    std::sort(order, order + 3, [&](int a, int b) {
      return rem[a] != rem[b] ? rem[a] > rem[b] : a < b;
    });
    for (std::int64_t k = 0; k < n - used; ++k) ++counts[order[k]];
    out.train.insert(out.train.end(), ids.begin(), ids.begin() + counts[0]);
    out.val.insert(out.val.end(), ids.begin() + counts[0],
                   ids.begin() + counts[0] + counts[1]);
    out.test.insert(out.test.end(), ids.begin() + counts[0] + counts[1], ids.end());
  }
  for (auto* part : {&out.train, &out.val, &out.test}) std::sort(part->begin(), part->end());
  return out;
}

std::vector<std::vector<std::int64_t>> balanced_batches(
    const std::vector<std::int64_t>& pool, const std::vector<int>& labels, int batch_size,
    std::uint64_t seed) {
  if (batch_size < 2 || batch_size % 2 != 0)
    throw ConfigError("batch_size must be even and >= 2, got " +
                      std::to_string(batch_size));
  std::vector<std::int64_t> by_class[2];
  for (auto i : pool) {
    if (i < 0 || i >= static_cast<std::int64_t>(labels.size()))
      throw DataError("claim index " + std::to_string(i) + " outside dataset of " +
                      std::to_string(labels.size()));
    const int l = labels[static_cast<std::size_t>(i)];
    if (l != 0 && l != 1)
      throw DataError("label must be 0 or 1, got " + std::to_string(l) + " at claim " +
                      std::to_string(i));
    by_class[l].push_back(i);
  }
  if (by_class[0].empty() || by_class[1].empty())
    throw DataError("balanced batches need both classes in the training pool");

  const int maj_class = by_class[1].size() > by_class[0].size() ? 1 : 0;
  auto maj = by_class[maj_class];
  const auto& minor = by_class[1 - maj_class];
  const auto maj_n = static_cast<std::int64_t>(maj.size());
  const std::int64_t half = batch_size / 2;
  const std::int64_t n_batches = (2 * maj_n + batch_size - 1) / batch_size;

  Rng rng(key_combine(seed, key_of("balanced_batches")));
  shuffle_ids(maj, rng);

  std::vector<std::vector<std::int64_t>> out;
  out.reserve(static_cast<std::size_t>(n_batches));
  std::int64_t cursor = 0;
  for (std::int64_t b = 0; b < n_batches; ++b) {
    std::vector<std::int64_t> batch;
    batch.reserve(static_cast<std::size_t>(batch_size));
    for (std::int64_t k = 0; k < half; ++k)
      batch.push_back(maj[static_cast<std::size_t>(cursor++ % maj_n)]);
    for (std::int64_t k = 0; k < half; ++k)
      batch.push_back(minor[static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<std::int64_t>(minor.size()) - 1))]);
    out.push_back(std::move(batch));
  }
  return out;
}

AggregateStat aggregate(const std::vector<double>& xs) {
  if (xs.empty()) throw ConfigError("aggregate needs at least one value");
  AggregateStat s;
  for (double x : xs) s.mean += x;
  s.mean /= static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - s.mean) * (x - s.mean);
    s.stddev = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  }
  return s;
}

}  // namespace afn
