#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <vector>

#include "afn/train.hpp"
#include "doctest.h"

using namespace afn;

namespace {

FeatureDims tiny_dims() {
  FeatureDims d;
  d.cds = 5;
  d.ud = 4;
  d.spud = 6;
  d.struct_dim = 3;
  d.text = 7;
  d.image_emb = 6;
  return d;
}

/// Dataset whose first SPUD column carries the label, everything else noise.
DatasetTensors<double> learnable_data(std::int64_t n, std::uint64_t seed) {
  const auto dm = tiny_dims();
  Rng rng(seed);
  auto fill = [&](Tensor<double>& t) {
    for (auto& x : t.v) x = rng.uniform(-1.0, 1.0);
  };
  DatasetTensors<double> d;
  d.spud = Tensor<double>::zeros({n, dm.spud});
  d.structs = Tensor<double>::zeros({n, dm.struct_dim});
  d.text = Tensor<double>::zeros({n, dm.text});
  fill(d.spud);
  fill(d.structs);
  fill(d.text);
  d.has_text.assign(static_cast<std::size_t>(n), 1);
  std::int64_t total = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    const int label = static_cast<int>(i % 2);
    d.claim_ids.push_back("c" + std::to_string(i));
    d.labels.push_back(label);
    d.spud.at(i, 0) = (label ? 0.8 : -0.8) + rng.uniform(-0.2, 0.2);
    d.image_offset.push_back(total);
    d.image_count.push_back(1);
    total += 1;
  }
  d.cds_images = Tensor<double>::zeros({total, dm.image_emb});
  d.ud_images = Tensor<double>::zeros({total, dm.image_emb});
  fill(d.cds_images);
  fill(d.ud_images);
  return d;
}

ModelConfig spud_model() {
  ModelConfig cfg;
  cfg.arch = Arch::Unimodal;
  cfg.feature = FeatureId::SPUD;
  cfg.dims = tiny_dims();
  cfg.mlp_hidden = {4};
  cfg.encoder_hidden = 3;
  cfg.dropout_p = 0.0;
  return cfg;
}

}  // namespace

TEST_CASE("train config validates and round-trips") {
  TrainConfig cfg;
  CHECK(cfg.lr == doctest::Approx(1e-3));
  CHECK(cfg.batch_size == 64);
  CHECK(cfg.max_epochs == 50);
  CHECK(cfg.patience == 3);
  CHECK(cfg.seeds.size() == 5);
  CHECK(cfg.monitor == "pr_auc");
  CHECK_NOTHROW(cfg.validate());

  cfg.lr = 0.02;
  cfg.batch_size = 8;
  cfg.seeds = {11, 12};
  cfg.monitor = "balanced_accuracy";
  cfg.split = {0.7, 0.15, 0.15};
  auto back = TrainConfig::from_json(cfg.to_json());
  CHECK(back.lr == doctest::Approx(0.02));
  CHECK(back.batch_size == 8);
  CHECK(back.seeds == std::vector<std::uint64_t>{11, 12});
  CHECK(back.monitor == "balanced_accuracy");
  CHECK(back.split == std::vector<double>{0.7, 0.15, 0.15});

  CHECK_THROWS_AS(TrainConfig::from_json("{\"lrr\": 1}"), ConfigError);
  CHECK_THROWS_AS(TrainConfig::from_json("{\"lr\": \"fast\"}"), ConfigError);
  CHECK_THROWS_AS(TrainConfig::from_json("nope"), ConfigError);

  auto bad = TrainConfig{};
  bad.batch_size = 7;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = TrainConfig{};
  bad.patience = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = TrainConfig{};
  bad.lr = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = TrainConfig{};
  bad.seeds.clear();
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = TrainConfig{};
  bad.monitor = "accuracy";
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = TrainConfig{};
  bad.split = {0.5, 0.5};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = TrainConfig{};
  bad.split = {0.8, 0.3, 0.1};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("stratified split hits the documented 1000-claim case") {
  std::vector<int> labels(1000, 0);
  for (int i = 0; i < 30; ++i) labels[static_cast<std::size_t>(i * 33)] = 1;
  const auto s = split_stratified(labels, {0.8, 0.1, 0.1}, 5);
  CHECK(s.train.size() == 800);
  CHECK(s.val.size() == 100);
  CHECK(s.test.size() == 100);
  auto frauds = [&](const std::vector<std::int64_t>& part) {
    int n = 0;
    for (auto i : part) n += labels[static_cast<std::size_t>(i)];
    return n;
  };
  CHECK(frauds(s.train) == 24);
  CHECK(frauds(s.val) == 3);
  CHECK(frauds(s.test) == 3);

  // Disjoint and covering.
  std::set<std::int64_t> all;
  for (const auto* part : {&s.train, &s.val, &s.test})
    for (auto i : *part) CHECK(all.insert(i).second);
  CHECK(all.size() == 1000);
}

TEST_CASE("stratified split stays within one claim per class and part") {
  Rng rng(77);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = static_cast<int>(rng.uniform_int(30, 400));
    std::vector<int> labels;
    int npos = 0;
    for (int i = 0; i < n; ++i) {
      const int l = rng.uniform() < 0.25 ? 1 : 0;
      npos += l;
      labels.push_back(l);
    }
    if (npos < 3 || n - npos < 3) continue;
    const std::vector<double> ratios = {0.8, 0.1, 0.1};
    const auto s = split_stratified(labels, ratios, static_cast<std::uint64_t>(trial));
    for (int cls : {0, 1}) {
      const double total = cls ? npos : n - npos;
      const std::vector<const std::vector<std::int64_t>*> parts = {&s.train, &s.val, &s.test};
      for (int p = 0; p < 3; ++p) {
        int got = 0;
        for (auto i : *parts[static_cast<std::size_t>(p)])
          got += (labels[static_cast<std::size_t>(i)] == cls) ? 1 : 0;
        CHECK(std::abs(got - total * ratios[static_cast<std::size_t>(p)]) <= 1.0);
      }
    }
  }
}

TEST_CASE("stratified split is deterministic per seed and guards inputs") {
  std::vector<int> labels(40, 0);
  for (int i = 0; i < 8; ++i) labels[static_cast<std::size_t>(i)] = 1;
  const auto a = split_stratified(labels, {0.8, 0.1, 0.1}, 9);
  const auto b = split_stratified(labels, {0.8, 0.1, 0.1}, 9);
  CHECK(a.train == b.train);
  CHECK(a.val == b.val);
  CHECK(a.test == b.test);
  const auto c = split_stratified(labels, {0.8, 0.1, 0.1}, 10);
  CHECK(a.train != c.train);

  CHECK_THROWS_AS(split_stratified(labels, {0.8, 0.2}, 1), ConfigError);
  CHECK_THROWS_AS(split_stratified(labels, {0.8, 0.3, -0.1}, 1), ConfigError);
  CHECK_THROWS_AS(split_stratified(labels, {0.5, 0.3, 0.1}, 1), ConfigError);
  std::vector<int> two_fraud(50, 0);
  two_fraud[0] = two_fraud[1] = 1;
  CHECK_THROWS_AS(split_stratified(two_fraud, {0.8, 0.1, 0.1}, 1), DataError);
  std::vector<int> bad = {0, 1, 2, 0, 1, 0};
  CHECK_THROWS_AS(split_stratified(bad, {0.8, 0.1, 0.1}, 1), DataError);
}

TEST_CASE("balanced batches sweep the majority once and resample the minority") {
  // 70 majority (label 0), 30 minority.
  std::vector<int> labels(100, 0);
  std::vector<std::int64_t> pool;
  for (int i = 0; i < 100; ++i) {
    if (i < 30) labels[static_cast<std::size_t>(i)] = 1;
    pool.push_back(i);
  }
  const auto batches = balanced_batches(pool, labels, 10, 3);
  CHECK(batches.size() == 14);  // ceil(2*70/10)
  std::map<std::int64_t, int> maj_seen;
  for (const auto& b : batches) {
    REQUIRE(b.size() == 10);
    int pos = 0;
    for (auto i : b) {
      pos += labels[static_cast<std::size_t>(i)];
      if (labels[static_cast<std::size_t>(i)] == 0) ++maj_seen[i];
    }
    CHECK(pos == 5);
  }
  // 14 batches x 5 slots = 70 majority slots: exactly one pass.
  CHECK(maj_seen.size() == 70);
  for (const auto& [id, count] : maj_seen) CHECK(count == 1);

  // Same seed, same stream; different seed, different stream.
  CHECK(balanced_batches(pool, labels, 10, 3) == batches);
  CHECK(balanced_batches(pool, labels, 10, 4) != batches);
}

TEST_CASE("balanced batches wrap the majority to fill the last batch") {
  std::vector<int> labels(65 + 5, 0);
  std::vector<std::int64_t> pool;
  for (int i = 0; i < 70; ++i) {
    if (i >= 65) labels[static_cast<std::size_t>(i)] = 1;
    pool.push_back(i);
  }
  const auto batches = balanced_batches(pool, labels, 64, 11);
  CHECK(batches.size() == 3);  // ceil(130/64)
  std::map<std::int64_t, int> maj_seen;
  for (const auto& b : batches) {
    int pos = 0;
    for (auto i : b) {
      pos += labels[static_cast<std::size_t>(i)];
      if (labels[static_cast<std::size_t>(i)] == 0) ++maj_seen[i];
    }
    CHECK(pos == 32);
  }
  // 96 slots over 65 ids: every id once, 31 of them twice.
  CHECK(maj_seen.size() == 65);
  int twice = 0;
  for (const auto& [id, count] : maj_seen) {
    CHECK(count >= 1);
    CHECK(count <= 2);
    twice += count == 2;
  }
  CHECK(twice == 96 - 65);
}

TEST_CASE("balanced batches guard their inputs") {
  std::vector<int> labels = {0, 0, 0, 1, 1};
  std::vector<std::int64_t> pool = {0, 1, 2, 3, 4};
  CHECK_THROWS_AS(balanced_batches(pool, labels, 5, 1), ConfigError);
  CHECK_THROWS_AS(balanced_batches(pool, labels, 0, 1), ConfigError);
  CHECK_THROWS_AS(balanced_batches({0, 1, 2}, labels, 4, 1), DataError);
  CHECK_THROWS_AS(balanced_batches({0, 9}, labels, 4, 1), DataError);
}

TEST_CASE("adam first step moves each weight by about lr in the gradient direction") {
  Graph<double> g;
  const int p = g.add_param("p", Tensor<double>::vec({1.0, -2.0, 0.5}));
  Adam<double> opt(g, 1e-3, 0.9, 0.999, 1e-8);

  Var x = g.param(p);
  Var c = g.input(Tensor<double>::vec({3.0, -5.0, 0.25}));
  Var loss = g.sum_all(g.hadamard(x, c));  // grad = c
  g.zero_grads();
  g.backward(loss);
  opt.step();
  CHECK(opt.steps_taken() == 1);

  const auto& val = g.param_entry(p).value.v;
  // Bias-corrected first step: delta = -lr * g / (|g| + eps) ~ -lr * sign(g).
  CHECK(val[0] == doctest::Approx(1.0 - 1e-3).epsilon(1e-6));
  CHECK(val[1] == doctest::Approx(-2.0 + 1e-3).epsilon(1e-6));
  CHECK(val[2] == doctest::Approx(0.5 - 1e-3).epsilon(1e-6));
}

TEST_CASE("adam matches a two-step hand computation") {
  Graph<double> g;
  const int p = g.add_param("p", Tensor<double>::vec({0.7}));
  const double lr = 0.01, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  Adam<double> opt(g, lr, b1, b2, eps);

  double x = 0.7, m = 0.0, v = 0.0;
  for (int t = 1; t <= 2; ++t) {
    g.reset();
    Var loss = g.sum_all(g.hadamard(g.param(p), g.param(p)));  // d/dx x^2 = 2x
    g.zero_grads();
    g.backward(loss);
    opt.step();

    const double grad = 2.0 * x;
    m = b1 * m + (1 - b1) * grad;
    v = b2 * v + (1 - b2) * grad * grad;
    const double mhat = m / (1.0 - std::pow(b1, t));
    const double vhat = v / (1.0 - std::pow(b2, t));
    x -= lr * mhat / (std::sqrt(vhat) + eps);
    CHECK(g.param_entry(p).value.v[0] == doctest::Approx(x).epsilon(1e-14));
  }
}

TEST_CASE("adam leaves parameters untouched under a zero gradient") {
  Graph<double> g;
  const int p = g.add_param("p", Tensor<double>::vec({1.25, -0.75}));
  const int q = g.add_param("q", Tensor<double>::vec({2.0}));
  Adam<double> opt(g, 0.1, 0.9, 0.999, 1e-8);
  // Loss touches only q; p's gradient stays zero.
  Var loss = g.sum_all(g.hadamard(g.param(q), g.param(q)));
  g.zero_grads();
  g.backward(loss);
  opt.step();
  CHECK(g.param_entry(p).value.v == std::vector<double>{1.25, -0.75});
  CHECK(g.param_entry(q).value.v[0] != 2.0);
}

TEST_CASE("adam drives a quadratic to its minimum") {
  Graph<double> g;
  const int p = g.add_param("x", Tensor<double>::vec({5.0, -3.0, 2.0}));
  const std::vector<double> target = {1.0, 2.0, 3.0};
  Adam<double> opt(g, 0.1, 0.9, 0.999, 1e-8);
  for (int step = 0; step < 400; ++step) {
    g.reset();
    Var d = g.add(g.param(p), g.scale(g.input(Tensor<double>::vec(target)), -1.0));
    Var loss = g.sum_all(g.hadamard(d, d));
    g.zero_grads();
    g.backward(loss);
    opt.step();
  }
  for (int k = 0; k < 3; ++k)
    CHECK(g.param_entry(p).value.v[static_cast<std::size_t>(k)] ==
          doctest::Approx(target[static_cast<std::size_t>(k)]).epsilon(1e-3));
}

TEST_CASE("adam aborts on non-finite gradients with a diagnostic") {
  Graph<double> g;
  g.add_param("layer/w", Tensor<double>::vec({1.0, 2.0}));
  Adam<double> opt(g, 0.1, 0.9, 0.999, 1e-8);
  g.param_entry(0).grad.v[1] = std::nan("");
  try {
    opt.step();
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("layer/w") != std::string::npos);
    CHECK(msg.find("element 1") != std::string::npos);
  }
}

TEST_CASE("early stopper follows the documented trace") {
  // Metrics .10 .12 .11 .11 .11 with patience 3: stop after epoch 5, best 2.
  EarlyStopper s(3);
  CHECK_FALSE(s.update(0.10, 1));
  CHECK_FALSE(s.update(0.12, 2));
  CHECK_FALSE(s.update(0.11, 3));
  CHECK_FALSE(s.update(0.11, 4));
  CHECK(s.update(0.11, 5));
  CHECK(s.best_epoch == 2);
  CHECK(s.best == doctest::Approx(0.12));
}

TEST_CASE("early stopper counts ties as non-improvements") {
  EarlyStopper s(1);
  CHECK_FALSE(s.update(0.2, 1));
  CHECK(s.update(0.2, 2));
  CHECK(s.best_epoch == 1);
  CHECK_THROWS_AS(EarlyStopper(0), ConfigError);
}

TEST_CASE("fit learns a separable signal and restores its best epoch") {
  auto data = learnable_data(60, 21);
  TrainConfig tcfg;
  tcfg.lr = 0.05;
  tcfg.batch_size = 4;
  tcfg.max_epochs = 12;
  tcfg.patience = 4;
  tcfg.split = {0.6, 0.2, 0.2};
  const auto split = split_stratified(data.labels, tcfg.split, 2);

  Model<double> model(spud_model(), 31);
  const auto res = fit(model, data, split, tcfg, 2);

  REQUIRE(!res.history.empty());
  CHECK(res.epochs_run == static_cast<int>(res.history.size()));
  CHECK(res.best_epoch >= 1);
  CHECK(res.best_metric > res.history.front().val_metric - 1e-12);
  // The planted signal is easy: the best epoch separates validation well.
  CHECK(res.best_metric > 0.9);
  // Restoration: scoring validation again reproduces the best epoch's metric.
  const double after = pr_auc(model.scored_set(data, split.val));
  CHECK(after == res.best_metric);
  // Best epoch is the first argmax under strict improvement.
  for (int e = 0; e < res.best_epoch - 1; ++e)
    CHECK(res.history[static_cast<std::size_t>(e)].val_metric < res.best_metric);
}

TEST_CASE("fit is bit-identical for identical seed, config, and data") {
  auto data = learnable_data(40, 33);
  TrainConfig tcfg;
  tcfg.lr = 0.03;
  tcfg.batch_size = 4;
  tcfg.max_epochs = 4;
  tcfg.patience = 2;
  tcfg.split = {0.6, 0.2, 0.2};
  const auto split = split_stratified(data.labels, tcfg.split, 7);

  auto run = [&](std::uint64_t seed) {
    Model<double> m(spud_model(), key_combine(seed, key_of("init")));
    return fit(m, data, split, tcfg, seed);
  };
  const auto a = run(5);
  const auto b = run(5);
  REQUIRE(a.history.size() == b.history.size());
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    CHECK(a.history[i].train_loss == b.history[i].train_loss);
    CHECK(a.history[i].val_metric == b.history[i].val_metric);
  }
  const auto c = run(6);
  bool same = a.history.size() == c.history.size();
  if (same)
    for (std::size_t i = 0; i < a.history.size(); ++i)
      same = same && a.history[i].train_loss == c.history[i].train_loss;
  CHECK_FALSE(same);
}

TEST_CASE("fit stops early once the monitor stalls") {
  auto data = learnable_data(40, 51);
  TrainConfig tcfg;
  tcfg.lr = 0.08;
  tcfg.batch_size = 4;
  tcfg.max_epochs = 40;
  tcfg.patience = 2;
  tcfg.split = {0.6, 0.2, 0.2};
  const auto split = split_stratified(data.labels, tcfg.split, 3);
  Model<double> model(spud_model(), 13);
  const auto res = fit(model, data, split, tcfg, 13);
  // The signal saturates quickly, so patience must trigger well short of 40.
  CHECK(res.epochs_run < tcfg.max_epochs);
  const auto& last = res.history.back();
  CHECK(last.val_metric <= res.best_metric);
}

TEST_CASE("aggregate reproduces the documented five-value case") {
  const auto s = aggregate({0.1, 0.2, 0.3, 0.4, 0.5});
  CHECK(s.mean == doctest::Approx(0.3).epsilon(1e-12));
  CHECK(s.stddev == doctest::Approx(0.15811388300841897).epsilon(1e-12));
  const auto one = aggregate({0.42});
  CHECK(one.mean == doctest::Approx(0.42));
  CHECK(one.stddev == 0.0);
  CHECK_THROWS_AS(aggregate({}), ConfigError);
}

TEST_CASE("multi-seed runs aggregate per-seed test reports") {
  auto data = learnable_data(60, 71);
  TrainConfig tcfg;
  tcfg.lr = 0.05;
  tcfg.batch_size = 4;
  tcfg.max_epochs = 6;
  tcfg.patience = 3;
  tcfg.seeds = {101, 202};
  tcfg.split = {0.6, 0.2, 0.2};

  const auto agg = multi_seed_run(spud_model(), data, tcfg);
  REQUIRE(agg.runs.size() == 2);
  CHECK(agg.runs[0].seed == 101);
  CHECK(agg.runs[1].seed == 202);

  const double m = (agg.runs[0].report.pr_auc + agg.runs[1].report.pr_auc) / 2.0;
  CHECK(agg.pr_auc.mean == doctest::Approx(m).epsilon(1e-12));
  const double sd = std::sqrt((std::pow(agg.runs[0].report.pr_auc - m, 2) +
                               std::pow(agg.runs[1].report.pr_auc - m, 2)) /
                              1.0);
  CHECK(agg.pr_auc.stddev == doctest::Approx(sd).epsilon(1e-12));
  for (const auto& run : agg.runs) {
    CHECK(run.report.threshold >= 0.0);
    CHECK(run.report.threshold <= 1.0);
    CHECK(run.report.fraud.recall >= 0.0);
  }

  // Single seed: stddev collapses to zero and results repeat bit-for-bit.
  tcfg.seeds = {101};
  const auto solo = multi_seed_run(spud_model(), data, tcfg);
  CHECK(solo.pr_auc.stddev == 0.0);
  CHECK(solo.pr_auc.mean == agg.runs[0].report.pr_auc);
  const auto solo2 = multi_seed_run(spud_model(), data, tcfg);
  CHECK(solo2.pr_auc.mean == solo.pr_auc.mean);
  CHECK(solo2.runs[0].report.balanced_accuracy == solo.runs[0].report.balanced_accuracy);
}
