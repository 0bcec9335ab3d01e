#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <set>

#include "afn/errors.hpp"
#include "afn/metrics.hpp"
#include "afn/rng.hpp"
#include "doctest.h"

using namespace afn;

namespace {

/// Random scored set on a 1/1000 grid (grid gaps keep monotone transforms
/// from merging distinct scores through rounding).
ScoredSet random_set(Rng& rng, int n, double prevalence) {
  ScoredSet s;
  for (int i = 0; i < n; ++i) {
    s.scores.push_back(static_cast<double>(rng.uniform_int(0, 1000)) / 1000.0);
    s.labels.push_back(rng.uniform() < prevalence ? 1 : 0);
  }
  if (std::count(s.labels.begin(), s.labels.end(), 1) == 0)
    s.labels[static_cast<std::size_t>(rng.uniform_int(0, n - 1))] = 1;
  if (std::count(s.labels.begin(), s.labels.end(), 0) == 0) s.labels[0] = 0;
  return s;
}

double oracle_tune(const ScoredSet& s, double min_recall) {
  std::set<double> candidates(s.scores.begin(), s.scores.end());
  const auto npos = std::count(s.labels.begin(), s.labels.end(), 1);
  bool found = false;
  double bt = 0, bp = -1, br = -1;
  for (double t : candidates) {
    Confusion c = confusion_at(s, t);
    double r = static_cast<double>(c.tp) / static_cast<double>(npos);
    if (r < min_recall) continue;
    double p = c.tp + c.fp > 0 ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp) : 0.0;
    if (!found || p > bp || (p == bp && r > br) || (p == bp && r == br && t > bt)) {
      found = true;
      bt = t;
      bp = p;
      br = r;
    }
  }
  REQUIRE(found);
  return bt;
}

}  // namespace

TEST_CASE("confusion_at extremes") {
  ScoredSet s{{0.2, 0.9, 0.4, 0.7}, {0, 1, 0, 1}};
  Confusion all = confusion_at(s, 0.0);
  CHECK(all.tp == 2);
  CHECK(all.fp == 2);
  CHECK(all.tn == 0);
  CHECK(all.fn == 0);

  Confusion none = confusion_at(s, 0.95);  // just above the max score
  CHECK(none.tp == 0);
  CHECK(none.fp == 0);
  CHECK(none.tn == 2);
  CHECK(none.fn == 2);
}

TEST_CASE("confusion_at matches an enumeration oracle on a 6-point hand case") {
  ScoredSet s{{0.9, 0.1, 0.8, 0.3, 0.7, 0.2}, {1, 0, 1, 0, 0, 1}};
  Confusion c = confusion_at(s, 0.5);
  CHECK(c.tp == 2);
  CHECK(c.fp == 1);
  CHECK(c.tn == 2);
  CHECK(c.fn == 1);

  for (double t : {0.0, 0.15, 0.25, 0.5, 0.75, 0.85, 1.0}) {
    Confusion got = confusion_at(s, t);
    std::int64_t tp = 0, fp = 0, tn = 0, fn = 0;
    for (std::size_t i = 0; i < s.scores.size(); ++i) {
      bool pred = s.scores[i] >= t;
      if (s.labels[i] == 1 && pred) ++tp;
      if (s.labels[i] == 0 && pred) ++fp;
      if (s.labels[i] == 0 && !pred) ++tn;
      if (s.labels[i] == 1 && !pred) ++fn;
    }
    CHECK(got.tp == tp);
    CHECK(got.fp == fp);
    CHECK(got.tn == tn);
    CHECK(got.fn == fn);
  }
}

TEST_CASE("confusion counts partition the set at every threshold") {
  Rng rng(41);
  for (int trial = 0; trial < 200; ++trial) {
    auto s = random_set(rng, 30, 0.3);
    const auto npos = std::count(s.labels.begin(), s.labels.end(), 1);
    const auto nneg = static_cast<std::int64_t>(s.labels.size()) - npos;
    double t = static_cast<double>(rng.uniform_int(0, 1000)) / 1000.0;
    Confusion c = confusion_at(s, t);
    CHECK(c.tp + c.fn == npos);
    CHECK(c.tn + c.fp == nneg);
    CHECK(c.tp + c.fp + c.tn + c.fn == static_cast<std::int64_t>(s.labels.size()));
  }
}

TEST_CASE("prf1 reproduces the published CDS fraud row from its own p and r") {
  // published P = 0.094, R = 0.811 round to F1 = 0.168
  Confusion c{/*tp=*/811, /*fp=*/7817, /*tn=*/0, /*fn=*/189};
  // pick fp so that precision is 0.094 to 3 decimals: 811 / (811+7817) = 0.09400...
  Prf f = prf1(c, 1);
  CHECK(f.precision == doctest::Approx(0.094).epsilon(1e-3));
  CHECK(f.recall == doctest::Approx(0.811).epsilon(1e-12));
  CHECK(std::abs(f.f1 - 0.168) <= 0.001);
}

TEST_CASE("prf1 trivial and degenerate cases") {
  Confusion perfect{5, 0, 7, 0};
  Prf f = prf1(perfect, 1);
  CHECK(f.precision == 1.0);
  CHECK(f.recall == 1.0);
  CHECK(f.f1 == 1.0);
  Prf n = prf1(perfect, 0);
  CHECK(n.precision == 1.0);
  CHECK(n.recall == 1.0);
  CHECK(n.f1 == 1.0);

  Confusion nopred{0, 0, 7, 5};  // zero predicted positives
  Prf z = prf1(nopred, 1);
  CHECK(z.precision == 0.0);
  CHECK(z.f1 == 0.0);

  CHECK_THROWS_AS(prf1(perfect, 2), ConfigError);
}

TEST_CASE("prf1 f1 is the harmonic mean of its own p and r") {
  Rng rng(43);
  for (int trial = 0; trial < 100; ++trial) {
    Confusion c{rng.uniform_int(0, 20), rng.uniform_int(0, 20), rng.uniform_int(0, 20),
                rng.uniform_int(0, 20)};
    for (int cls : {0, 1}) {
      Prf f = prf1(c, cls);
      CHECK(f.precision >= 0.0);
      CHECK(f.precision <= 1.0);
      CHECK(f.recall >= 0.0);
      CHECK(f.recall <= 1.0);
      if (f.precision + f.recall > 0)
        CHECK(f.f1 == doctest::Approx(2 * f.precision * f.recall / (f.precision + f.recall))
                          .epsilon(1e-12));
      else
        CHECK(f.f1 == 0.0);
    }
  }
}

TEST_CASE("pr_auc examples") {
  ScoredSet separating{{0.9, 0.8, 0.2, 0.1}, {1, 1, 0, 0}};
  CHECK(pr_auc(separating) == doctest::Approx(1.0).epsilon(1e-15));

  ScoredSet hand{{0.9, 0.8, 0.7, 0.6}, {1, 0, 1, 0}};
  CHECK(pr_auc(hand) == doctest::Approx(5.0 / 6.0).epsilon(1e-12));

  ScoredSet tied{{0.5, 0.5, 0.5, 0.5, 0.5}, {1, 0, 0, 1, 0}};
  CHECK(pr_auc(tied) == doctest::Approx(0.4).epsilon(1e-12));  // prevalence

  ScoredSet nopos{{0.5, 0.6}, {0, 0}};
  CHECK_THROWS_AS(pr_auc(nopos), DataError);
}

TEST_CASE("pr_auc treats a tie group as one threshold regardless of order") {
  ScoredSet a{{0.9, 0.5, 0.5, 0.1}, {1, 1, 0, 0}};
  ScoredSet b{{0.9, 0.5, 0.5, 0.1}, {1, 0, 1, 0}};
  CHECK(pr_auc(a) == pr_auc(b));
  CHECK(pr_auc(a) == doctest::Approx(5.0 / 6.0).epsilon(1e-12));
}

TEST_CASE("pr_auc is invariant under strictly increasing transforms") {
  Rng rng(47);
  for (int trial = 0; trial < 100; ++trial) {
    auto s = random_set(rng, 40, 0.25);
    double base = pr_auc(s);
    for (int kind = 0; kind < 3; ++kind) {
      ScoredSet t = s;
      for (auto& x : t.scores) {
        if (kind == 0) x = x / 2.0;
        if (kind == 1) x = 0.1 + 0.8 * x;
        if (kind == 2) x = x * x * x;
      }
      CHECK(pr_auc(t) == base);  // counts-only computation: exact equality
    }
  }
}

TEST_CASE("pr_auc bounds and perfect-separation characterization") {
  Rng rng(53);
  for (int trial = 0; trial < 300; ++trial) {
    auto s = random_set(rng, 25, trial % 3 == 0 ? 0.1 : 0.4);
    const auto n = static_cast<std::int64_t>(s.labels.size());
    const auto k = std::count(s.labels.begin(), s.labels.end(), 1);
    double ap = pr_auc(s);

    // worst case: all positives ranked after every negative
    double floor = 0.0;
    for (std::int64_t i = 1; i <= k; ++i)
      floor += static_cast<double>(i) / static_cast<double>(n - k + i);
    floor /= static_cast<double>(k);
    CHECK(ap >= floor - 1e-12);
    CHECK(ap <= 1.0 + 1e-12);

    double min_pos = 2.0, max_neg = -1.0;
    for (std::size_t i = 0; i < s.scores.size(); ++i) {
      if (s.labels[i] == 1) min_pos = std::min(min_pos, s.scores[i]);
      if (s.labels[i] == 0) max_neg = std::max(max_neg, s.scores[i]);
    }
    const bool separable = min_pos > max_neg;
    CHECK((ap == 1.0) == separable);
  }
}

TEST_CASE("balanced_accuracy examples") {
  // recalls 0.811 and 0.699 average to 0.755, the published CDS row
  Confusion cds{811, 301, 699, 189};
  CHECK(balanced_accuracy(cds) == doctest::Approx(0.755).epsilon(1e-12));

  Confusion perfect{10, 0, 90, 0};
  CHECK(balanced_accuracy(perfect) == 1.0);

  Confusion all_fraud{10, 90, 0, 0};  // predicts fraud for everything
  CHECK(balanced_accuracy(all_fraud) == 0.5);

  CHECK_THROWS_AS(balanced_accuracy(Confusion{0, 5, 5, 0}), DataError);
  CHECK_THROWS_AS(balanced_accuracy(Confusion{5, 0, 0, 5}), DataError);
}

TEST_CASE("balanced_accuracy of a constant predictor is exactly 0.5") {
  Rng rng(59);
  for (int trial = 0; trial < 50; ++trial) {
    auto s = random_set(rng, 20, 0.3);
    for (auto& x : s.scores) x = 0.42;
    CHECK(balanced_accuracy(confusion_at(s, 0.0)) == 0.5);   // everything fraud
    CHECK(balanced_accuracy(confusion_at(s, 0.9)) == 0.5);   // nothing fraud
    CHECK(balanced_accuracy(confusion_at(s, 0.42)) == 0.5);  // still everything
  }
}

TEST_CASE("tune_threshold captures at least ceil(min_recall * positives)") {
  ScoredSet s{{0.9, 0.8, 0.7, 0.6, 0.5, 0.45, 0.3, 0.2, 0.15, 0.1},
              {1, 0, 1, 1, 0, 1, 0, 0, 1, 0}};  // 5 positives
  double t = tune_threshold(s, 0.8);
  Confusion c = confusion_at(s, t);
  CHECK(c.tp >= 4);  // ceil(0.8 * 5)
  CHECK(static_cast<double>(c.tp) / 5.0 >= 0.8);
}

TEST_CASE("tune_threshold on separating scores sits at the lowest positive score") {
  ScoredSet s{{0.9, 0.85, 0.8, 0.75, 0.7, 0.3, 0.2, 0.1}, {1, 1, 1, 1, 1, 0, 0, 0}};
  CHECK(tune_threshold(s, 0.8) == 0.7);
  Confusion c = confusion_at(s, 0.7);
  CHECK(prf1(c, 1).precision == 1.0);
  CHECK(prf1(c, 1).recall == 1.0);
}

TEST_CASE("tune_threshold 8-point hand case agrees with an exhaustive sweep") {
  ScoredSet s{{0.95, 0.9, 0.6, 0.55, 0.5, 0.4, 0.3, 0.1}, {1, 0, 1, 1, 0, 1, 0, 1}};
  double got = tune_threshold(s, 0.8);
  double want = oracle_tune(s, 0.8);
  CHECK(got == want);
  Confusion cg = confusion_at(s, got), cw = confusion_at(s, want);
  CHECK(prf1(cg, 1).precision == prf1(cw, 1).precision);
  CHECK(prf1(cg, 1).recall == prf1(cw, 1).recall);
}

TEST_CASE("tune_threshold matches the oracle on random sets") {
  Rng rng(61);
  for (int trial = 0; trial < 200; ++trial) {
    auto s = random_set(rng, 25, 0.3);
    for (double mr : {0.5, 0.8, 1.0}) {
      double got = tune_threshold(s, mr);
      double want = oracle_tune(s, mr);
      INFO("trial " << trial << " min_recall " << mr);
      CHECK(got == want);
    }
  }
}

TEST_CASE("tune_threshold recall constraint always holds") {
  Rng rng(67);
  for (int trial = 0; trial < 100; ++trial) {
    auto s = random_set(rng, 30, 0.2);
    double t = tune_threshold(s, 0.8);
    Confusion c = confusion_at(s, t);
    CHECK(static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn) >= 0.8);
  }
}

TEST_CASE("compute_report fields are in range and self-consistent") {
  Rng rng(71);
  for (int trial = 0; trial < 50; ++trial) {
    auto s = random_set(rng, 40, 0.3);
    double t = tune_threshold(s, 0.8);
    MetricsReport r = compute_report(s, t);
    for (double x : {r.pr_auc, r.balanced_accuracy, r.threshold, r.fraud.precision,
                     r.fraud.recall, r.fraud.f1, r.nonfraud.precision, r.nonfraud.recall,
                     r.nonfraud.f1}) {
      CHECK(x >= 0.0);
      CHECK(x <= 1.0);
    }
    for (const Prf& f : {r.fraud, r.nonfraud})
      if (f.precision + f.recall > 0)
        CHECK(f.f1 == doctest::Approx(2 * f.precision * f.recall / (f.precision + f.recall))
                          .epsilon(1e-12));
  }
}

TEST_CASE("scored-set validation") {
  CHECK_THROWS_AS(pr_auc(ScoredSet{{}, {}}), DataError);
  CHECK_THROWS_AS(pr_auc(ScoredSet{{0.5}, {1, 0}}), DataError);
  CHECK_THROWS_AS(pr_auc(ScoredSet{{1.5}, {1}}), DataError);
  CHECK_THROWS_AS(pr_auc(ScoredSet{{-0.1}, {1}}), DataError);
  CHECK_THROWS_AS(pr_auc(ScoredSet{{0.5}, {2}}), DataError);
  CHECK_THROWS_AS(confusion_at(ScoredSet{{0.5}, {1}}, 1.5), ConfigError);
  CHECK_THROWS_AS(tune_threshold(ScoredSet{{0.5}, {1}}, -0.2), ConfigError);
}
