#include <doctest.h>

#include <cmath>

#include "ssnet/metrics.hpp"
#include "ssnet/rng.hpp"

using namespace ssnet;
using namespace ssnet::metrics;

namespace {

// independent per-example counting oracle used to cross-check the library
struct BruteCounts {
  uint64_t tp = 0, tn = 0, fp = 0, fn = 0;
};

BruteCounts brute_force_counts(const std::vector<int>& preds, const std::vector<int>& labels,
                               int cls) {
  BruteCounts c;
  for (size_t i = 0; i < preds.size(); ++i) {
    const bool is_true = labels[i] == cls;
    const bool is_pred = preds[i] == cls;
    if (is_true && is_pred) ++c.tp;
    else if (is_true && !is_pred) ++c.fn;
    else if (!is_true && is_pred) ++c.fp;
    else ++c.tn;
  }
  return c;
}

struct BruteMetrics {
  double se, sp, acc, prec, f1, kappa;
};

BruteMetrics brute_force_metrics(const BruteCounts& c) {
  const double tp = static_cast<double>(c.tp), tn = static_cast<double>(c.tn);
  const double fp = static_cast<double>(c.fp), fn = static_cast<double>(c.fn);
  const double n = tp + tn + fp + fn;
  auto safe = [](double num, double den) { return den == 0.0 ? 0.0 : num / den; };
  BruteMetrics m;
  m.se = 100.0 * safe(tp, tp + fn);
  m.sp = 100.0 * safe(tn, tn + fp);
  m.acc = 100.0 * (tn + tp) / n;
  m.prec = 100.0 * safe(tp, tp + fp);
  m.f1 = safe(2.0 * m.se * m.prec, m.se + m.prec);
  m.kappa = 100.0 * safe(2.0 * (tn * tp - fp * fn), (tn + fn) * (fn + tp) + (fp + tp) * (tn + fp));
  return m;
}

}  // namespace

TEST_CASE("confusion matrix construction") {
  SUBCASE("perfect predictions give a diagonal matrix") {
    const std::vector<int> labels = {0, 1, 2, 1, 0, 2, 2};
    const ConfusionMatrix cm = confusion(labels, labels, 3);
    for (size_t t = 0; t < 3; ++t)
      for (size_t p = 0; p < 3; ++p)
        CHECK(cm.at(t, p) == (t == p ? (t == 0 ? 2u : t == 1 ? 2u : 3u) : 0u));
    CHECK(cm.total() == 7);
  }
  SUBCASE("a constant predictor fills one column") {
    const std::vector<int> labels = {0, 1, 2, 2};
    const std::vector<int> preds = {1, 1, 1, 1};
    const ConfusionMatrix cm = confusion(preds, labels, 3);
    for (size_t t = 0; t < 3; ++t) {
      CHECK(cm.at(t, 0) == 0);
      CHECK(cm.at(t, 2) == 0);
    }
    CHECK(cm.at(0, 1) == 1);
    CHECK(cm.at(2, 1) == 2);
  }
  SUBCASE("500 random samples match brute-force pairwise counting") {
    CounterRng rng(12);
    std::vector<int> preds(500), labels(500);
    for (size_t i = 0; i < 500; ++i) {
      preds[i] = static_cast<int>(rng.next_below(4));
      labels[i] = static_cast<int>(rng.next_below(4));
    }
    const ConfusionMatrix cm = confusion(preds, labels, 4);
    for (int t = 0; t < 4; ++t)
      for (int p = 0; p < 4; ++p) {
        uint64_t count = 0;
        for (size_t i = 0; i < 500; ++i)
          if (labels[i] == t && preds[i] == p) ++count;
        CHECK(cm.at(static_cast<size_t>(t), static_cast<size_t>(p)) == count);
      }
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(confusion({0}, {0, 1}, 2), LengthMismatch);
    CHECK_THROWS_AS(confusion({2}, {0}, 2), ClassOutOfRange);
  }
}

TEST_CASE("one_vs_rest worked example") {
  ConfusionMatrix cm;
  cm.n_classes = 2;
  cm.class_names = {"a", "b"};
  cm.counts = {5, 1, 2, 4};
  const ConfusionCounts cc = one_vs_rest(cm, 0);
  CHECK(cc.tp == 5);
  CHECK(cc.fn == 1);
  CHECK(cc.fp == 2);
  CHECK(cc.tn == 4);
  CHECK(cc.n() == 12);
}

TEST_CASE("class_metrics evaluates the published formulas") {
  SUBCASE("perfect classifier scores 100 everywhere") {
    const MetricsRow r = class_metrics({10, 10, 0, 0});
    CHECK(r.sensitivity == 100.0);
    CHECK(r.specificity == 100.0);
    CHECK(r.accuracy == 100.0);
    CHECK(r.precision == 100.0);
    CHECK(r.f1 == 100.0);
    CHECK(r.kappa == 100.0);
    CHECK_FALSE(r.degenerate);
  }
  SUBCASE("chance-level symmetry has zero kappa") {
    const MetricsRow r = class_metrics({25, 25, 25, 25});
    CHECK(r.kappa == 0.0);
  }
  SUBCASE("worked example TP=50 TN=30 FP=10 FN=10") {
    const MetricsRow r = class_metrics({50, 30, 10, 10});
    CHECK(r.sensitivity == doctest::Approx(250.0 / 3.0).epsilon(1e-12));
    CHECK(r.specificity == doctest::Approx(75.0).epsilon(1e-12));
    CHECK(r.accuracy == doctest::Approx(80.0).epsilon(1e-12));
    CHECK(r.precision == doctest::Approx(250.0 / 3.0).epsilon(1e-12));
    CHECK(r.f1 == doctest::Approx(250.0 / 3.0).epsilon(1e-12));
    CHECK(r.kappa == doctest::Approx(175.0 / 3.0).epsilon(1e-12));  // 58.33
  }
  SUBCASE("zero denominators default to 0 with the degenerate flag") {
    const MetricsRow r = class_metrics({0, 10, 0, 0});  // empty positive class
    CHECK(r.sensitivity == 0.0);
    CHECK(r.precision == 0.0);
    CHECK(r.degenerate);
  }
  SUBCASE("empty counts") { CHECK_THROWS_AS(class_metrics({0, 0, 0, 0}), EmptyCounts); }
}

TEST_CASE("class_metrics equals the brute-force per-example oracle") {
  CounterRng rng(77);
  for (int trial = 0; trial < 1000; ++trial) {
    const size_t n = 1 + rng.next_below(60);
    const int k = 2 + static_cast<int>(rng.next_below(4));
    std::vector<int> preds(n), labels(n);
    for (size_t i = 0; i < n; ++i) {
      preds[i] = static_cast<int>(rng.next_below(static_cast<uint64_t>(k)));
      labels[i] = static_cast<int>(rng.next_below(static_cast<uint64_t>(k)));
    }
    const ConfusionMatrix cm = confusion(preds, labels, static_cast<size_t>(k));
    for (int c = 0; c < k; ++c) {
      const MetricsRow row = class_metrics(one_vs_rest(cm, static_cast<size_t>(c)));
      const BruteMetrics want = brute_force_metrics(brute_force_counts(preds, labels, c));
      REQUIRE(std::fabs(row.sensitivity - want.se) < 1e-12);
      REQUIRE(std::fabs(row.specificity - want.sp) < 1e-12);
      REQUIRE(std::fabs(row.accuracy - want.acc) < 1e-12);
      REQUIRE(std::fabs(row.precision - want.prec) < 1e-12);
      REQUIRE(std::fabs(row.f1 - want.f1) < 1e-12);
      REQUIRE(std::fabs(row.kappa - want.kappa) < 1e-12);
    }
  }
}

TEST_CASE("kappa identities and F1 consistency") {
  CounterRng rng(31);
  for (int trial = 0; trial < 200; ++trial) {
    ConfusionCounts cc{rng.next_below(50), rng.next_below(50), rng.next_below(50),
                       rng.next_below(50)};
    if (cc.n() == 0) continue;
    const MetricsRow r = class_metrics(cc);
    CHECK(r.kappa >= -100.0);
    CHECK(r.kappa <= 100.0);
    if (cc.tp * cc.tn == cc.fp * cc.fn) CHECK(r.kappa == 0.0);
    if (cc.fp == 0 && cc.fn == 0 && cc.tp > 0 && cc.tn > 0) CHECK(r.kappa == 100.0);
    // recomputing F1 from the emitted SE and precision reproduces the row
    if (r.sensitivity + r.precision > 0)
      CHECK(r.f1 == doctest::Approx(2.0 * r.sensitivity * r.precision /
                                    (r.sensitivity + r.precision))
                        .epsilon(1e-12));
  }
}

TEST_CASE("macro average") {
  MetricsRow a = class_metrics({10, 10, 0, 0});  // all 100
  MetricsRow b = class_metrics({0, 10, 0, 10});  // acc 50, rest 0/degenerate
  SUBCASE("identical rows average to themselves") {
    const MetricsRow avg = macro_average({a, a, a});
    CHECK(avg.accuracy == a.accuracy);
    CHECK(avg.kappa == a.kappa);
  }
  SUBCASE("100 and 0 average to 50") {
    MetricsRow zero{};
    zero.class_name = "z";
    const MetricsRow avg = macro_average({a, zero});
    CHECK(avg.accuracy == 50.0);
    CHECK(avg.f1 == 50.0);
  }
  SUBCASE("three-row case agrees with hand arithmetic") {
    const MetricsRow avg = macro_average({a, b, a});
    CHECK(avg.accuracy == doctest::Approx((100.0 + 50.0 + 100.0) / 3.0));
    CHECK(avg.sensitivity == doctest::Approx((100.0 + 0.0 + 100.0) / 3.0));
    CHECK(avg.degenerate);  // propagated from b
  }
  SUBCASE("empty input") {
    CHECK_THROWS_AS(macro_average({}), EmptyCounts);
  }
}

TEST_CASE("render_report formats") {
  const std::vector<int> labels = {0, 0, 0, 1, 1, 2, 2, 2, 2, 1};
  const std::vector<int> preds = {0, 0, 1, 1, 1, 2, 2, 0, 2, 1};
  const ConfusionMatrix cm = confusion(preds, labels, 3, {"W", "NREM", "REM"});
  std::vector<MetricsRow> rows = per_class_metrics(cm);
  rows.push_back(macro_average(rows));

  SUBCASE("csv golden") {
    // hand-evaluated one-vs-rest counts:
    //   W: TP2 FN1 FP1 TN6, NREM: TP3 FN0 FP1 TN6, REM: TP3 FN1 FP0 TN6
    const std::string csv = render_report(cm, rows, ReportFormat::csv);
    const std::string expect =
        "Class,ACC,SE,SP,F1,Kappa\n"
        "W,80.00,66.67,85.71,66.67,52.38\n"
        "NREM,90.00,100.00,85.71,85.71,78.26\n"
        "REM,90.00,75.00,100.00,85.71,78.26\n"
        "Average,86.67,80.56,90.48,79.37,69.63\n";
    CHECK(csv == expect);
    // row count: classes + average
    size_t lines = 0;
    for (char c : csv)
      if (c == '\n') ++lines;
    CHECK(lines == cm.n_classes + 2);  // header + rows
  }
  SUBCASE("confusion grid csv") {
    const std::string grid = confusion_csv(cm);
    CHECK(grid ==
          "true\\pred,W,NREM,REM\n"
          "W,2,1,0\n"
          "NREM,0,3,0\n"
          "REM,1,0,3\n");
  }
  SUBCASE("json carries full precision and the multiclass kappa") {
    const nlohmann::json j = nlohmann::json::parse(render_report(cm, rows, ReportFormat::json));
    CHECK(j["classes"].size() == 3);
    CHECK(j["rows"].size() == 4);
    CHECK(j["confusion"][0][0] == 2);
    CHECK(j.contains("kappa_multiclass"));
    const double po = 8.0 / 10.0;
    const double pe = (3.0 * 3.0 + 3.0 * 4.0 + 4.0 * 3.0) / 100.0;
    CHECK(j["kappa_multiclass"].get<double>() ==
          doctest::Approx(100.0 * (po - pe) / (1.0 - pe)).epsilon(1e-9));
  }
  SUBCASE("table format mentions every class") {
    const std::string table = render_report(cm, rows, ReportFormat::table);
    for (const char* name : {"W", "NREM", "REM", "Average"})
      CHECK(table.find(name) != std::string::npos);
  }
}

TEST_CASE("multiclass kappa is 100 for a perfect diagonal") {
  const std::vector<int> labels = {0, 1, 2, 0, 1, 2};
  CHECK(multiclass_kappa(confusion(labels, labels, 3)) == doctest::Approx(100.0));
}

TEST_CASE("rem_detection_summary") {
  SUBCASE("perfect five-class matrix") {
    const std::vector<int> labels = {0, 1, 2, 3, 4, 4};
    const ConfusionMatrix cm = confusion(labels, labels, 5, {"W", "N1", "N2", "N3", "REM"});
    const RemSummary rem = rem_detection_summary(cm);
    CHECK(rem.precision == 100.0);
    CHECK(rem.recall == 100.0);
    CHECK_FALSE(rem.degenerate);
  }
  SUBCASE("empty REM column defaults precision to 0 and flags it") {
    const std::vector<int> labels = {4, 4, 0, 1};
    const std::vector<int> preds = {0, 0, 0, 1};
    const ConfusionMatrix cm = confusion(preds, labels, 5, {"W", "N1", "N2", "N3", "REM"});
    const RemSummary rem = rem_detection_summary(cm);
    CHECK(rem.precision == 0.0);
    CHECK(rem.degenerate);
  }
  SUBCASE("agrees with class_metrics on the REM class") {
    CounterRng rng(3);
    std::vector<int> preds(200), labels(200);
    for (size_t i = 0; i < 200; ++i) {
      preds[i] = static_cast<int>(rng.next_below(5));
      labels[i] = static_cast<int>(rng.next_below(5));
    }
    const ConfusionMatrix cm = confusion(preds, labels, 5, {"W", "N1", "N2", "N3", "REM"});
    const RemSummary rem = rem_detection_summary(cm);
    const MetricsRow row = class_metrics(one_vs_rest(cm, 4));
    CHECK(rem.precision == row.precision);
    CHECK(rem.recall == row.sensitivity);
  }
  SUBCASE("requires five classes") {
    const std::vector<int> labels = {0, 1, 2};
    CHECK_THROWS_AS(rem_detection_summary(confusion(labels, labels, 3)), NotFiveClass);
  }
}
