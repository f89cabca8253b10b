#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "ssnet/errors.hpp"

namespace ssnet::metrics {

struct ConfusionMatrix {
  size_t n_classes = 0;
  std::vector<uint64_t> counts;  // [true * n_classes + predicted]
  std::vector<std::string> class_names;

  uint64_t at(size_t t, size_t p) const { return counts[t * n_classes + p]; }
  uint64_t& at(size_t t, size_t p) { return counts[t * n_classes + p]; }
  uint64_t total() const;
};

struct ConfusionCounts {
  uint64_t tp = 0, tn = 0, fp = 0, fn = 0;
  uint64_t n() const { return tp + tn + fp + fn; }
};

// Percentages at full precision; rounding happens only when rendering.
struct MetricsRow {
  std::string class_name;
  double accuracy = 0.0;
  double sensitivity = 0.0;  // recall
  double specificity = 0.0;
  double precision = 0.0;
  double f1 = 0.0;
  double kappa = 0.0;  // one-vs-rest (binary) kappa
  bool degenerate = false;  // some denominator was zero and defaulted to 0
};

ConfusionMatrix confusion(const std::vector<int>& predictions, const std::vector<int>& labels,
                          size_t n_classes, std::vector<std::string> class_names = {});

ConfusionCounts one_vs_rest(const ConfusionMatrix& cm, size_t cls);

// SE = TP/(TP+FN); SP = TN/(TN+FP); ACC = (TN+TP)/N; Precision = TP/(TP+FP);
// F1 = 2(SE*Precision)/(SE+Precision);
// Kappa = 2(TN*TP - FP*FN) / ((TN+FN)(FN+TP) + (FP+TP)(TN+FP)).
// Zero denominators evaluate to 0 and set the degenerate flag.
MetricsRow class_metrics(const ConfusionCounts& cc, const std::string& class_name = "");

MetricsRow macro_average(const std::vector<MetricsRow>& rows);

std::vector<MetricsRow> per_class_metrics(const ConfusionMatrix& cm);

// Chance-corrected agreement over the full matrix (reported as a percentage);
// emitted in JSON alongside the per-class one-vs-rest values.
double multiclass_kappa(const ConfusionMatrix& cm);

enum class ReportFormat { table, csv, json };

// CSV columns Class,ACC,SE,SP,F1,Kappa; the average row comes last.
std::string render_report(const ConfusionMatrix& cm, const std::vector<MetricsRow>& rows,
                          ReportFormat format);

std::string confusion_csv(const ConfusionMatrix& cm);

struct RemSummary {
  double precision = 0.0;
  double recall = 0.0;
  bool degenerate = false;
};

// Precision/recall restricted to the REM class of a five-class matrix.
RemSummary rem_detection_summary(const ConfusionMatrix& cm);

}  // namespace ssnet::metrics
