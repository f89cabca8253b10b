#include "ssnet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace ssnet::metrics {

uint64_t ConfusionMatrix::total() const {
  uint64_t n = 0;
  for (uint64_t c : counts) n += c;
  return n;
}

ConfusionMatrix confusion(const std::vector<int>& predictions, const std::vector<int>& labels,
                          size_t n_classes, std::vector<std::string> class_names) {
  if (predictions.size() != labels.size())
    throw LengthMismatch("predictions and labels differ in length");
  ConfusionMatrix cm;
  cm.n_classes = n_classes;
  cm.counts.assign(n_classes * n_classes, 0);
  if (class_names.empty())
    for (size_t c = 0; c < n_classes; ++c) class_names.push_back("class" + std::to_string(c));
  if (class_names.size() != n_classes)
    throw LengthMismatch("class name count does not match n_classes");
  cm.class_names = std::move(class_names);
  for (size_t i = 0; i < labels.size(); ++i) {
    const int t = labels[i], p = predictions[i];
    if (t < 0 || p < 0 || static_cast<size_t>(t) >= n_classes ||
        static_cast<size_t>(p) >= n_classes)
      throw ClassOutOfRange("class index outside [0, " + std::to_string(n_classes) + ")");
    ++cm.at(static_cast<size_t>(t), static_cast<size_t>(p));
  }
  return cm;
}

ConfusionCounts one_vs_rest(const ConfusionMatrix& cm, size_t cls) {
  if (cls >= cm.n_classes) throw ClassOutOfRange("class index out of range");
  ConfusionCounts cc;
  cc.tp = cm.at(cls, cls);
  for (size_t p = 0; p < cm.n_classes; ++p)
    if (p != cls) cc.fn += cm.at(cls, p);
  for (size_t t = 0; t < cm.n_classes; ++t)
    if (t != cls) cc.fp += cm.at(t, cls);
  cc.tn = cm.total() - cc.tp - cc.fp - cc.fn;
  return cc;
}

namespace {

// 0-with-flag convention for empty denominators keeps average rows
// computable when a class is absent from a small run
double ratio(double num, double den, bool* degenerate) {
  if (den == 0.0) {
    *degenerate = true;
    return 0.0;
  }
  return num / den;
}

}  // namespace

MetricsRow class_metrics(const ConfusionCounts& cc, const std::string& class_name) {
  if (cc.n() == 0) throw EmptyCounts("no evaluated epochs");
  MetricsRow row;
  row.class_name = class_name;
  const double tp = static_cast<double>(cc.tp), tn = static_cast<double>(cc.tn);
  const double fp = static_cast<double>(cc.fp), fn = static_cast<double>(cc.fn);
  row.sensitivity = 100.0 * ratio(tp, tp + fn, &row.degenerate);
  row.specificity = 100.0 * ratio(tn, tn + fp, &row.degenerate);
  row.accuracy = 100.0 * (tn + tp) / static_cast<double>(cc.n());
  row.precision = 100.0 * ratio(tp, tp + fp, &row.degenerate);
  row.f1 = 2.0 * ratio(row.sensitivity * row.precision, row.sensitivity + row.precision,
                       &row.degenerate);
  row.kappa = 100.0 * ratio(2.0 * (tn * tp - fp * fn),
                            (tn + fn) * (fn + tp) + (fp + tp) * (tn + fp), &row.degenerate);
  return row;
}

MetricsRow macro_average(const std::vector<MetricsRow>& rows) {
  if (rows.empty()) throw EmptyCounts("cannot average zero rows");
  MetricsRow avg;
  avg.class_name = "Average";
  for (const MetricsRow& r : rows) {
    avg.accuracy += r.accuracy;
    avg.sensitivity += r.sensitivity;
    avg.specificity += r.specificity;
    avg.precision += r.precision;
    avg.f1 += r.f1;
    avg.kappa += r.kappa;
    avg.degenerate = avg.degenerate || r.degenerate;
  }
  const auto n = static_cast<double>(rows.size());
  avg.accuracy /= n;
  avg.sensitivity /= n;
  avg.specificity /= n;
  avg.precision /= n;
  avg.f1 /= n;
  avg.kappa /= n;
  return avg;
}

std::vector<MetricsRow> per_class_metrics(const ConfusionMatrix& cm) {
  std::vector<MetricsRow> rows;
  for (size_t c = 0; c < cm.n_classes; ++c)
    rows.push_back(class_metrics(one_vs_rest(cm, c), cm.class_names[c]));
  return rows;
}

double multiclass_kappa(const ConfusionMatrix& cm) {
  const double n = static_cast<double>(cm.total());
  if (n == 0.0) throw EmptyCounts("empty confusion matrix");
  double po = 0.0, pe = 0.0;
  for (size_t c = 0; c < cm.n_classes; ++c) {
    po += static_cast<double>(cm.at(c, c)) / n;
    double row = 0.0, col = 0.0;
    for (size_t j = 0; j < cm.n_classes; ++j) {
      row += static_cast<double>(cm.at(c, j));
      col += static_cast<double>(cm.at(j, c));
    }
    pe += (row / n) * (col / n);
  }
  if (pe == 1.0) return 100.0;
  return 100.0 * (po - pe) / (1.0 - pe);
}

namespace {

std::string fmt2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

}  // namespace

std::string render_report(const ConfusionMatrix& cm, const std::vector<MetricsRow>& rows,
                          ReportFormat format) {
  switch (format) {
    case ReportFormat::csv: {
      std::ostringstream os;
      os << "Class,ACC,SE,SP,F1,Kappa\n";
      for (const MetricsRow& r : rows)
        os << r.class_name << ',' << fmt2(r.accuracy) << ',' << fmt2(r.sensitivity) << ','
           << fmt2(r.specificity) << ',' << fmt2(r.f1) << ',' << fmt2(r.kappa) << '\n';
      return os.str();
    }
    case ReportFormat::table: {
      std::ostringstream os;
      char buf[160];
      std::snprintf(buf, sizeof(buf), "%-10s %8s %8s %8s %8s %8s\n", "Class", "ACC", "SE", "SP",
                    "F1", "Kappa");
      os << buf;
      for (const MetricsRow& r : rows) {
        std::snprintf(buf, sizeof(buf), "%-10s %8.2f %8.2f %8.2f %8.2f %8.2f%s\n",
                      r.class_name.c_str(), r.accuracy, r.sensitivity, r.specificity, r.f1,
                      r.kappa, r.degenerate ? "  (degenerate)" : "");
        os << buf;
      }
      return os.str();
    }
    case ReportFormat::json: {
      nlohmann::json j;
      j["classes"] = cm.class_names;
      nlohmann::json grid = nlohmann::json::array();
      for (size_t t = 0; t < cm.n_classes; ++t) {
        nlohmann::json row = nlohmann::json::array();
        for (size_t p = 0; p < cm.n_classes; ++p) row.push_back(cm.at(t, p));
        grid.push_back(std::move(row));
      }
      j["confusion"] = grid;
      nlohmann::json jrows = nlohmann::json::array();
      for (const MetricsRow& r : rows) {
        nlohmann::json jr;
        jr["class"] = r.class_name;
        jr["accuracy"] = r.accuracy;
        jr["sensitivity"] = r.sensitivity;
        jr["specificity"] = r.specificity;
        jr["precision"] = r.precision;
        jr["f1"] = r.f1;
        jr["kappa"] = r.kappa;
        jr["degenerate"] = r.degenerate;
        jrows.push_back(std::move(jr));
      }
      j["rows"] = jrows;
      j["kappa_multiclass"] = multiclass_kappa(cm);
      return j.dump(2) + "\n";
    }
  }
  throw UsageError("unknown report format");
}

std::string confusion_csv(const ConfusionMatrix& cm) {
  std::ostringstream os;
  os << "true\\pred";
  for (const std::string& n : cm.class_names) os << ',' << n;
  os << '\n';
  for (size_t t = 0; t < cm.n_classes; ++t) {
    os << cm.class_names[t];
    for (size_t p = 0; p < cm.n_classes; ++p) os << ',' << cm.at(t, p);
    os << '\n';
  }
  return os.str();
}

RemSummary rem_detection_summary(const ConfusionMatrix& cm) {
  if (cm.n_classes != 5) throw NotFiveClass("REM summary requires a five-class matrix");
  size_t rem = cm.n_classes - 1;
  for (size_t c = 0; c < cm.class_names.size(); ++c)
    if (cm.class_names[c] == "REM" || cm.class_names[c] == "R") rem = c;
  const ConfusionCounts cc = one_vs_rest(cm, rem);
  RemSummary out;
  const double tp = static_cast<double>(cc.tp);
  out.precision = 100.0 * ratio(tp, tp + static_cast<double>(cc.fp), &out.degenerate);
  out.recall = 100.0 * ratio(tp, tp + static_cast<double>(cc.fn), &out.degenerate);
  return out;
}

}  // namespace ssnet::metrics
