#pragma once

// Stratified k-fold cross-validation and the binary-classification metric
// suite: confusion-matrix statistics, probability error metrics, ROC/PRC
// areas and a plain-text report.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "irrigation/c45.hpp"
#include "irrigation/dataprep.hpp"
#include "irrigation/detail/format.hpp"
#include "irrigation/detail/random.hpp"

namespace irrigation::eval {

/// Classes in display order: index 0 is class 1 ("a"), index 1 is class 0.
inline constexpr std::array<int, 2> kDisplayOrder = {1, 0};

inline std::size_t display_index(int cls) { return cls == 1 ? 0 : 1; }

struct ConfusionMatrix {
  // counts[actual][predicted], both in display order.
  std::array<std::array<std::uint64_t, 2>, 2> counts{};

  static ConfusionMatrix from_display(std::array<std::array<std::uint64_t, 2>, 2> rows) { return {rows}; }

  void add(int actual, int predicted) { ++counts[display_index(actual)][display_index(predicted)]; }
  std::uint64_t at(int actual, int predicted) const { return counts[display_index(actual)][display_index(predicted)]; }
  std::uint64_t total() const { return counts[0][0] + counts[0][1] + counts[1][0] + counts[1][1]; }
  std::uint64_t actual_count(int cls) const { return at(cls, 0) + at(cls, 1); }
  std::uint64_t predicted_count(int cls) const { return at(0, cls) + at(1, cls); }
  std::uint64_t correct() const { return counts[0][0] + counts[1][1]; }
  bool operator==(const ConfusionMatrix&) const = default;
};

struct ClassMetrics {
  double tp_rate = 0;  // recall
  double fp_rate = 0;
  double precision = 0;
  double recall = 0;
  double f_measure = 0;
  double mcc = 0;
  double roc_area = 0;
  double prc_area = 0;
};

struct EvalReport {
  ConfusionMatrix matrix;
  double accuracy = 0;
  double kappa = 0;
  double mae = 0;
  double rmse = 0;
  double rae_pct = 0;
  double rrse_pct = 0;
  std::array<ClassMetrics, 2> per_class{};  // display order: class 1, class 0
  ClassMetrics weighted;
  /// Names of ratios whose denominator was zero (reported as 0).
  std::vector<std::string> undefined;

  const ClassMetrics& for_class(int cls) const { return per_class[display_index(cls)]; }
};

// ---------------------------------------------------------------------------
// Confusion-matrix metrics

namespace detail {

inline double ratio(double num, double den, const std::string& name, std::vector<std::string>& undefined) {
  if (den == 0) {
    undefined.push_back(name);
    return 0.0;
  }
  return num / den;
}

}  // namespace detail

/// Fills accuracy, kappa and per-class/weighted precision, recall, FP rate,
/// F-measure and MCC. Weighted averages use actual-class counts.
inline EvalReport matrix_metrics(const ConfusionMatrix& m) {
  if (m.total() == 0) throw std::invalid_argument("confusion matrix is empty");
  EvalReport r;
  r.matrix = m;
  const double total = static_cast<double>(m.total());
  r.accuracy = static_cast<double>(m.correct()) / total;

  double p_e = 0;
  for (int c : kDisplayOrder) {
    p_e += (static_cast<double>(m.actual_count(c)) / total) * (static_cast<double>(m.predicted_count(c)) / total);
  }
  r.kappa = detail::ratio(r.accuracy - p_e, 1.0 - p_e, "kappa", r.undefined);
  if (1.0 - p_e == 0 && r.accuracy == 1.0) {
    // Single class, all correct: agreement is perfect.
    r.kappa = 1.0;
  }

  for (int c : kDisplayOrder) {
    const int other = 1 - c;
    const double tp = static_cast<double>(m.at(c, c));
    const double fn = static_cast<double>(m.at(c, other));
    const double fp = static_cast<double>(m.at(other, c));
    const double tn = static_cast<double>(m.at(other, other));
    const std::string tag = " (class " + std::to_string(c) + ")";
    ClassMetrics& cm = r.per_class[display_index(c)];
    cm.tp_rate = detail::ratio(tp, tp + fn, "tp_rate" + tag, r.undefined);
    cm.recall = cm.tp_rate;
    cm.fp_rate = detail::ratio(fp, fp + tn, "fp_rate" + tag, r.undefined);
    cm.precision = detail::ratio(tp, tp + fp, "precision" + tag, r.undefined);
    cm.f_measure = detail::ratio(2 * cm.precision * cm.recall, cm.precision + cm.recall, "f_measure" + tag, r.undefined);
    double den = std::sqrt((tp + fp) * (tp + fn) * (tn + fp) * (tn + fn));
    cm.mcc = detail::ratio(tp * tn - fp * fn, den, "mcc" + tag, r.undefined);
  }

  auto weigh = [&](auto field) {
    double sum = 0;
    for (int c : kDisplayOrder) {
      sum += static_cast<double>(m.actual_count(c)) * r.per_class[display_index(c)].*field;
    }
    return sum / total;
  };
  r.weighted.tp_rate = weigh(&ClassMetrics::tp_rate);
  r.weighted.fp_rate = weigh(&ClassMetrics::fp_rate);
  r.weighted.precision = weigh(&ClassMetrics::precision);
  r.weighted.recall = weigh(&ClassMetrics::recall);
  r.weighted.f_measure = weigh(&ClassMetrics::f_measure);
  r.weighted.mcc = weigh(&ClassMetrics::mcc);
  return r;
}

// ---------------------------------------------------------------------------
// Probability-based metrics

/// Class distribution for one instance: {P(class 0), P(class 1)}.
using Distribution = std::array<double, 2>;

struct ErrorMetrics {
  double mae = 0;
  double rmse = 0;
  double rae_pct = 0;
  double rrse_pct = 0;
  std::array<double, 2> roc_area{};  // indexed by class value
  std::array<double, 2> prc_area{};  // indexed by class value
  std::vector<std::string> undefined;
};

/// Mann-Whitney AUC of ranking by `scores` for positives vs negatives; ties
/// count one half. nullopt when either group is empty.
inline std::optional<double> roc_area(const std::vector<double>& scores, const std::vector<bool>& positive) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double pos = 0;
  double neg = 0;
  double rank_sum = 0;  // sum of midranks of the positives
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    double midrank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k < j; ++k) {
      if (positive[order[k]]) {
        pos += 1;
        rank_sum += midrank;
      } else {
        neg += 1;
      }
    }
    i = j;
  }
  if (pos == 0 || neg == 0) return std::nullopt;
  return (rank_sum - pos * (pos + 1) / 2.0) / (pos * neg);
}

/// Average precision over thresholds taken at each distinct score, highest
/// first. nullopt without positives.
inline std::optional<double> prc_area(const std::vector<double>& scores, const std::vector<bool>& positive) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double total_pos = static_cast<double>(std::count(positive.begin(), positive.end(), true));
  if (total_pos == 0) return std::nullopt;
  double tp = 0;
  double seen = 0;
  double area = 0;
  double prev_recall = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      if (positive[order[j]]) tp += 1;
      seen += 1;
      ++j;
    }
    double recall = tp / total_pos;
    area += (recall - prev_recall) * (tp / seen);
    prev_recall = recall;
    i = j;
  }
  return area;
}

/// MAE/RMSE over per-class absolute errors |p_c - y_c|, their ratios (x100)
/// to the prior-frequency predictor fitted on `actual`, and per-class ROC and
/// PRC areas.
inline ErrorMetrics error_metrics(const std::vector<Distribution>& predicted, const std::vector<int>& actual) {
  if (predicted.empty()) throw std::invalid_argument("error metrics need at least one instance");
  if (predicted.size() != actual.size()) throw std::invalid_argument("one distribution per actual label required");
  const double n = static_cast<double>(actual.size());
  Distribution prior{0, 0};
  for (int y : actual) {
    if (y != 0 && y != 1) throw std::invalid_argument("labels must be 0 or 1");
    prior[static_cast<std::size_t>(y)] += 1.0 / n;
  }
  double abs_sum = 0, sq_sum = 0, prior_abs = 0, prior_sq = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    for (std::size_t c = 0; c < 2; ++c) {
      double y = actual[i] == static_cast<int>(c) ? 1.0 : 0.0;
      double e = predicted[i][c] - y;
      double pe = prior[c] - y;
      abs_sum += std::abs(e);
      sq_sum += e * e;
      prior_abs += std::abs(pe);
      prior_sq += pe * pe;
    }
  }
  ErrorMetrics out;
  out.mae = abs_sum / (n * 2);
  out.rmse = std::sqrt(sq_sum / (n * 2));
  double prior_mae = prior_abs / (n * 2);
  double prior_rmse = std::sqrt(prior_sq / (n * 2));
  out.rae_pct = detail::ratio(100.0 * out.mae, prior_mae, "relative absolute error", out.undefined);
  out.rrse_pct = detail::ratio(100.0 * out.rmse, prior_rmse, "root relative squared error", out.undefined);
  for (std::size_t c = 0; c < 2; ++c) {
    std::vector<double> scores;
    std::vector<bool> positive;
    for (std::size_t i = 0; i < predicted.size(); ++i) {
      scores.push_back(predicted[i][c]);
      positive.push_back(actual[i] == static_cast<int>(c));
    }
    auto roc = roc_area(scores, positive);
    auto prc = prc_area(scores, positive);
    if (!roc) out.undefined.push_back("roc_area (class " + std::to_string(c) + ")");
    if (!prc) out.undefined.push_back("prc_area (class " + std::to_string(c) + ")");
    out.roc_area[c] = roc.value_or(0.0);
    out.prc_area[c] = prc.value_or(0.0);
  }
  return out;
}

/// Full report from pooled predictions.
inline EvalReport evaluate_predictions(const std::vector<Distribution>& predicted, const std::vector<int>& predicted_labels,
                                       const std::vector<int>& actual) {
  if (predicted_labels.size() != actual.size()) throw std::invalid_argument("label vectors differ in length");
  ConfusionMatrix m;
  for (std::size_t i = 0; i < actual.size(); ++i) m.add(actual[i], predicted_labels[i]);
  EvalReport r = matrix_metrics(m);
  ErrorMetrics e = error_metrics(predicted, actual);
  r.mae = e.mae;
  r.rmse = e.rmse;
  r.rae_pct = e.rae_pct;
  r.rrse_pct = e.rrse_pct;
  for (int c : kDisplayOrder) {
    r.per_class[display_index(c)].roc_area = e.roc_area[static_cast<std::size_t>(c)];
    r.per_class[display_index(c)].prc_area = e.prc_area[static_cast<std::size_t>(c)];
  }
  const double total = static_cast<double>(m.total());
  r.weighted.roc_area = 0;
  r.weighted.prc_area = 0;
  for (int c : kDisplayOrder) {
    double w = static_cast<double>(m.actual_count(c)) / total;
    r.weighted.roc_area += w * r.for_class(c).roc_area;
    r.weighted.prc_area += w * r.for_class(c).prc_area;
  }
  r.undefined.insert(r.undefined.end(), e.undefined.begin(), e.undefined.end());
  return r;
}

// ---------------------------------------------------------------------------
// Stratified folds

struct FoldPlan {
  std::size_t k = 0;
  std::uint64_t seed = 0;
  std::vector<std::size_t> assignments;  // instance index -> fold index

  std::vector<std::size_t> test_indices(std::size_t fold) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < assignments.size(); ++i) {
      if (assignments[i] == fold) out.push_back(i);
    }
    return out;
  }
  std::vector<std::size_t> train_indices(std::size_t fold) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < assignments.size(); ++i) {
      if (assignments[i] != fold) out.push_back(i);
    }
    return out;
  }
  bool operator==(const FoldPlan&) const = default;
};

/// Within each class (1 first, then 0) instances are shuffled by `seed` and
/// dealt round-robin; dealing continues where the previous class stopped, so
/// fold sizes differ by at most one.
inline FoldPlan stratified_folds(const Dataset& d, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw std::invalid_argument("k must be at least 2");
  if (k > d.size()) throw std::invalid_argument("k exceeds the dataset size");
  FoldPlan plan;
  plan.k = k;
  plan.seed = seed;
  plan.assignments.assign(d.size(), 0);
  irrigation::detail::Rng rng(seed);
  std::size_t next_fold = 0;
  for (int cls : kDisplayOrder) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < d.size(); ++i) {
      if (!d.instances[i].label) throw std::invalid_argument("stratification needs labeled instances");
      if (*d.instances[i].label == cls) members.push_back(i);
    }
    rng.shuffle(members);
    for (auto i : members) {
      plan.assignments[i] = next_fold;
      next_fold = (next_fold + 1) % k;
    }
  }
  return plan;
}

inline Dataset subset(const Dataset& d, const std::vector<std::size_t>& rows) {
  Dataset out;
  out.instances.reserve(rows.size());
  for (auto r : rows) out.instances.push_back(d.instances[r]);
  return out;
}

/// Trains on k-1 folds (normalization refit per training fold) and predicts
/// the held-out fold; all held-out predictions are pooled into one report.
inline EvalReport cross_validate(const Dataset& d, std::size_t k, std::uint64_t seed, const c45::LearnerParams& params = {}) {
  if (!d.supervised()) throw std::invalid_argument("cross-validation needs a labeled dataset");
  FoldPlan plan = stratified_folds(d, k, seed);
  std::vector<Distribution> dist(d.size());
  std::vector<int> predicted(d.size());
  std::vector<int> actual(d.size());
  for (std::size_t fold = 0; fold < k; ++fold) {
    c45::TreeModel model = c45::build_tree(subset(d, plan.train_indices(fold)), params);
    for (auto i : plan.test_indices(fold)) {
      c45::Prediction p = c45::predict(model, d.instances[i]);
      dist[i] = p.probabilities;
      predicted[i] = p.label;
    }
  }
  for (std::size_t i = 0; i < d.size(); ++i) actual[i] = *d.instances[i].label;
  return evaluate_predictions(dist, predicted, actual);
}

// ---------------------------------------------------------------------------
// Report

namespace detail {

inline std::string pad_right(std::string s, std::size_t width) {
  if (s.size() < width) s.append(width - s.size(), ' ');
  return s;
}
inline std::string pad_left(std::string s, std::size_t width) {
  if (s.size() < width) s.insert(0, width - s.size(), ' ');
  return s;
}

inline std::string class_row(const std::string& label, const ClassMetrics& m) {
  using irrigation::detail::fixed;
  std::string row = pad_right(label, 16);
  const double values[] = {m.tp_rate, m.fp_rate, m.precision, m.recall, m.f_measure, m.mcc, m.roc_area, m.prc_area};
  const std::size_t widths[] = {9, 9, 11, 9, 11, 9, 10, 10};
  for (std::size_t i = 0; i < 8; ++i) row += pad_right(fixed(values[i], 3), widths[i]);
  return row;
}

}  // namespace detail

/// Plain-text cross-validation report: Summary, Detailed Accuracy By Class
/// (class 1, class 0, weighted average) and Confusion Matrix.
inline std::string format_report(const EvalReport& r) {
  using irrigation::detail::trimmed_fixed;
  using detail::pad_left;
  using detail::pad_right;
  const auto total = r.matrix.total();
  const auto correct = r.matrix.correct();
  const double pct_correct = 100.0 * static_cast<double>(correct) / static_cast<double>(total);

  std::ostringstream out;
  out << "=== Stratified cross-validation ===\n";
  out << "=== Summary ===\n\n";
  auto summary = [&](const std::string& label, const std::string& value, const std::string& suffix = "") {
    out << pad_right(label, 33) << pad_left(value, 9) << suffix << "\n";
  };
  auto count_line = [&](const std::string& label, std::uint64_t count, double pct) {
    out << pad_right(label, 33) << pad_left(std::to_string(count), 9) << pad_left(trimmed_fixed(pct, 4), 14)
        << "    %\n";
  };
  count_line("Correctly Classified Instances", correct, pct_correct);
  count_line("Incorrectly Classified Instances", total - correct, 100.0 - pct_correct);
  summary("Kappa statistic", trimmed_fixed(r.kappa, 4));
  summary("Mean absolute error", trimmed_fixed(r.mae, 4));
  summary("Root mean squared error", trimmed_fixed(r.rmse, 4));
  summary("Relative absolute error", trimmed_fixed(r.rae_pct, 4), " %");
  summary("Root relative squared error", trimmed_fixed(r.rrse_pct, 4), " %");
  summary("Total Number of Instances", std::to_string(total));

  out << "\n=== Detailed Accuracy By Class ===\n\n";
  out << pad_right("", 16) << "TP Rate  FP Rate  Precision  Recall   F-Measure  MCC      ROC Area  PRC Area  Class\n";
  for (int c : kDisplayOrder) {
    out << detail::class_row("", r.for_class(c)) << c << "\n";
  }
  out << detail::class_row("Weighted Avg.", r.weighted) << "\n";

  out << "\n=== Confusion Matrix ===\n\n";
  std::size_t width = std::max<std::size_t>(
      {std::to_string(r.matrix.counts[0][0]).size(), std::to_string(r.matrix.counts[0][1]).size(),
       std::to_string(r.matrix.counts[1][0]).size(), std::to_string(r.matrix.counts[1][1]).size(), 2});
  out << pad_left("a", width) << " " << pad_left("b", width) << "   <-- classified as\n";
  const char* names[2] = {"a", "b"};
  for (std::size_t row = 0; row < 2; ++row) {
    out << pad_left(std::to_string(r.matrix.counts[row][0]), width) << " "
        << pad_left(std::to_string(r.matrix.counts[row][1]), width) << " |   " << names[row]
        << " = " << kDisplayOrder[row] << "\n";
  }
  return out.str();
}

/// Machine-readable mirror of EvalReport.
inline nlohmann::json report_to_json(const EvalReport& r) {
  auto cls = [](const ClassMetrics& m) {
    return nlohmann::json{{"tp_rate", m.tp_rate},     {"fp_rate", m.fp_rate}, {"precision", m.precision},
                          {"recall", m.recall},       {"f_measure", m.f_measure}, {"mcc", m.mcc},
                          {"roc_area", m.roc_area},   {"prc_area", m.prc_area}};
  };
  nlohmann::json j;
  j["confusion_matrix"] = {{"classes", kDisplayOrder}, {"counts", r.matrix.counts}};
  j["total"] = r.matrix.total();
  j["correct"] = r.matrix.correct();
  j["accuracy"] = r.accuracy;
  j["kappa"] = r.kappa;
  j["mae"] = r.mae;
  j["rmse"] = r.rmse;
  j["rae_pct"] = r.rae_pct;
  j["rrse_pct"] = r.rrse_pct;
  j["per_class"] = {{"1", cls(r.for_class(1))}, {"0", cls(r.for_class(0))}};
  j["weighted"] = cls(r.weighted);
  j["undefined"] = r.undefined;
  return j;
}

}  // namespace irrigation::eval
