#pragma once

// Classification metrics: confusion matrix, per-class and macro-averaged
// precision/recall/F1, accuracy and the micro-averaged ROC-AUC over pooled
// (score, one-vs-rest label) pairs.

#include <algorithm>
#include <array>
#include <cstdint>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "amplinet/errors.hpp"
#include "amplinet/signal_io.hpp"
#include "amplinet/tensor.hpp"

namespace amplinet {

/// Index of the largest entry; ties go to the lowest index.
[[nodiscard]] inline std::size_t argmax(const Vector<double>& v) {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i) {
    if (v(i) > v(best)) best = i;
  }
  return static_cast<std::size_t>(best);
}

/// Mann-Whitney AUC of binary-labelled scores with ties counted half.
/// Returns 0.5 and sets `degenerate` when one of the two classes is empty.
[[nodiscard]] inline double binary_auc(std::span<const double> scores, std::span<const std::uint8_t> positive,
                                       bool* degenerate = nullptr) {
  if (scores.size() != positive.size()) throw ShapeError("auc: scores/labels length mismatch");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Sum of (1-based) ranks of the positives; tied groups share their mean rank.
  double rank_sum = 0.0;
  std::uint64_t n_pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double mean_rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (positive[order[k]]) {
        rank_sum += mean_rank;
        ++n_pos;
      }
    }
    i = j;
  }
  const std::uint64_t n_neg = n - n_pos;
  if (degenerate) *degenerate = n_pos == 0 || n_neg == 0;
  if (n_pos == 0 || n_neg == 0) return 0.5;
  const double u = rank_sum - 0.5 * static_cast<double>(n_pos) * static_cast<double>(n_pos + 1);
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

/// Micro-averaged AUC: every (sample, class) score is pooled with label
/// [class == true label]. `scores` is n x M.
[[nodiscard]] inline double micro_auc(const RowMatrix<double>& scores, std::span<const std::size_t> labels,
                                      bool* degenerate = nullptr) {
  if (static_cast<std::size_t>(scores.rows()) != labels.size()) throw ShapeError("micro_auc: row/label count mismatch");
  if (labels.empty()) throw UsageError("micro_auc: no samples");
  const auto m = static_cast<std::size_t>(scores.cols());
  std::vector<double> pooled;
  std::vector<std::uint8_t> pos;
  pooled.reserve(labels.size() * m);
  pos.reserve(labels.size() * m);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    for (std::size_t c = 0; c < m; ++c) {
      pooled.push_back(scores(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)));
      pos.push_back(labels[i] == c ? 1 : 0);
    }
  }
  bool degen = false;
  const double auc = binary_auc(pooled, pos, &degen);
  if (degen) std::clog << "warning: micro_auc undefined (single-class pool); reporting 0.5\n";
  if (degenerate) *degenerate = degen;
  return auc;
}

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::uint64_t support = 0;  // true members
  bool undefined = false;     // some ratio was 0/0 and reported as 0
};

struct EvalReport {
  std::array<std::array<std::uint64_t, kNumClasses>, kNumClasses> confusion{};  // [true][predicted]
  std::array<ClassMetrics, kNumClasses> per_class{};
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double macro_f1 = 0.0;
  double accuracy = 0.0;
  double micro_auc = 0.5;
  bool auc_degenerate = false;
  std::uint64_t n_samples = 0;

  /// Fixed key order: header scalars, per-class rows (Table-style), confusion rows.
  [[nodiscard]] std::string to_text() const {
    std::ostringstream os;
    os << std::setprecision(6) << std::fixed;
    os << "n_samples\t" << n_samples << '\n';
    os << "accuracy\t" << accuracy << '\n';
    os << "macro_precision\t" << macro_precision << '\n';
    os << "macro_recall\t" << macro_recall << '\n';
    os << "macro_f1\t" << macro_f1 << '\n';
    os << "micro_auc\t" << micro_auc << (auc_degenerate ? "\t(undefined: single-class pool)" : "") << '\n';
    os << "class\tprecision\trecall\tf1\tsupport\n";
    for (std::size_t c = 0; c < kNumClasses; ++c) {
      const auto& m = per_class[c];
      os << kClassNames[c] << '\t' << m.precision << '\t' << m.recall << '\t' << m.f1 << '\t' << m.support
         << (m.undefined ? "\t(0/0 reported as 0)" : "") << '\n';
    }
    os << "confusion";
    for (const auto& name : kClassNames) os << '\t' << name;
    os << '\n';
    for (std::size_t t = 0; t < kNumClasses; ++t) {
      os << kClassNames[t];
      for (std::size_t p = 0; p < kNumClasses; ++p) os << '\t' << confusion[t][p];
      os << '\n';
    }
    return os.str();
  }
};

namespace detail {
inline double safe_ratio(double num, double den, bool& undefined) {
  if (den == 0.0) {
    undefined = true;
    return 0.0;
  }
  return num / den;
}
}  // namespace detail

/// Fills per-class and averaged metrics from `confusion`.
inline void finalize_report(EvalReport& r) {
  r.n_samples = 0;
  std::uint64_t correct = 0;
  for (std::size_t t = 0; t < kNumClasses; ++t) {
    for (std::size_t p = 0; p < kNumClasses; ++p) r.n_samples += r.confusion[t][p];
    correct += r.confusion[t][t];
  }
  r.macro_precision = r.macro_recall = r.macro_f1 = 0.0;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    std::uint64_t tp = r.confusion[c][c];
    std::uint64_t fp = 0;
    std::uint64_t fn = 0;
    for (std::size_t o = 0; o < kNumClasses; ++o) {
      if (o == c) continue;
      fp += r.confusion[o][c];
      fn += r.confusion[c][o];
    }
    ClassMetrics m;
    m.support = tp + fn;
    m.precision = detail::safe_ratio(double(tp), double(tp + fp), m.undefined);
    m.recall = detail::safe_ratio(double(tp), double(tp + fn), m.undefined);
    m.f1 = detail::safe_ratio(2.0 * m.precision * m.recall, m.precision + m.recall, m.undefined);
    r.per_class[c] = m;
    r.macro_precision += m.precision;
    r.macro_recall += m.recall;
    r.macro_f1 += m.f1;
  }
  r.macro_precision /= double(kNumClasses);
  r.macro_recall /= double(kNumClasses);
  r.macro_f1 /= double(kNumClasses);
  r.accuracy = r.n_samples == 0 ? 0.0 : double(correct) / double(r.n_samples);
}

/// Report from true labels and n x 9 probability rows.
[[nodiscard]] inline EvalReport make_report(std::span<const std::size_t> labels, const RowMatrix<double>& probs) {
  if (probs.cols() != static_cast<Eigen::Index>(kNumClasses)) throw ShapeError("report: expected 9 score columns");
  if (static_cast<std::size_t>(probs.rows()) != labels.size()) throw ShapeError("report: row/label count mismatch");
  EvalReport r;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= kNumClasses) throw UsageError("report: label out of range");
    const Vector<double> row = probs.row(static_cast<Eigen::Index>(i)).transpose();
    r.confusion[labels[i]][argmax(row)] += 1;
  }
  finalize_report(r);
  if (!labels.empty()) r.micro_auc = micro_auc(probs, labels, &r.auc_degenerate);
  return r;
}

}  // namespace amplinet
