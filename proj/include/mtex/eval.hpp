#pragma once

// Repeated stratified k-fold cross-validation of the random forest, scored by
// macro-averaged F1 over pooled out-of-fold predictions.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "mtex/error.hpp"
#include "mtex/forest.hpp"
#include "mtex/matrix.hpp"
#include "mtex/parallel.hpp"
#include "mtex/rng.hpp"

namespace mtex {

struct Fold {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Splits indices into k folds, stratified by label.
///
/// Classes are visited in ascending label order; each class's indices (in
/// ascending index order) are shuffled with one shared Rng(seed) and dealt
/// round-robin into folds by a counter that carries over between classes, so
/// per-class and total fold sizes both differ by at most one.
inline std::vector<Fold> stratified_kfold(std::span<const int> labels, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw ArgumentError("stratified_kfold: k must be at least 2");
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
  for (const auto& [label, members] : by_class) {
    if (members.size() < k) {
      throw ArgumentError("stratified_kfold: class " + std::to_string(label) + " has " +
                          std::to_string(members.size()) + " members, fewer than k = " + std::to_string(k));
    }
  }
  Rng rng(seed);
  std::vector<std::size_t> fold_of(labels.size());
  std::size_t counter = 0;
  for (auto& [label, members] : by_class) {
    shuffle(members, rng);
    for (std::size_t i : members) fold_of[i] = counter++ % k;
  }
  std::vector<Fold> folds(k);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    for (std::size_t f = 0; f < k; ++f) (fold_of[i] == f ? folds[f].test : folds[f].train).push_back(i);
  }
  return folds;
}

/// Macro F1 over the classes present in y_true; a class with no true positives scores 0.
inline double f1_score(std::span<const int> y_true, std::span<const int> y_pred) {
  if (y_true.size() != y_pred.size()) throw ArgumentError("f1_score: length mismatch");
  if (y_true.empty()) throw ArgumentError("f1_score: empty input");
  struct Counts {
    std::size_t tp = 0, fp = 0, fn = 0;
  };
  std::map<int, Counts> per_class;
  for (int t : y_true) per_class[t];
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    if (y_true[i] == y_pred[i]) {
      ++per_class[y_true[i]].tp;
    } else {
      ++per_class[y_true[i]].fn;
      auto it = per_class.find(y_pred[i]);
      if (it != per_class.end()) ++it->second.fp;
    }
  }
  double sum = 0.0;
  for (const auto& [label, c] : per_class) {
    if (c.tp == 0) continue;
    const double p = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
    const double r = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
    sum += 2.0 * p * r / (p + r);
  }
  return sum / static_cast<double>(per_class.size());
}

struct CvConfig {
  std::size_t n_folds = 3;
  std::size_t n_trials = 10;
  std::uint64_t seed = 0;
  TrainConfig forest;  // forest.seed is ignored; each fit derives its own
  std::size_t jobs = 1;
};

struct EvalReport {
  std::string featurizer;
  std::string taps;
  std::vector<double> trial_f1;
  double mean_f1 = 0.0;
  double std_f1 = 0.0;  // population standard deviation over trials
};

inline void summarize(EvalReport& report) {
  const auto n = static_cast<double>(report.trial_f1.size());
  report.mean_f1 = std::accumulate(report.trial_f1.begin(), report.trial_f1.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : report.trial_f1) ss += (v - report.mean_f1) * (v - report.mean_f1);
  report.std_f1 = std::sqrt(ss / n);
}

/// Canonical sample order: stable sort by (label, feature row lexicographically).
inline std::vector<std::size_t> canonical_order(const Matrix& X, std::span<const int> y) {
  std::vector<std::size_t> order(y.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (y[a] != y[b]) return y[a] < y[b];
    const auto ra = X.row(a), rb = X.row(b);
    return std::lexicographical_compare(ra.begin(), ra.end(), rb.begin(), rb.end());
  });
  return order;
}

/// Runs n_trials rounds of stratified k-fold CV.
///
/// Samples are first put in canonical order, so scores do not depend on the
/// caller's row order. Trial t uses trial_seed = substream_seed(seed, t); its
/// fold split uses substream_seed(trial_seed, 0) and the forest of fold f uses
/// substream_seed(trial_seed, f + 1). Each trial's F1 is computed over the
/// pooled test predictions of all k folds.
inline EvalReport cross_validate(const Matrix& X_in, std::span<const int> y_in, const CvConfig& cv) {
  if (X_in.rows() != y_in.size()) throw ArgumentError("cross_validate: row/label count mismatch");
  if (cv.n_trials == 0) throw ArgumentError("cross_validate: n_trials must be at least 1");
  const auto order = canonical_order(X_in, y_in);
  const Matrix X = X_in.select_rows(order);
  std::vector<int> y(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) y[i] = y_in[order[i]];

  std::vector<std::vector<Fold>> splits(cv.n_trials);
  for (std::size_t t = 0; t < cv.n_trials; ++t) {
    splits[t] = stratified_kfold(y, cv.n_folds, substream_seed(substream_seed(cv.seed, t), 0));
  }

  std::vector<std::vector<int>> predictions(cv.n_trials, std::vector<int>(y.size()));
  parallel_for(cv.n_trials * cv.n_folds, cv.jobs, [&](std::size_t task) {
    const std::size_t t = task / cv.n_folds, f = task % cv.n_folds;
    const Fold& fold = splits[t][f];
    std::vector<int> y_train(fold.train.size());
    for (std::size_t i = 0; i < fold.train.size(); ++i) y_train[i] = y[fold.train[i]];
    TrainConfig fc = cv.forest;
    fc.seed = substream_seed(substream_seed(cv.seed, t), f + 1);
    fc.jobs = 1;
    const auto forest = RandomForest::fit(X.select_rows(fold.train), y_train, fc);
    for (std::size_t i : fold.test) predictions[t][i] = forest.predict(X.row(i));
  });

  EvalReport report;
  for (std::size_t t = 0; t < cv.n_trials; ++t) report.trial_f1.push_back(f1_score(y, predictions[t]));
  summarize(report);
  return report;
}

/// Shortest decimal string that round-trips the double.
inline std::string format_number(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  (void)ec;
  return std::string(buf, end);
}

inline void write_report_header(std::ostream& os) { os << "featurizer,taps,trial,f1,f1_std\n"; }

/// One row per trial, then a "summary" row carrying mean F1 and its standard deviation.
inline void write_report_rows(std::ostream& os, const EvalReport& r) {
  for (std::size_t t = 0; t < r.trial_f1.size(); ++t) {
    os << r.featurizer << ',' << r.taps << ',' << t << ',' << format_number(r.trial_f1[t]) << ",\n";
  }
  os << r.featurizer << ',' << r.taps << ",summary," << format_number(r.mean_f1) << ',' << format_number(r.std_f1)
     << '\n';
}

}  // namespace mtex
