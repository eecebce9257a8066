#include <gtest/gtest.h>

#include <random>
#include <set>
#include <sstream>

#include "mtex/eval.hpp"

using mtex::CvConfig;
using mtex::Matrix;

namespace {

void check_partition(const std::vector<mtex::Fold>& folds, std::size_t n) {
  std::multiset<std::size_t> all;
  for (const auto& f : folds) {
    all.insert(f.test.begin(), f.test.end());
    std::set<std::size_t> tr(f.train.begin(), f.train.end()), te(f.test.begin(), f.test.end());
    EXPECT_EQ(tr.size() + te.size(), n);
    for (auto i : te) EXPECT_FALSE(tr.contains(i));
  }
  ASSERT_EQ(all.size(), n);
  std::size_t expect = 0;
  for (auto i : all) EXPECT_EQ(i, expect++);
}

}  // namespace

TEST(StratifiedKFold, OneOfEachClassPerFold) {
  const std::vector<int> y{0, 1, 0, 1, 0, 1};
  const auto folds = mtex::stratified_kfold(y, 3, 5);
  check_partition(folds, 6);
  for (const auto& f : folds) {
    ASSERT_EQ(f.test.size(), 2u);
    EXPECT_NE(y[f.test[0]], y[f.test[1]]);
  }
}

TEST(StratifiedKFold, TwoToOneRatio) {
  std::vector<int> y(30);
  for (std::size_t i = 0; i < 30; ++i) y[i] = i % 3 == 0 ? 1 : 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto folds = mtex::stratified_kfold(y, 3, seed);
    check_partition(folds, 30);
    for (const auto& f : folds) {
      EXPECT_EQ(f.test.size(), 10u);
      const auto ones = std::count_if(f.test.begin(), f.test.end(), [&](std::size_t i) { return y[i] == 1; });
      EXPECT_TRUE(ones == 3 || ones == 4) << ones;
    }
  }
}

TEST(StratifiedKFold, UnevenClassesStayBalanced) {
  std::vector<int> y;
  for (int c = 0; c < 4; ++c)
    for (int i = 0; i < 5 + 3 * c; ++i) y.push_back(c);
  const auto folds = mtex::stratified_kfold(y, 4, 1);
  check_partition(folds, y.size());
  std::size_t lo = 1000, hi = 0;
  for (const auto& f : folds) {
    lo = std::min(lo, f.test.size());
    hi = std::max(hi, f.test.size());
    for (int c = 0; c < 4; ++c) {
      const auto n = std::count_if(f.test.begin(), f.test.end(), [&](std::size_t i) { return y[i] == c; });
      const double share = (5 + 3 * c) / 4.0;
      EXPECT_LE(std::abs(n - share), 1.0);
    }
  }
  EXPECT_LE(hi - lo, 1u);
}

TEST(StratifiedKFold, SeededShuffle) {
  std::vector<int> y(60);
  for (std::size_t i = 0; i < 60; ++i) y[i] = static_cast<int>(i % 4);
  const auto a = mtex::stratified_kfold(y, 3, 1);
  const auto b = mtex::stratified_kfold(y, 3, 1);
  const auto c = mtex::stratified_kfold(y, 3, 2);
  EXPECT_EQ(a[0].test, b[0].test);
  EXPECT_NE(a[0].test, c[0].test);
}

TEST(StratifiedKFold, Errors) {
  EXPECT_THROW(mtex::stratified_kfold(std::vector<int>{0, 0, 1, 1, 1}, 3, 0), mtex::ArgumentError);
  EXPECT_THROW(mtex::stratified_kfold(std::vector<int>{0, 0, 1, 1}, 1, 0), mtex::ArgumentError);
}

TEST(F1, Endpoints) {
  const std::vector<int> y{0, 1, 2, 2, 1, 0, 3};
  EXPECT_EQ(mtex::f1_score(y, y), 1.0);
  const std::vector<int> wrong{1, 2, 0, 0, 2, 1, 0};
  EXPECT_EQ(mtex::f1_score(y, wrong), 0.0);
}

TEST(F1, HandConfusionMatrix) {
  EXPECT_DOUBLE_EQ(mtex::f1_score(std::vector<int>{0, 0, 1, 1}, std::vector<int>{0, 1, 0, 1}), 0.5);
  // class 0: tp 2 fp 1 fn 0 -> 0.8; class 1: tp 1 fp 0 fn 1 -> 2/3
  EXPECT_DOUBLE_EQ(mtex::f1_score(std::vector<int>{0, 0, 1, 1}, std::vector<int>{0, 0, 0, 1}), (0.8 + 2.0 / 3.0) / 2);
}

TEST(F1, PredictedOnlyClassesCountAsFalsePositivesElsewhereNot) {
  // class 9 never appears in y_true, so the mean runs over {0, 1} only
  EXPECT_DOUBLE_EQ(mtex::f1_score(std::vector<int>{0, 1}, std::vector<int>{0, 9}), 0.5);
}

TEST(F1, InvariantUnderRelabeling) {
  std::mt19937_64 gen(1);
  std::uniform_int_distribution<int> d(0, 3);
  const std::map<int, int> bij{{0, 40}, {1, -3}, {2, 7}, {3, 1}};
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<int> t(25), p(25), tr(25), pr(25);
    for (std::size_t i = 0; i < 25; ++i) {
      t[i] = d(gen);
      p[i] = d(gen);
      tr[i] = bij.at(t[i]);
      pr[i] = bij.at(p[i]);
    }
    EXPECT_DOUBLE_EQ(mtex::f1_score(t, p), mtex::f1_score(tr, pr));
  }
}

TEST(F1, Errors) {
  EXPECT_THROW(mtex::f1_score(std::vector<int>{0}, std::vector<int>{0, 1}), mtex::ArgumentError);
  EXPECT_THROW(mtex::f1_score(std::vector<int>{}, std::vector<int>{}), mtex::ArgumentError);
}

TEST(CrossValidate, SeparableGivesPerfectScore) {
  Matrix X(30, 2);
  std::vector<int> y(30);
  for (std::size_t i = 0; i < 30; ++i) {
    y[i] = static_cast<int>(i % 3);
    X(i, 0) = static_cast<float>(y[i] * 10 + i % 4);
    X(i, 1) = static_cast<float>(i);
  }
  CvConfig cv;
  cv.forest.n_trees = 20;
  cv.seed = 4;
  const auto r = mtex::cross_validate(X, y, cv);
  ASSERT_EQ(r.trial_f1.size(), 10u);
  EXPECT_EQ(r.mean_f1, 1.0);
  EXPECT_EQ(r.std_f1, 0.0);
}

TEST(CrossValidate, ShuffledLabelsAreNearChance) {
  std::mt19937_64 gen(5);
  std::uniform_real_distribution<double> u(0, 1);
  Matrix X(60, 4);
  std::vector<int> y(60);
  for (std::size_t i = 0; i < 60; ++i) {
    y[i] = static_cast<int>(i % 2);
    for (std::size_t j = 0; j < 4; ++j) X(i, j) = static_cast<float>(u(gen));
  }
  CvConfig cv;
  cv.forest.n_trees = 50;
  const auto r = mtex::cross_validate(X, y, cv);
  EXPECT_GE(r.mean_f1, 0.3);
  EXPECT_LE(r.mean_f1, 0.7);
}

TEST(CrossValidate, DeterministicOrderInvariantAndJobsIndependent) {
  std::mt19937_64 gen(6);
  std::normal_distribution<double> d(0, 1);
  Matrix X(45, 3);
  std::vector<int> y(45);
  for (std::size_t i = 0; i < 45; ++i) {
    y[i] = static_cast<int>(i % 3);
    for (std::size_t j = 0; j < 3; ++j) X(i, j) = static_cast<float>(d(gen) + (j == 0 ? y[i] : 0));
  }
  CvConfig cv;
  cv.n_trials = 4;
  cv.forest.n_trees = 25;
  cv.seed = 9;
  const auto a = mtex::cross_validate(X, y, cv);
  const auto b = mtex::cross_validate(X, y, cv);
  EXPECT_EQ(a.trial_f1, b.trial_f1);

  std::vector<std::size_t> perm(45);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), gen);
  std::vector<int> yp(45);
  for (std::size_t i = 0; i < 45; ++i) yp[i] = y[perm[i]];
  EXPECT_EQ(mtex::cross_validate(X.select_rows(perm), yp, cv).trial_f1, a.trial_f1);

  cv.jobs = 3;
  EXPECT_EQ(mtex::cross_validate(X, y, cv).trial_f1, a.trial_f1);
}

TEST(CrossValidate, SummaryMatchesTrials) {
  mtex::EvalReport r;
  r.trial_f1 = {0.5, 0.75, 1.0, 0.25};
  mtex::summarize(r);
  EXPECT_NEAR(r.mean_f1, 0.625, 1e-12);
  EXPECT_NEAR(r.std_f1, std::sqrt(0.078125), 1e-12);
}

TEST(Report, CsvRows) {
  mtex::EvalReport r{"mean", "C22", {0.5, 1.0}, 0.75, 0.25};
  std::ostringstream os;
  mtex::write_report_header(os);
  mtex::write_report_rows(os, r);
  EXPECT_EQ(os.str(),
            "featurizer,taps,trial,f1,f1_std\n"
            "mean,C22,0,0.5,\n"
            "mean,C22,1,1,\n"
            "mean,C22,summary,0.75,0.25\n");
  EXPECT_EQ(mtex::format_number(0.1), "0.1");
  EXPECT_EQ(std::stod(mtex::format_number(2.0 / 3.0)), 2.0 / 3.0);
}
