#pragma once

// Random forest classifier: bootstrap samples, Gini splits over a random
// feature subset per node, majority vote, mean-decrease-in-impurity
// importances.
//
// Reproducibility contract (tree t uses Rng::substream(seed, t)):
//   1. bootstrap: n draws of uniform_index(n), in order
//   2. nodes are grown depth-first, left child before right
//   3. at each node features are drawn without replacement by a Fisher-Yates
//      walk over a per-tree feature permutation (position i swaps with
//      i + uniform_index(F - i)); features that are constant within the node
//      do not count toward features_per_split; the walk stops after
//      features_per_split non-constant features or when features run out
//   4. best split maximizes Gini gain; ties go to the lower feature index,
//      then to the lower threshold. Thresholds are midpoints between
//      consecutive distinct values; samples with x <= threshold go left.

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "mtex/error.hpp"
#include "mtex/matrix.hpp"
#include "mtex/parallel.hpp"
#include "mtex/rng.hpp"

namespace mtex {

struct TrainConfig {
  std::size_t n_trees = 400;
  std::size_t features_per_split = 0;  // 0 selects ceil(sqrt(n_features))
  std::size_t max_depth = 0;           // 0 is unlimited
  std::size_t min_samples_split = 2;
  bool bootstrap = true;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;  // parallelism only; results do not depend on it

  std::size_t resolved_features_per_split(std::size_t n_features) const {
    if (features_per_split == 0) {
      return std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(n_features)))));
    }
    if (features_per_split > n_features) {
      throw ArgumentError("features_per_split " + std::to_string(features_per_split) + " exceeds feature count " +
                          std::to_string(n_features));
    }
    return features_per_split;
  }
};

struct TreeNode {
  std::int32_t feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  std::uint32_t left = 0;
  std::uint32_t right = 0;
  std::uint32_t n_samples = 0;
  double impurity = 0.0;            // Gini impurity of the node
  double impurity_decrease = 0.0;   // n_t * gini_t - n_l * gini_l - n_r * gini_r (unnormalized)
  std::vector<std::uint32_t> class_counts;

  bool is_leaf() const noexcept { return feature < 0; }
};

/// Index of the largest count; lowest index wins ties.
inline std::uint32_t argmax_count(std::span<const std::uint32_t> counts) noexcept {
  std::uint32_t best = 0;
  for (std::uint32_t c = 1; c < counts.size(); ++c) {
    if (counts[c] > counts[best]) best = c;
  }
  return best;
}

class DecisionTree {
 public:
  std::vector<TreeNode> nodes;
  std::uint32_t n_train = 0;  // bootstrap sample size (node weights are relative to it)

  std::uint32_t predict_class(std::span<const float> x) const {
    std::uint32_t i = 0;
    while (!nodes[i].is_leaf()) {
      const auto& n = nodes[i];
      i = static_cast<double>(x[static_cast<std::size_t>(n.feature)]) <= n.threshold ? n.left : n.right;
    }
    return argmax_count(nodes[i].class_counts);
  }

  /// Accumulates n_t / N * (impurity decrease) per split feature into `out`.
  void add_importances(std::span<double> out) const {
    for (const auto& n : nodes) {
      if (!n.is_leaf()) out[static_cast<std::size_t>(n.feature)] += n.impurity_decrease / n_train;
    }
  }
};

namespace detail {

inline double gini(std::span<const std::uint32_t> counts, double n) noexcept {
  if (n <= 0) return 0.0;
  double s = 0.0;
  for (auto c : counts) s += static_cast<double>(c) * c;
  return 1.0 - s / (n * n);
}

class TreeBuilder {
 public:
  TreeBuilder(const Matrix& X, std::span<const std::uint32_t> y, std::size_t n_classes, const TrainConfig& cfg,
              std::size_t mtry, Rng rng)
      : X_(X), y_(y), n_classes_(n_classes), cfg_(cfg), mtry_(mtry), rng_(rng) {
    features_.resize(X.cols());
    std::iota(features_.begin(), features_.end(), 0);
  }

  DecisionTree build() {
    const std::size_t n = X_.rows();
    std::vector<std::uint32_t> samples(n);
    if (cfg_.bootstrap) {
      for (auto& s : samples) s = static_cast<std::uint32_t>(rng_.uniform_index(n));
    } else {
      std::iota(samples.begin(), samples.end(), 0);
    }
    DecisionTree tree;
    tree.n_train = static_cast<std::uint32_t>(n);

    struct Work {
      std::uint32_t node;
      std::size_t begin, end, depth;
    };
    tree.nodes.emplace_back();
    std::vector<Work> stack{{0, 0, n, 0}};
    while (!stack.empty()) {
      const Work w = stack.back();
      stack.pop_back();
      std::span<std::uint32_t> idx(samples.data() + w.begin, w.end - w.begin);

      TreeNode node;
      node.n_samples = static_cast<std::uint32_t>(idx.size());
      node.class_counts.assign(n_classes_, 0);
      for (auto s : idx) ++node.class_counts[y_[s]];
      node.impurity = gini(node.class_counts, static_cast<double>(idx.size()));

      const bool pure = std::count_if(node.class_counts.begin(), node.class_counts.end(),
                                      [](std::uint32_t c) { return c > 0; }) <= 1;
      const bool depth_cap = cfg_.max_depth != 0 && w.depth >= cfg_.max_depth;
      Split split;
      if (!pure && !depth_cap && idx.size() >= cfg_.min_samples_split) split = find_split(idx);

      if (split.feature < 0) {
        tree.nodes[w.node] = std::move(node);
        continue;
      }
      // Partition: x <= threshold first. Stable so child sample order is deterministic.
      const auto f = static_cast<std::size_t>(split.feature);
      auto mid = std::stable_partition(idx.begin(), idx.end(), [&](std::uint32_t s) {
        return static_cast<double>(X_(s, f)) <= split.threshold;
      });
      const std::size_t n_left = static_cast<std::size_t>(mid - idx.begin());

      std::vector<std::uint32_t> lc(n_classes_, 0), rc(n_classes_, 0);
      for (std::size_t i = 0; i < idx.size(); ++i) ++(i < n_left ? lc : rc)[y_[idx[i]]];
      const double nl = static_cast<double>(n_left);
      const double nr = static_cast<double>(idx.size() - n_left);
      node.feature = split.feature;
      node.threshold = split.threshold;
      node.impurity_decrease =
          std::max(0.0, static_cast<double>(idx.size()) * node.impurity - nl * gini(lc, nl) - nr * gini(rc, nr));
      node.left = static_cast<std::uint32_t>(tree.nodes.size());
      node.right = node.left + 1;
      tree.nodes.emplace_back();
      tree.nodes.emplace_back();
      const std::uint32_t left = node.left, right = node.right;
      tree.nodes[w.node] = std::move(node);
      // Right pushed first so the left subtree is grown (and draws randomness) first.
      stack.push_back({right, w.begin + n_left, w.end, w.depth + 1});
      stack.push_back({left, w.begin, w.begin + n_left, w.depth + 1});
    }
    return tree;
  }

 private:
  struct Split {
    std::int32_t feature = -1;
    double threshold = 0.0;
    double score = -1.0;  // sum_c L_c^2 / n_L + sum_c R_c^2 / n_R, larger is better
  };

  Split find_split(std::span<const std::uint32_t> idx) {
    Split best;
    const std::size_t n_features = features_.size();
    std::size_t evaluated = 0;
    std::vector<std::pair<float, std::uint32_t>> column(idx.size());
    std::vector<std::uint32_t> left(n_classes_), right(n_classes_);
    for (std::size_t i = 0; i < n_features && evaluated < mtry_; ++i) {
      const std::size_t j = i + rng_.uniform_index(n_features - i);
      std::swap(features_[i], features_[j]);
      const std::size_t f = features_[i];

      for (std::size_t k = 0; k < idx.size(); ++k) column[k] = {X_(idx[k], f), y_[idx[k]]};
      std::sort(column.begin(), column.end());
      if (column.front().first == column.back().first) continue;
      ++evaluated;

      std::fill(left.begin(), left.end(), 0);
      std::fill(right.begin(), right.end(), 0);
      for (const auto& [v, c] : column) ++right[c];
      // Running sums of squared class counts on each side.
      double sq_left = 0.0, sq_right = 0.0;
      for (auto c : right) sq_right += static_cast<double>(c) * c;
      const std::size_t n = column.size();
      for (std::size_t k = 0; k + 1 < n; ++k) {
        const std::uint32_t c = column[k].second;
        sq_left += 2.0 * left[c] + 1.0;
        sq_right -= 2.0 * right[c] - 1.0;
        ++left[c];
        --right[c];
        if (column[k].first == column[k + 1].first) continue;
        const double nl = static_cast<double>(k + 1);
        const double score = sq_left / nl + sq_right / static_cast<double>(n - k - 1);
        const double threshold = 0.5 * (static_cast<double>(column[k].first) + static_cast<double>(column[k + 1].first));
        const auto fi = static_cast<std::int32_t>(f);
        if (score > best.score ||
            (score == best.score && (fi < best.feature || (fi == best.feature && threshold < best.threshold)))) {
          best = {fi, threshold, score};
        }
      }
    }
    return best;
  }

  const Matrix& X_;
  std::span<const std::uint32_t> y_;
  std::size_t n_classes_;
  const TrainConfig& cfg_;
  std::size_t mtry_;
  Rng rng_;
  std::vector<std::size_t> features_;
};

}  // namespace detail

class RandomForest {
 public:
  RandomForest() = default;

  static RandomForest fit(const Matrix& X, std::span<const int> labels, const TrainConfig& config) {
    if (X.rows() == 0 || X.cols() == 0) throw ArgumentError("fit: empty feature matrix");
    if (labels.size() != X.rows()) {
      throw ArgumentError("fit: " + std::to_string(X.rows()) + " rows but " + std::to_string(labels.size()) + " labels");
    }
    if (config.n_trees == 0) throw ArgumentError("fit: n_trees must be at least 1");
    if (config.min_samples_split < 2) throw ArgumentError("fit: min_samples_split must be at least 2");
    for (float v : X.values()) {
      if (!std::isfinite(v)) throw DataError("fit: feature matrix contains non-finite values");
    }

    RandomForest rf;
    rf.n_features_ = X.cols();
    rf.classes_.assign(labels.begin(), labels.end());
    std::sort(rf.classes_.begin(), rf.classes_.end());
    rf.classes_.erase(std::unique(rf.classes_.begin(), rf.classes_.end()), rf.classes_.end());
    std::vector<std::uint32_t> y(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) y[i] = rf.class_index(labels[i]);

    const std::size_t mtry = config.resolved_features_per_split(X.cols());
    rf.trees_.resize(config.n_trees);
    parallel_for(config.n_trees, config.jobs, [&](std::size_t t) {
      rf.trees_[t] = detail::TreeBuilder(X, y, rf.classes_.size(), config, mtry, Rng::substream(config.seed, t)).build();
    });
    rf.compute_importances();
    return rf;
  }

  int predict(std::span<const float> x) const {
    if (x.size() != n_features_) {
      throw ArgumentError("predict: feature vector has " + std::to_string(x.size()) + " values, forest expects " +
                          std::to_string(n_features_));
    }
    std::vector<std::uint32_t> votes(classes_.size(), 0);
    for (const auto& t : trees_) ++votes[t.predict_class(x)];
    return classes_[argmax_count(votes)];
  }

  std::vector<int> predict_batch(const Matrix& X) const {
    std::vector<int> out(X.rows());
    for (std::size_t i = 0; i < X.rows(); ++i) out[i] = predict(X.row(i));
    return out;
  }

  /// Normalized mean decrease in impurity; all zeros when no split reduced impurity.
  const std::vector<double>& feature_importances() const noexcept { return importances_; }
  const std::vector<int>& classes() const noexcept { return classes_; }
  const std::vector<DecisionTree>& trees() const noexcept { return trees_; }
  std::size_t n_features() const noexcept { return n_features_; }

  // Assembles a forest from explicit trees (deserialization, hand-built test forests).
  static RandomForest from_parts(std::vector<int> classes, std::size_t n_features, std::vector<DecisionTree> trees) {
    RandomForest rf;
    rf.classes_ = std::move(classes);
    rf.n_features_ = n_features;
    rf.trees_ = std::move(trees);
    for (const auto& t : rf.trees_) {
      if (t.nodes.empty()) throw ArgumentError("forest: tree without nodes");
      for (const auto& n : t.nodes) {
        if (n.is_leaf() ? n.class_counts.size() != rf.classes_.size()
                        : (static_cast<std::size_t>(n.feature) >= n_features || n.left >= t.nodes.size() ||
                           n.right >= t.nodes.size() || !std::isfinite(n.threshold))) {
          throw ArgumentError("forest: malformed tree node");
        }
      }
    }
    rf.compute_importances();
    return rf;
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["format"] = "mtex-forest-1";
    j["classes"] = classes_;
    j["n_features"] = n_features_;
    auto& trees = j["trees"] = nlohmann::json::array();
    for (const auto& t : trees_) {
      nlohmann::json tj;
      tj["n_train"] = t.n_train;
      auto& nodes = tj["nodes"] = nlohmann::json::array();
      for (const auto& n : t.nodes) {
        nodes.push_back({{"f", n.feature}, {"t", n.threshold}, {"l", n.left}, {"r", n.right},
                         {"n", n.n_samples}, {"g", n.impurity}, {"d", n.impurity_decrease},
                         {"c", n.class_counts}});
      }
      trees.push_back(std::move(tj));
    }
    return j;
  }

  static RandomForest from_json(const nlohmann::json& j) {
    try {
      if (j.at("format") != "mtex-forest-1") throw FormatError("unknown forest dump format");
      std::vector<DecisionTree> trees;
      for (const auto& tj : j.at("trees")) {
        DecisionTree t;
        t.n_train = tj.at("n_train").get<std::uint32_t>();
        for (const auto& nj : tj.at("nodes")) {
          TreeNode n;
          n.feature = nj.at("f").get<std::int32_t>();
          n.threshold = nj.at("t").get<double>();
          n.left = nj.at("l").get<std::uint32_t>();
          n.right = nj.at("r").get<std::uint32_t>();
          n.n_samples = nj.at("n").get<std::uint32_t>();
          n.impurity = nj.at("g").get<double>();
          n.impurity_decrease = nj.at("d").get<double>();
          n.class_counts = nj.at("c").get<std::vector<std::uint32_t>>();
          t.nodes.push_back(std::move(n));
        }
        trees.push_back(std::move(t));
      }
      return from_parts(j.at("classes").get<std::vector<int>>(), j.at("n_features").get<std::size_t>(),
                        std::move(trees));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(std::string("malformed forest dump: ") + e.what());
    }
  }

 private:
  std::uint32_t class_index(int label) const {
    auto it = std::lower_bound(classes_.begin(), classes_.end(), label);
    return static_cast<std::uint32_t>(it - classes_.begin());
  }

  void compute_importances() {
    importances_.assign(n_features_, 0.0);
    for (const auto& t : trees_) {
      if (t.n_train > 0) t.add_importances(importances_);
    }
    double total = 0.0;
    for (double& v : importances_) {
      v /= static_cast<double>(std::max<std::size_t>(1, trees_.size()));
      total += v;
    }
    if (total > 0.0) {
      for (double& v : importances_) v /= total;
    }
  }

  std::vector<int> classes_;
  std::size_t n_features_ = 0;
  std::vector<DecisionTree> trees_;
  std::vector<double> importances_;
};

}  // namespace mtex
