#pragma once

// Lloyd's k-means with k-means++ seeding.
//
// Points are rows of a row-major (n x dim) float matrix. Assignment ties go to
// the lowest centroid index. Iteration stops when no assignment changes or
// after max_iterations updates. A cluster that loses all its points is moved
// onto the point currently farthest from its own centroid.

#include <cstdint>
#include <limits>
#include <span>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "mtex/error.hpp"
#include "mtex/rng.hpp"

namespace mtex {

struct KMeansResult {
  std::size_t k = 0;
  std::size_t dim = 0;
  std::vector<double> centroids;          // k x dim, row-major
  std::vector<std::uint32_t> assignment;  // per point
  std::vector<double> inertia_history;    // after each assignment step
  std::size_t iterations = 0;

  double inertia() const noexcept { return inertia_history.empty() ? 0.0 : inertia_history.back(); }
  std::span<const double> centroid(std::size_t i) const noexcept { return {centroids.data() + i * dim, dim}; }
};

namespace detail {

inline double squared_distance(const float* p, const double* c, std::size_t dim) noexcept {
  double s = 0.0;
  for (std::size_t d = 0; d < dim; ++d) {
    const double diff = static_cast<double>(p[d]) - c[d];
    s += diff * diff;
  }
  return s;
}

inline bool has_k_distinct_rows(std::span<const float> points, std::size_t dim, std::size_t k) {
  std::unordered_set<std::string_view> seen;
  const std::size_t n = points.size() / dim;
  for (std::size_t i = 0; i < n && seen.size() < k; ++i) {
    seen.emplace(reinterpret_cast<const char*>(points.data() + i * dim), dim * sizeof(float));
  }
  return seen.size() >= k;
}

}  // namespace detail

/// Returns the index of the nearest centroid (lowest index on ties) and its squared distance.
inline std::pair<std::uint32_t, double> nearest_centroid(const float* point, std::span<const double> centroids,
                                                         std::size_t dim) noexcept {
  std::uint32_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  const std::size_t k = centroids.size() / dim;
  for (std::size_t c = 0; c < k; ++c) {
    const double d = detail::squared_distance(point, centroids.data() + c * dim, dim);
    if (d < best_d) {
      best_d = d;
      best = static_cast<std::uint32_t>(c);
    }
  }
  return {best, best_d};
}

inline KMeansResult kmeans(std::span<const float> points, std::size_t dim, std::size_t k, std::uint64_t seed,
                           std::size_t max_iterations = 300) {
  if (dim == 0 || points.size() % dim != 0) throw ArgumentError("kmeans: point buffer is not a multiple of dim");
  const std::size_t n = points.size() / dim;
  if (k == 0) throw ArgumentError("kmeans: k must be at least 1");
  if (n == 0 || !detail::has_k_distinct_rows(points, dim, k)) {
    throw ArgumentError("kmeans: k = " + std::to_string(k) + " exceeds the number of distinct points");
  }
  const float* pts = points.data();

  KMeansResult r;
  r.k = k;
  r.dim = dim;
  r.centroids.resize(k * dim);
  auto set_centroid = [&](std::size_t c, std::size_t point) {
    for (std::size_t d = 0; d < dim; ++d) r.centroids[c * dim + d] = pts[point * dim + d];
  };

  // k-means++ seeding
  Rng rng(seed);
  set_centroid(0, rng.uniform_index(n));
  std::vector<double> d2(n);
  for (std::size_t i = 0; i < n; ++i) d2[i] = detail::squared_distance(pts + i * dim, r.centroids.data(), dim);
  for (std::size_t c = 1; c < k; ++c) {
    double total = 0.0;
    for (double v : d2) total += v;
    const double target = rng.uniform01() * total;
    std::size_t pick = n;
    double cum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (d2[i] <= 0.0) continue;
      cum += d2[i];
      pick = i;
      if (cum > target) break;
    }
    set_centroid(c, pick);
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], detail::squared_distance(pts + i * dim, r.centroids.data() + c * dim, dim));
    }
  }

  // Lloyd iterations
  r.assignment.assign(n, std::numeric_limits<std::uint32_t>::max());
  std::vector<double> dist(n);
  std::vector<double> sums(k * dim);
  std::vector<std::size_t> counts(k);
  for (std::size_t iter = 0;; ++iter) {
    bool changed = false;
    double inertia = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto [c, d] = nearest_centroid(pts + i * dim, r.centroids, dim);
      changed |= c != r.assignment[i];
      r.assignment[i] = c;
      dist[i] = d;
      inertia += d;
    }
    r.inertia_history.push_back(inertia);
    r.iterations = iter;
    if (!changed || iter == max_iterations) break;

    std::fill(sums.begin(), sums.end(), 0.0);
    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t c = r.assignment[i];
      ++counts[c];
      for (std::size_t d = 0; d < dim; ++d) sums[c * dim + d] += pts[i * dim + d];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] > 0) {
        for (std::size_t d = 0; d < dim; ++d) r.centroids[c * dim + d] = sums[c * dim + d] / static_cast<double>(counts[c]);
        continue;
      }
      std::size_t far = 0;
      for (std::size_t i = 1; i < n; ++i) {
        if (dist[i] > dist[far]) far = i;
      }
      set_centroid(c, far);
      dist[far] = 0.0;
    }
  }
  return r;
}

}  // namespace mtex
