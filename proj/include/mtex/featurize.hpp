#pragma once

// Translation-invariant texture descriptors over a tapped feature map F(i, j),
// i = filter, j = flattened spatial location:
//
//   mean  mean_j F(i, j)                     N_filters values
//   max   max_j  F(i, j)                     N_filters values
//   gram  G(i, k) = sum_j F(i, j) F(k, j)    N_filters^2 values, row-major
//
// VLAD lives in vlad.hpp. Every element carries a provenance label so the
// importance and visualization stages can map it back to a filter.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "mtex/cnn.hpp"
#include "mtex/error.hpp"
#include "mtex/tensor.hpp"

namespace mtex {

enum class Featurizer { Mean, Max, Gram, Vlad };

constexpr std::string_view featurizer_name(Featurizer f) noexcept {
  switch (f) {
    case Featurizer::Mean: return "mean";
    case Featurizer::Max: return "max";
    case Featurizer::Gram: return "gram";
    case Featurizer::Vlad: return "vlad";
  }
  return "?";
}

inline std::optional<Featurizer> parse_featurizer(std::string_view s) {
  for (auto f : {Featurizer::Mean, Featurizer::Max, Featurizer::Gram, Featurizer::Vlad}) {
    if (featurizer_name(f) == s) return f;
  }
  return std::nullopt;
}

/// Name of the layer a map came from: a tap name, or "raw" for the untransformed image.
inline constexpr std::string_view kRawLayer = "raw";

/// Sort key placing "raw" before C12..C53.
inline int layer_rank(std::string_view layer) {
  if (layer == kRawLayer) return -1;
  if (auto t = parse_tap(layer)) return static_cast<int>(tap_stack(*t));
  throw ArgumentError("unknown layer name " + std::string(layer));
}

/// Provenance of one feature element.
///   mean/max: first = filter
///   gram:     first = i, second = j
///   vlad:     first = word, second = filter
struct FeatureLabel {
  Featurizer kind = Featurizer::Mean;
  std::string layer;
  std::uint32_t first = 0;
  std::uint32_t second = 0;

  std::uint32_t filter() const noexcept { return kind == Featurizer::Vlad ? second : first; }

  std::string str() const {
    char buf[64];
    switch (kind) {
      case Featurizer::Mean:
      case Featurizer::Max:
        std::snprintf(buf, sizeof buf, "f%03u", first);
        break;
      case Featurizer::Gram:
        std::snprintf(buf, sizeof buf, "i%03u_j%03u", first, second);
        break;
      case Featurizer::Vlad:
        std::snprintf(buf, sizeof buf, "w%02u_f%03u", first, second);
        break;
    }
    return std::string(featurizer_name(kind)) + ":" + layer + ":" + buf;
  }

  friend bool operator==(const FeatureLabel&, const FeatureLabel&) = default;
};

struct FeatureVector {
  Featurizer kind = Featurizer::Mean;
  std::vector<std::string> layers;  // in concatenation order
  std::vector<float> values;
  std::vector<FeatureLabel> labels;

  std::size_t size() const noexcept { return values.size(); }
};

template <typename T>
FeatureVector mean_features(const FeatureMap<T>& f, std::string_view layer) {
  FeatureVector v{Featurizer::Mean, {std::string(layer)}, {}, {}};
  v.values.reserve(f.channels());
  for (std::size_t c = 0; c < f.channels(); ++c) {
    const auto ch = f.channel(c);
    const double sum = std::accumulate(ch.begin(), ch.end(), 0.0);
    v.values.push_back(static_cast<float>(sum / static_cast<double>(ch.size())));
    v.labels.push_back({Featurizer::Mean, std::string(layer), static_cast<std::uint32_t>(c), 0});
  }
  return v;
}

template <typename T>
FeatureVector max_features(const FeatureMap<T>& f, std::string_view layer) {
  FeatureVector v{Featurizer::Max, {std::string(layer)}, {}, {}};
  v.values.reserve(f.channels());
  for (std::size_t c = 0; c < f.channels(); ++c) {
    const auto ch = f.channel(c);
    v.values.push_back(static_cast<float>(*std::max_element(ch.begin(), ch.end())));
    v.labels.push_back({Featurizer::Max, std::string(layer), static_cast<std::uint32_t>(c), 0});
  }
  return v;
}

/// Full (not triangular) Gram matrix, flattened row-major. Exactly symmetric.
template <typename T>
FeatureVector gram_features(const FeatureMap<T>& f, std::string_view layer) {
  const std::size_t n = f.channels();
  const std::size_t len = f.plane_size();
  FeatureVector v{Featurizer::Gram, {std::string(layer)}, std::vector<float>(n * n), {}};
  for (std::size_t i = 0; i < n; ++i) {
    const T* a = f.channel(i).data();
    for (std::size_t j = i; j < n; ++j) {
      const T* b = f.channel(j).data();
      double acc = 0.0;
      for (std::size_t k = 0; k < len; ++k) acc += static_cast<double>(a[k]) * static_cast<double>(b[k]);
      v.values[i * n + j] = v.values[j * n + i] = static_cast<float>(acc);
    }
  }
  v.labels.reserve(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      v.labels.push_back({Featurizer::Gram, std::string(layer), static_cast<std::uint32_t>(i),
                          static_cast<std::uint32_t>(j)});
    }
  }
  return v;
}

/// Joins per-layer vectors of one featurizer, ordered raw, C12, ..., C53.
inline FeatureVector concat_taps(std::vector<FeatureVector> parts) {
  if (parts.empty()) throw ArgumentError("concat_taps: nothing to concatenate");
  std::set<std::string> seen;
  for (const auto& p : parts) {
    if (p.kind != parts.front().kind) throw ArgumentError("concat_taps: mixed featurizers");
    for (const auto& l : p.layers) {
      if (!seen.insert(l).second) throw ArgumentError("concat_taps: duplicate tap " + l);
    }
  }
  std::stable_sort(parts.begin(), parts.end(), [](const FeatureVector& a, const FeatureVector& b) {
    return layer_rank(a.layers.front()) < layer_rank(b.layers.front());
  });
  FeatureVector out{parts.front().kind, {}, {}, {}};
  for (auto& p : parts) {
    out.layers.insert(out.layers.end(), p.layers.begin(), p.layers.end());
    out.values.insert(out.values.end(), p.values.begin(), p.values.end());
    out.labels.insert(out.labels.end(), p.labels.begin(), p.labels.end());
  }
  return out;
}

/// Expected single-layer feature count.
constexpr std::size_t feature_count(Featurizer f, std::size_t n_filters, std::size_t n_words = 32) noexcept {
  switch (f) {
    case Featurizer::Mean:
    case Featurizer::Max: return n_filters;
    case Featurizer::Gram: return n_filters * n_filters;
    case Featurizer::Vlad: return n_filters * n_words;
  }
  return 0;
}

}  // namespace mtex
