#pragma once

// VLAD encoding of tapped feature maps. Every spatial location is one local
// descriptor of length N_filters; a k-means dictionary of visual words is
// built over descriptors from a sampled subset of images. An image is encoded
// by hard-assigning each descriptor to its nearest word and summing residuals
// per word, then applying signed square root and global L2 normalization.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "mtex/featurize.hpp"
#include "mtex/kmeans.hpp"
#include "mtex/rng.hpp"
#include "mtex/tensor.hpp"

namespace mtex {

struct VladDictionary {
  std::string layer;
  std::size_t n_words = 0;
  std::size_t n_filters = 0;
  std::vector<double> centroids;  // n_words x n_filters

  std::span<const double> word(std::size_t w) const noexcept { return {centroids.data() + w * n_filters, n_filters}; }
};

/// Descriptor matrix (locations x channels) of one map.
template <typename T>
std::vector<float> spatial_descriptors(const FeatureMap<T>& f) {
  const std::size_t n = f.plane_size();
  const std::size_t c = f.channels();
  std::vector<float> out(n * c);
  for (std::size_t ch = 0; ch < c; ++ch) {
    const auto plane = f.channel(ch);
    for (std::size_t j = 0; j < n; ++j) out[j * c + ch] = static_cast<float>(plane[j]);
  }
  return out;
}

/// Number of images used to build a dictionary: floor(fraction * n), at least 1.
inline std::size_t vlad_sample_count(std::size_t n_images, double sample_fraction) {
  if (!(sample_fraction > 0.0 && sample_fraction <= 1.0)) {
    throw ArgumentError("sample_fraction must lie in (0, 1]");
  }
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(sample_fraction * static_cast<double>(n_images))));
}

/// Indices of the images chosen for dictionary building, ascending. Stream: substream(seed, 0).
inline std::vector<std::size_t> vlad_sample_indices(std::size_t n_images, double sample_fraction, std::uint64_t seed) {
  const std::size_t m = vlad_sample_count(n_images, sample_fraction);
  std::vector<std::size_t> idx(n_images);
  for (std::size_t i = 0; i < n_images; ++i) idx[i] = i;
  if (m < n_images) {
    Rng rng = Rng::substream(seed, 0);
    shuffle(idx, rng);
    idx.resize(m);
    std::sort(idx.begin(), idx.end());
  }
  return idx;
}

/// Clusters descriptors of the sampled maps. k-means stream: substream(seed, 1).
template <typename T>
VladDictionary build_vlad_dictionary(const std::vector<FeatureMap<T>>& maps, std::string_view layer,
                                     std::size_t n_words = 32, double sample_fraction = 1.0,
                                     std::uint64_t seed = 0) {
  if (maps.empty()) throw ArgumentError("build_vlad_dictionary: no feature maps");
  const std::size_t n_filters = maps.front().channels();
  std::vector<float> pool;
  for (std::size_t i : vlad_sample_indices(maps.size(), sample_fraction, seed)) {
    if (maps[i].channels() != n_filters) throw ConfigError("build_vlad_dictionary: inconsistent channel counts");
    auto d = spatial_descriptors(maps[i]);
    pool.insert(pool.end(), d.begin(), d.end());
  }
  auto km = kmeans(pool, n_filters, n_words, substream_seed(seed, 1));
  return {std::string(layer), n_words, n_filters, std::move(km.centroids)};
}

/// Residual sums per word before normalization (word-major blocks).
template <typename T>
std::vector<double> vlad_residuals(const FeatureMap<T>& f, const VladDictionary& dict) {
  if (f.channels() != dict.n_filters) {
    throw ConfigError("vlad: map has " + std::to_string(f.channels()) + " channels, dictionary expects " +
                      std::to_string(dict.n_filters));
  }
  const std::size_t c = dict.n_filters;
  const auto desc = spatial_descriptors(f);
  std::vector<double> acc(dict.n_words * c, 0.0);
  for (std::size_t j = 0; j < f.plane_size(); ++j) {
    const float* p = desc.data() + j * c;
    const auto [w, d] = nearest_centroid(p, dict.centroids, c);
    (void)d;
    for (std::size_t k = 0; k < c; ++k) acc[w * c + k] += static_cast<double>(p[k]) - dict.centroids[w * c + k];
  }
  return acc;
}

template <typename T>
FeatureVector vlad_features(const FeatureMap<T>& f, const VladDictionary& dict) {
  auto acc = vlad_residuals(f, dict);
  double norm2 = 0.0;
  for (double& v : acc) {
    v = std::copysign(std::sqrt(std::abs(v)), v);
    norm2 += v * v;
  }
  const double scale = norm2 > 0.0 ? 1.0 / std::sqrt(norm2) : 0.0;

  FeatureVector out{Featurizer::Vlad, {dict.layer}, {}, {}};
  out.values.reserve(acc.size());
  out.labels.reserve(acc.size());
  for (std::size_t w = 0; w < dict.n_words; ++w) {
    for (std::size_t k = 0; k < dict.n_filters; ++k) {
      out.values.push_back(static_cast<float>(acc[w * dict.n_filters + k] * scale));
      out.labels.push_back({Featurizer::Vlad, dict.layer, static_cast<std::uint32_t>(w), static_cast<std::uint32_t>(k)});
    }
  }
  return out;
}

}  // namespace mtex
