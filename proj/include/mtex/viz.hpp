#pragma once

// Interpretability helpers: activation-maximizing texture images, activation
// heat maps, and ranking of mean/max texture features by forest importance or
// by one-vs-rest class contrast.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "mtex/cnn.hpp"
#include "mtex/error.hpp"
#include "mtex/featurize.hpp"
#include "mtex/forest.hpp"
#include "mtex/image.hpp"
#include "mtex/matrix.hpp"
#include "mtex/rng.hpp"
#include "mtex/tensor.hpp"

namespace mtex {

struct AscentConfig {
  std::size_t height = 128;
  std::size_t width = 128;
  std::size_t iterations = 200;
  double step = 1.0;        // applied to the RMS-normalized gradient, in pixel units
  double init_range = 10.0; // uniform noise half-width around mid-gray
  std::uint64_t seed = 0;
  PreprocessOptions preprocess;
};

struct TextureImage {
  Image8 image;  // RGB, min-max normalized
  Tap tap = Tap::C12;
  std::size_t filter = 0;
  double initial_objective = 0.0;
  double final_objective = 0.0;        // objective of the returned image
  std::vector<double> objective_history;  // objective before each update, then after the last one
  bool degenerate = false;             // gradient vanished, even before the ReLU; image is the (normalized) start point
};

namespace detail {

/// Preprocessed-space map back to RGB pixels, min-max stretched over all channels.
template <typename T>
Image8 normalize_to_rgb(const FeatureMap<T>& x, const PreprocessOptions& pp) {
  std::vector<double> rgb(x.size());
  const std::size_t plane = x.plane_size();
  for (std::size_t oc = 0; oc < 3; ++oc) {
    const std::size_t colour = pp.order == ChannelOrder::RGB ? oc : 2 - oc;
    for (std::size_t i = 0; i < plane; ++i) {
      rgb[colour * plane + i] = static_cast<double>(x.channel(oc)[i]) + pp.rgb_means[colour];
    }
  }
  const auto [lo_it, hi_it] = std::minmax_element(rgb.begin(), rgb.end());
  const double lo = *lo_it, range = *hi_it - *lo_it;
  Image8 img(x.width(), x.height(), 3);
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < plane; ++i) {
      const double v = range > 0.0 ? 255.0 * (rgb[c * plane + i] - lo) / range : 128.0;
      img.pixels[i * 3 + c] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
    }
  }
  return img;
}

}  // namespace detail

/// Gradient ascent on the input image to maximize one filter's mean activation at `tap`.
///
/// Starts from mid-gray plus uniform noise (Rng(seed), channel-major draw order)
/// and repeats image += step * grad / RMS(grad). Returns the iterate with the
/// highest objective, so final_objective >= initial_objective.
template <typename T>
TextureImage texture_image(const WeightStore<T>& weights, Tap tap, std::size_t filter, const AscentConfig& cfg) {
  const std::size_t n_filters = weights.config().tap_channels(tap);
  if (filter >= n_filters) {
    throw IndexError("filter " + std::to_string(filter) + " out of range for " + std::string(tap_name(tap)));
  }
  if (cfg.iterations == 0) throw ArgumentError("ascent iterations must be at least 1");
  if (cfg.height < 32 || cfg.width < 32) throw ArgumentError("ascent image must be at least 32x32");

  const auto& pp = cfg.preprocess;
  Rng rng(cfg.seed);
  FeatureMap<T> x(3, cfg.height, cfg.width);
  for (std::size_t oc = 0; oc < 3; ++oc) {
    const std::size_t colour = pp.order == ChannelOrder::RGB ? oc : 2 - oc;
    for (T& v : x.channel(oc)) {
      v = static_cast<T>(128.0 + rng.uniform(-cfg.init_range, cfg.init_range) - pp.rgb_means[colour]);
    }
  }

  TextureImage out;
  out.tap = tap;
  out.filter = filter;
  FeatureMap<T> best = x;
  double best_obj = 0.0;
  for (std::size_t it = 0;; ++it) {
    auto g = mean_activation_grad(x, weights, tap, filter);
    const double obj = static_cast<double>(g.objective);
    out.objective_history.push_back(obj);
    if (it == 0) {
      out.initial_objective = best_obj = obj;
    } else if (obj > best_obj) {
      best_obj = obj;
      best = x;
    }
    if (it == cfg.iterations) break;
    auto rms_of = [](const FeatureMap<T>& m) {
      double ss = 0.0;
      for (T v : m.values()) ss += static_cast<double>(v) * static_cast<double>(v);
      return std::sqrt(ss / static_cast<double>(m.size()));
    };
    double rms = rms_of(g.gradient);
    if (rms == 0.0) {
      // filter is off everywhere: climb its pre-ReLU response until it switches on
      g = mean_activation_grad(x, weights, tap, filter, true);
      rms = rms_of(g.gradient);
    }
    if (rms == 0.0) {
      out.degenerate = it == 0;
      break;
    }
    const double scale = cfg.step / rms;
    auto xv = x.values();
    auto gv = g.gradient.values();
    for (std::size_t i = 0; i < xv.size(); ++i) xv[i] += static_cast<T>(scale * static_cast<double>(gv[i]));
  }
  out.final_objective = best_obj;
  out.image = detail::normalize_to_rgb(best, pp);
  return out;
}

struct Heatmap {
  FeatureMap<float> activation;  // 1 x tap height x tap width
  FeatureMap<float> upsampled;   // 1 x image height x image width
};

/// Activation of one filter over a preprocessed image, and its bilinear upsampling to image size.
inline Heatmap activation_heatmap(const FeatureMap<float>& image, const WeightStore<float>& weights, Tap tap,
                                  std::size_t filter) {
  const std::size_t n_filters = weights.config().tap_channels(tap);
  if (filter >= n_filters) {
    throw IndexError("filter " + std::to_string(filter) + " out of range for " + std::string(tap_name(tap)));
  }
  const auto maps = forward(image, weights, {tap});
  const auto& f = maps.at(tap);
  const auto ch = f.channel(filter);
  Heatmap h;
  h.activation = FeatureMap<float>(1, f.height(), f.width(), std::vector<float>(ch.begin(), ch.end()));
  h.upsampled = resize_bilinear(h.activation, image.height(), image.width());
  return h;
}

/// Single-channel map to 8-bit gray, min-max stretched.
inline Image8 heatmap_to_image(const FeatureMap<float>& m) {
  const auto v = m.values();
  const auto [lo_it, hi_it] = std::minmax_element(v.begin(), v.end());
  const double lo = *lo_it, range = static_cast<double>(*hi_it) - lo;
  Image8 img(m.width(), m.height(), 1);
  for (std::size_t i = 0; i < m.plane_size(); ++i) {
    const double s = range > 0.0 ? 255.0 * (v[i] - lo) / range : 0.0;
    img.pixels[i] = static_cast<std::uint8_t>(std::clamp(std::lround(s), 0L, 255L));
  }
  return img;
}

struct RankedTexture {
  std::size_t feature = 0;  // column in the feature matrix
  std::string layer;
  std::size_t filter = 0;
  double score = 0.0;       // importance, or class contrast
};

namespace detail {

inline void require_single_filter(std::span<const FeatureLabel> labels) {
  for (const auto& l : labels) {
    if (l.kind != Featurizer::Mean && l.kind != Featurizer::Max) {
      throw UnsupportedError("texture ranking needs mean or max features; " + std::string(featurizer_name(l.kind)) +
                             " features do not map to a single filter");
    }
  }
}

}  // namespace detail

/// The k most important features, by descending importance; ties go to the lower filter, then lower column.
inline std::vector<RankedTexture> top_important_textures(std::span<const double> importances,
                                                         std::span<const FeatureLabel> labels, std::size_t k = 3) {
  if (k == 0) throw ArgumentError("top_important_textures: k must be at least 1");
  if (importances.size() != labels.size()) throw ArgumentError("top_important_textures: importance/label count mismatch");
  detail::require_single_filter(labels);
  std::vector<RankedTexture> all;
  all.reserve(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) all.push_back({i, labels[i].layer, labels[i].first, importances[i]});
  std::stable_sort(all.begin(), all.end(), [](const RankedTexture& a, const RankedTexture& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.filter != b.filter) return a.filter < b.filter;
    return a.feature < b.feature;
  });
  all.resize(std::min(k, all.size()));
  return all;
}

inline std::vector<RankedTexture> top_important_textures(const RandomForest& forest,
                                                         std::span<const FeatureLabel> labels, std::size_t k = 3) {
  return top_important_textures(forest.feature_importances(), labels, k);
}

/// One-vs-rest contrast: mean of feature f over class c minus its mean over all other images.
inline double characteristic_score(const Matrix& X, std::span<const std::string> labels, const std::string& cls,
                                   std::size_t feature) {
  double in = 0.0, out = 0.0;
  std::size_t n_in = 0, n_out = 0;
  for (std::size_t i = 0; i < X.rows(); ++i) {
    if (labels[i] == cls) {
      in += X(i, feature);
      ++n_in;
    } else {
      out += X(i, feature);
      ++n_out;
    }
  }
  return in / static_cast<double>(n_in) - out / static_cast<double>(n_out);
}

struct CharacteristicTexture {
  std::string label;
  RankedTexture texture;
};

/// Per class (ascending label order), the feature with the largest one-vs-rest contrast; ties to the lower column.
inline std::vector<CharacteristicTexture> characteristic_textures(const Matrix& X, std::span<const std::string> labels,
                                                                  std::span<const FeatureLabel> provenance) {
  if (X.rows() != labels.size()) throw ArgumentError("characteristic_textures: row/label count mismatch");
  if (X.cols() != provenance.size()) throw ArgumentError("characteristic_textures: column/provenance count mismatch");
  detail::require_single_filter(provenance);
  std::map<std::string, std::size_t> classes;
  for (const auto& l : labels) ++classes[l];
  if (classes.size() < 2) throw ArgumentError("characteristic_textures: at least 2 classes required");

  std::vector<CharacteristicTexture> out;
  for (const auto& [cls, count] : classes) {
    std::size_t best = 0;
    double best_score = -std::numeric_limits<double>::infinity();
    for (std::size_t f = 0; f < X.cols(); ++f) {
      const double s = characteristic_score(X, labels, cls, f);
      if (s > best_score) {
        best_score = s;
        best = f;
      }
    }
    out.push_back({cls, {best, provenance[best].layer, provenance[best].first, best_score}});
  }
  return out;
}

}  // namespace mtex
