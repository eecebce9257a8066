#pragma once

// VGG16-style convolutional stack: topology, weight storage, input
// preprocessing, forward pass with tap extraction and the input gradient of a
// filter's mean activation.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "mtex/error.hpp"
#include "mtex/image.hpp"
#include "mtex/rng.hpp"
#include "mtex/tensor.hpp"

namespace mtex {

/// Last conv layer of each stack; activations are read after its ReLU and before pooling.
enum class Tap { C12 = 0, C22 = 1, C33 = 2, C43 = 3, C53 = 4 };

inline constexpr std::array<Tap, 5> kAllTaps{Tap::C12, Tap::C22, Tap::C33, Tap::C43, Tap::C53};

constexpr std::size_t tap_stack(Tap t) noexcept { return static_cast<std::size_t>(t); }

constexpr std::string_view tap_name(Tap t) noexcept {
  constexpr std::array<std::string_view, 5> names{"C12", "C22", "C33", "C43", "C53"};
  return names[tap_stack(t)];
}

inline std::optional<Tap> parse_tap(std::string_view s) {
  for (Tap t : kAllTaps) {
    if (tap_name(t) == s) return t;
  }
  return std::nullopt;
}

struct StackSpec {
  std::size_t convs = 0;
  std::size_t filters = 0;
  friend bool operator==(const StackSpec&, const StackSpec&) = default;
};

struct LayerSpec {
  std::string name;  // conv{stack}_{index}, both 1-based
  std::size_t stack = 0;
  std::size_t out_channels = 0;
  std::size_t in_channels = 0;
};

/// Network topology. `vgg16()` is the production layout; smaller layouts exist for tests.
struct VggConfig {
  std::vector<StackSpec> stacks;
  std::size_t input_channels = 3;
  std::size_t kernel_size = 3;

  static VggConfig vgg16() { return {{{2, 64}, {2, 128}, {3, 256}, {3, 512}, {3, 512}}, 3, 3}; }

  std::vector<LayerSpec> layers() const {
    std::vector<LayerSpec> out;
    std::size_t in = input_channels;
    for (std::size_t s = 0; s < stacks.size(); ++s) {
      for (std::size_t i = 0; i < stacks[s].convs; ++i) {
        out.push_back({"conv" + std::to_string(s + 1) + "_" + std::to_string(i + 1), s, stacks[s].filters, in});
        in = stacks[s].filters;
      }
    }
    return out;
  }

  bool has_tap(Tap t) const noexcept { return tap_stack(t) < stacks.size(); }

  std::size_t tap_channels(Tap t) const {
    if (!has_tap(t)) throw IndexError("tap " + std::string(tap_name(t)) + " is beyond the network depth");
    return stacks[tap_stack(t)].filters;
  }

  friend bool operator==(const VggConfig&, const VggConfig&) = default;
};

/// Spatial extent of a tap for an input extent: one floor-halving per preceding pool.
constexpr std::size_t tap_extent(std::size_t input_extent, Tap t) noexcept {
  for (std::size_t s = 0; s < tap_stack(t); ++s) input_extent /= 2;
  return input_extent;
}

/// Named conv kernels for a VggConfig. Immutable once built; safe to share across threads.
template <typename T = float>
class WeightStore {
 public:
  WeightStore() = default;

  WeightStore(VggConfig config, std::map<std::string, ConvKernel<T>> layers)
      : config_(std::move(config)), layers_(std::move(layers)) {
    validate();
  }

  const VggConfig& config() const noexcept { return config_; }
  const std::map<std::string, ConvKernel<T>>& layers() const noexcept { return layers_; }

  const ConvKernel<T>& layer(const std::string& name) const {
    auto it = layers_.find(name);
    if (it == layers_.end()) throw SchemaError("weight store has no layer " + name);
    return it->second;
  }

  template <typename U>
  WeightStore<U> cast() const {
    std::map<std::string, ConvKernel<U>> out;
    for (const auto& [name, k] : layers_) out.emplace(name, k.template cast<U>());
    return WeightStore<U>(config_, std::move(out));
  }

  friend bool operator==(const WeightStore&, const WeightStore&) = default;

 private:
  void validate() const {
    const auto specs = config_.layers();
    if (layers_.size() != specs.size()) {
      throw SchemaError("weight store has " + std::to_string(layers_.size()) + " layers, expected " +
                        std::to_string(specs.size()));
    }
    for (const auto& spec : specs) {
      auto it = layers_.find(spec.name);
      if (it == layers_.end()) throw SchemaError("missing layer " + spec.name);
      const auto& k = it->second;
      if (k.out_channels != spec.out_channels || k.in_channels != spec.in_channels ||
          k.kernel_h != config_.kernel_size || k.kernel_w != config_.kernel_size || !k.valid()) {
        throw SchemaError("layer " + spec.name + " has shape " + std::to_string(k.out_channels) + "x" +
                          std::to_string(k.in_channels) + "x" + std::to_string(k.kernel_h) + "x" +
                          std::to_string(k.kernel_w) + ", expected " + std::to_string(spec.out_channels) + "x" +
                          std::to_string(spec.in_channels) + "x" + std::to_string(config_.kernel_size) + "x" +
                          std::to_string(config_.kernel_size));
      }
      auto finite = [](const std::vector<T>& v) {
        return std::all_of(v.begin(), v.end(), [](T x) { return std::isfinite(x); });
      };
      if (!finite(k.weights) || !finite(k.bias)) throw SchemaError("layer " + spec.name + " has non-finite values");
    }
  }

  VggConfig config_;
  std::map<std::string, ConvKernel<T>> layers_;
};

/// He-normal kernels (stddev sqrt(2 / fan_in)) drawn in layer order from one seeded stream.
template <typename T = float>
WeightStore<T> random_weights(const VggConfig& config, std::uint64_t seed, double bias_stddev = 0.0) {
  Rng rng(seed);
  std::map<std::string, ConvKernel<T>> layers;
  for (const auto& spec : config.layers()) {
    ConvKernel<T> k(spec.out_channels, spec.in_channels, config.kernel_size, config.kernel_size);
    const double stddev = std::sqrt(2.0 / static_cast<double>(spec.in_channels * config.kernel_size * config.kernel_size));
    for (T& w : k.weights) w = static_cast<T>(rng.normal(0.0, stddev));
    if (bias_stddev > 0.0) {
      for (T& b : k.bias) b = static_cast<T>(rng.normal(0.0, bias_stddev));
    }
    layers.emplace(spec.name, std::move(k));
  }
  return WeightStore<T>(config, std::move(layers));
}

template <typename T = float>
WeightStore<T> zero_weights(const VggConfig& config) {
  std::map<std::string, ConvKernel<T>> layers;
  for (const auto& spec : config.layers()) {
    layers.emplace(spec.name, ConvKernel<T>(spec.out_channels, spec.in_channels, config.kernel_size, config.kernel_size));
  }
  return WeightStore<T>(config, std::move(layers));
}

// ---------------------------------------------------------------------------
// Preprocessing

enum class ChannelOrder { RGB, BGR };

struct PreprocessOptions {
  std::array<double, 3> rgb_means{123.68, 116.779, 103.939};  // subtracted from R, G, B
  ChannelOrder order = ChannelOrder::RGB;
  std::size_t min_extent = 32;
};

/// Converts 8-bit gray or RGB pixels to a 3-channel mean-subtracted map.
template <typename T = float>
FeatureMap<T> preprocess(const Image8& image, const PreprocessOptions& opts = {}) {
  if (image.channels != 1 && image.channels != 3) throw ArgumentError("preprocess: 1 or 3 channel image required");
  if (image.pixels.size() != image.width * image.height * image.channels) {
    throw ArgumentError("preprocess: pixel buffer size does not match dimensions");
  }
  if (image.height < opts.min_extent || image.width < opts.min_extent) {
    throw SizeError("preprocess: image " + std::to_string(image.width) + "x" + std::to_string(image.height) +
                    " is smaller than " + std::to_string(opts.min_extent) + "x" + std::to_string(opts.min_extent));
  }
  FeatureMap<T> out(3, image.height, image.width);
  for (std::size_t oc = 0; oc < 3; ++oc) {
    const std::size_t colour = opts.order == ChannelOrder::RGB ? oc : 2 - oc;
    const std::size_t src = image.channels == 1 ? 0 : colour;
    const double mean = opts.rgb_means[colour];
    for (std::size_t y = 0; y < image.height; ++y) {
      for (std::size_t x = 0; x < image.width; ++x) {
        out(oc, y, x) = static_cast<T>(static_cast<double>(image.at(y, x, src)) - mean);
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Forward / backward

template <typename T>
using TapMaps = std::map<Tap, FeatureMap<T>>;

/// Runs the stack up to the deepest requested tap and returns the requested post-ReLU maps.
template <typename T>
TapMaps<T> forward(const FeatureMap<T>& image, const WeightStore<T>& weights, const std::set<Tap>& taps) {
  if (taps.empty()) throw ArgumentError("forward: no taps requested");
  const auto& cfg = weights.config();
  for (Tap t : taps) (void)cfg.tap_channels(t);
  if (image.channels() != cfg.input_channels) {
    throw ConfigError("forward: image has " + std::to_string(image.channels()) + " channels, network expects " +
                      std::to_string(cfg.input_channels));
  }
  const std::size_t last_stack = tap_stack(*taps.rbegin());

  TapMaps<T> out;
  FeatureMap<T> x = image;
  for (std::size_t s = 0; s <= last_stack; ++s) {
    if (s > 0) x = maxpool2(x);
    for (std::size_t i = 0; i < cfg.stacks[s].convs; ++i) {
      x = relu(conv2d(x, weights.layer("conv" + std::to_string(s + 1) + "_" + std::to_string(i + 1))));
    }
    const Tap t = static_cast<Tap>(s);
    if (taps.contains(t)) out.emplace(t, x);
  }
  return out;
}

template <typename T>
struct MeanActivationGrad {
  T objective{};              // mean over spatial locations of the tapped filter
  FeatureMap<T> gradient;     // d objective / d image
};

/// Gradient of one filter's spatial-mean activation at `tap` with respect to the input image.
/// With pre_relu the objective is the mean of the tap's last conv output before its ReLU.
template <typename T>
MeanActivationGrad<T> mean_activation_grad(const FeatureMap<T>& image, const WeightStore<T>& weights, Tap tap,
                                           std::size_t filter, bool pre_relu = false) {
  const auto& cfg = weights.config();
  const std::size_t n_filters = cfg.tap_channels(tap);
  if (filter >= n_filters) {
    throw IndexError("filter " + std::to_string(filter) + " out of range for " + std::string(tap_name(tap)) +
                     " (" + std::to_string(n_filters) + " filters)");
  }
  if (image.channels() != cfg.input_channels) throw ConfigError("mean_activation_grad: channel mismatch");

  struct Step {
    enum Kind { Pool, Conv, Relu } kind;
    const ConvKernel<T>* kernel = nullptr;
    FeatureMap<T> input;
  };
  std::vector<Step> tape;
  FeatureMap<T> x = image;
  for (std::size_t s = 0; s <= tap_stack(tap); ++s) {
    if (s > 0) {
      tape.push_back({Step::Pool, nullptr, x});
      x = maxpool2(x);
    }
    for (std::size_t i = 0; i < cfg.stacks[s].convs; ++i) {
      const auto& k = weights.layer("conv" + std::to_string(s + 1) + "_" + std::to_string(i + 1));
      tape.push_back({Step::Conv, &k, x});
      x = conv2d(x, k);
      tape.push_back({Step::Relu, nullptr, x});
      x = relu(std::move(x));
    }
  }

  if (pre_relu) {
    x = std::move(tape.back().input);
    tape.pop_back();
  }

  MeanActivationGrad<T> result;
  auto chan = x.channel(filter);
  double sum = 0.0;
  for (T v : chan) sum += v;
  result.objective = static_cast<T>(sum / static_cast<double>(chan.size()));

  FeatureMap<T> grad(x.channels(), x.height(), x.width());
  std::fill(grad.channel(filter).begin(), grad.channel(filter).end(), T{1} / static_cast<T>(chan.size()));
  for (auto it = tape.rbegin(); it != tape.rend(); ++it) {
    switch (it->kind) {
      case Step::Pool: grad = maxpool2_input_grad(it->input, grad); break;
      case Step::Relu: grad = relu_input_grad(it->input, grad); break;
      case Step::Conv: grad = conv2d_input_grad(it->input, *it->kernel, grad); break;
    }
  }
  result.gradient = std::move(grad);
  return result;
}

}  // namespace mtex
