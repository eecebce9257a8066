#pragma once

// Run configuration and the commands behind the CLI: featurize a dataset,
// cross-validate forests on the features, render interpretability images,
// generate a synthetic dataset, and validate a weight file.
//
// Every seeded step draws from substream_seed(run seed, Stream::...), so
// outputs depend only on (config, seed, input files) and never on --jobs.

#include <nlohmann/json.hpp>

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mtex/cnn.hpp"
#include "mtex/dataset.hpp"
#include "mtex/error.hpp"
#include "mtex/eval.hpp"
#include "mtex/featurize.hpp"
#include "mtex/forest.hpp"
#include "mtex/image.hpp"
#include "mtex/matrix.hpp"
#include "mtex/parallel.hpp"
#include "mtex/rng.hpp"
#include "mtex/viz.hpp"
#include "mtex/vlad.hpp"
#include "mtex/weights_io.hpp"

namespace mtex {

namespace fs = std::filesystem;
using json = nlohmann::json;

enum class Stream : std::uint64_t { Weights = 1, VladSample, VladDictionary, CrossValidation, FinalForest, Ascent, Synthetic };

inline std::uint64_t stream_seed(std::uint64_t seed, Stream s) { return substream_seed(seed, static_cast<std::uint64_t>(s)); }

// ---------------------------------------------------------------------------
// Tap groups: "C22", "raw", "C12+C33", or "all" (the five taps concatenated)

struct TapGroup {
  std::vector<std::string> layers;  // raw first, then C12..C53

  std::string name() const {
    std::string s;
    for (const auto& l : layers) s += (s.empty() ? "" : "+") + l;
    return s;
  }
  bool uses_raw() const { return !layers.empty() && layers.front() == kRawLayer; }
  std::set<Tap> taps() const {
    std::set<Tap> out;
    for (const auto& l : layers) {
      if (auto t = parse_tap(l)) out.insert(*t);
    }
    return out;
  }
  friend bool operator==(const TapGroup&, const TapGroup&) = default;
};

inline TapGroup parse_tap_group(const std::string& spec) {
  TapGroup g;
  std::set<std::string> seen;
  std::stringstream ss(spec);
  std::string part;
  while (std::getline(ss, part, '+')) {
    part = detail::trim(part);
    std::vector<std::string> names;
    if (part == "all") {
      for (Tap t : kAllTaps) names.emplace_back(tap_name(t));
    } else if (part == kRawLayer || parse_tap(part)) {
      names.push_back(part);
    } else {
      throw RunConfigError("unknown tap \"" + part + "\" (expected raw, C12, C22, C33, C43, C53 or all)");
    }
    for (auto& n : names) {
      if (!seen.insert(n).second) throw RunConfigError("tap " + n + " repeated in \"" + spec + "\"");
      g.layers.push_back(std::move(n));
    }
  }
  if (g.layers.empty()) throw RunConfigError("empty tap group");
  std::stable_sort(g.layers.begin(), g.layers.end(),
                   [](const std::string& a, const std::string& b) { return layer_rank(a) < layer_rank(b); });
  return g;
}

// ---------------------------------------------------------------------------
// Run configuration

struct VladOptions {
  std::size_t n_words = 32;
  double sample_fraction = 1.0;
  std::optional<std::pair<std::size_t, std::size_t>> resize = std::pair<std::size_t, std::size_t>{255, 255};
};

struct VisualizeOptions {
  std::string mode = "textures";  // textures | important | characteristic | heatmap
  std::optional<std::string> tap;
  std::vector<std::size_t> filters{0};
  std::size_t k = 3;
  std::optional<fs::path> image;
  std::optional<fs::path> forest;
  std::optional<fs::path> features;
};

struct RunConfig {
  std::optional<fs::path> manifest;
  std::optional<SyntheticSpec> synthetic;
  std::optional<fs::path> features;  // precomputed features CSV for evaluate
  std::string weights = "random";    // weight file path, or "random" for seeded He-normal weights
  std::optional<std::uint64_t> weights_seed;
  VggConfig network = VggConfig::vgg16();
  std::vector<Featurizer> featurizers{Featurizer::Mean};
  std::vector<TapGroup> taps;
  VladOptions vlad;
  TrainConfig forest;
  std::size_t n_folds = 3;
  std::size_t n_trials = 10;
  PreprocessSpec image_spec;
  PreprocessOptions pixels;
  fs::path output = "mtex_out";
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
  AscentConfig ascent;
  VisualizeOptions visualize;

  RunConfig() {
    for (Tap t : kAllTaps) taps.push_back({{std::string(tap_name(t))}});
  }
};

namespace detail {

inline void check_keys(const json& j, std::initializer_list<std::string_view> allowed, const std::string& where) {
  if (!j.is_object()) throw RunConfigError(where + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw RunConfigError("unknown key \"" + key + "\" in " + where);
    }
  }
}

template <typename T>
T get_as(const json& j, const std::string& what) {
  try {
    return j.get<T>();
  } catch (const json::exception&) {
    throw RunConfigError(what + ": wrong type");
  }
}

inline std::size_t get_count(const json& j, const std::string& what) {
  if (!j.is_number_unsigned()) throw RunConfigError(what + " must be a non-negative integer");
  return j.get<std::size_t>();
}

inline std::pair<std::size_t, std::size_t> get_extent(const json& j, const std::string& what) {
  if (j.is_number_unsigned()) return {j.get<std::size_t>(), j.get<std::size_t>()};
  if (j.is_array() && j.size() == 2) return {get_count(j[0], what), get_count(j[1], what)};
  throw RunConfigError(what + " must be N or [height, width]");
}

inline fs::path resolve(const json& j, const fs::path& base, const std::string& what) {
  fs::path p = get_as<std::string>(j, what);
  if (p.empty()) throw RunConfigError(what + " is empty");
  return p.is_relative() ? (base / p).lexically_normal() : p;
}

inline TextureClass parse_texture_class(const json& j) {
  check_keys(j, {"label", "kind", "angle", "period", "radius", "density", "cell"}, "synthetic class");
  TextureClass c;
  c.label = get_as<std::string>(j.at("label"), "synthetic class label");
  const auto kind = get_as<std::string>(j.at("kind"), "synthetic class kind");
  if (kind == "stripes") {
    c.kind = TextureClass::Kind::Stripes;
  } else if (kind == "dots") {
    c.kind = TextureClass::Kind::Dots;
  } else if (kind == "checker") {
    c.kind = TextureClass::Kind::Checker;
  } else {
    throw RunConfigError("synthetic class kind must be stripes, dots or checker");
  }
  c.angle_deg = j.value("angle", c.angle_deg);
  c.period = j.value("period", c.period);
  c.radius = j.value("radius", c.radius);
  c.density = j.value("density", c.density);
  c.cell = j.value("cell", c.cell);
  return c;
}

}  // namespace detail

inline SyntheticSpec parse_synthetic(const json& j, std::uint64_t run_seed) {
  detail::check_keys(j, {"classes", "n_per_class", "size", "noise", "seed"}, "synthetic");
  SyntheticSpec s;
  s.classes = default_texture_classes();
  if (j.contains("classes")) {
    s.classes.clear();
    for (const auto& c : j.at("classes")) s.classes.push_back(detail::parse_texture_class(c));
  }
  if (j.contains("n_per_class")) s.n_per_class = detail::get_count(j["n_per_class"], "synthetic.n_per_class");
  if (j.contains("size")) s.size = detail::get_count(j["size"], "synthetic.size");
  if (j.contains("noise")) s.noise = detail::get_as<double>(j["noise"], "synthetic.noise");
  s.seed = j.contains("seed") ? detail::get_as<std::uint64_t>(j["seed"], "synthetic.seed")
                              : stream_seed(run_seed, Stream::Synthetic);
  return s;
}

/// Builds a RunConfig from JSON; relative paths resolve against base_dir.
inline RunConfig parse_run_config(const json& j, const fs::path& base_dir) {
  using namespace detail;
  check_keys(j,
             {"manifest", "synthetic", "features", "weights", "weights_seed", "network", "featurizers", "featurizer",
              "taps", "vlad", "forest", "cv", "preprocess", "output", "seed", "jobs", "ascent", "visualize"},
             "run config");
  RunConfig c;
  if (j.contains("seed")) c.seed = get_as<std::uint64_t>(j["seed"], "seed");
  if (j.contains("jobs")) c.jobs = std::max<std::size_t>(1, get_count(j["jobs"], "jobs"));
  if (j.contains("manifest")) c.manifest = resolve(j["manifest"], base_dir, "manifest");
  if (j.contains("synthetic")) c.synthetic = parse_synthetic(j["synthetic"], c.seed);
  if (j.contains("features")) c.features = resolve(j["features"], base_dir, "features");
  if (j.contains("output")) c.output = resolve(j["output"], base_dir, "output");
  if (j.contains("weights")) {
    c.weights = get_as<std::string>(j["weights"], "weights");
    if (c.weights != "random") c.weights = resolve(j["weights"], base_dir, "weights").string();
  }
  if (j.contains("weights_seed")) c.weights_seed = get_as<std::uint64_t>(j["weights_seed"], "weights_seed");

  if (j.contains("network")) {
    const auto& n = j["network"];
    if (n.is_string()) {
      if (n.get<std::string>() != "vgg16") throw RunConfigError("network must be \"vgg16\" or {\"stacks\": ...}");
    } else {
      check_keys(n, {"stacks"}, "network");
      c.network.stacks.clear();
      for (const auto& s : n.at("stacks")) {
        if (!s.is_array() || s.size() != 2) throw RunConfigError("network.stacks entries must be [convs, filters]");
        c.network.stacks.push_back({get_count(s[0], "network stack"), get_count(s[1], "network stack")});
      }
      if (c.network.stacks.empty() || c.network.stacks.size() > kAllTaps.size()) {
        throw RunConfigError("network must have 1 to 5 stacks");
      }
      for (const auto& s : c.network.stacks) {
        if (s.convs == 0 || s.filters == 0) throw RunConfigError("network stacks need at least one conv and filter");
      }
    }
  }

  for (const char* key : {"featurizers", "featurizer"}) {
    if (!j.contains(key)) continue;
    const auto& f = j[key];
    c.featurizers.clear();
    for (const auto& name : f.is_array() ? f : json::array({f})) {
      auto parsed = parse_featurizer(get_as<std::string>(name, key));
      if (!parsed) throw RunConfigError("unknown featurizer " + name.dump() + " (expected mean, max, gram or vlad)");
      c.featurizers.push_back(*parsed);
    }
    if (c.featurizers.empty()) throw RunConfigError("no featurizers given");
  }
  if (j.contains("taps")) {
    const auto& t = j["taps"];
    c.taps.clear();
    for (const auto& g : t.is_array() ? t : json::array({t})) c.taps.push_back(parse_tap_group(get_as<std::string>(g, "taps")));
    if (c.taps.empty()) throw RunConfigError("taps must not be empty");
  }

  if (j.contains("vlad")) {
    const auto& v = j["vlad"];
    check_keys(v, {"n_words", "sample_fraction", "resize"}, "vlad");
    if (v.contains("n_words")) c.vlad.n_words = get_count(v["n_words"], "vlad.n_words");
    if (c.vlad.n_words == 0) throw RunConfigError("vlad.n_words must be at least 1");
    if (v.contains("sample_fraction")) c.vlad.sample_fraction = get_as<double>(v["sample_fraction"], "vlad.sample_fraction");
    if (!(c.vlad.sample_fraction > 0.0 && c.vlad.sample_fraction <= 1.0)) {
      throw RunConfigError("vlad.sample_fraction must lie in (0, 1]");
    }
    if (v.contains("resize")) {
      c.vlad.resize = v["resize"].is_null() ? std::nullopt : std::optional(get_extent(v["resize"], "vlad.resize"));
    }
  }

  if (j.contains("forest")) {
    const auto& f = j["forest"];
    check_keys(f, {"n_trees", "features_per_split", "max_depth", "min_samples_split", "bootstrap"}, "forest");
    if (f.contains("n_trees")) c.forest.n_trees = get_count(f["n_trees"], "forest.n_trees");
    if (f.contains("features_per_split")) c.forest.features_per_split = get_count(f["features_per_split"], "forest.features_per_split");
    if (f.contains("max_depth")) c.forest.max_depth = get_count(f["max_depth"], "forest.max_depth");
    if (f.contains("min_samples_split")) c.forest.min_samples_split = get_count(f["min_samples_split"], "forest.min_samples_split");
    if (f.contains("bootstrap")) c.forest.bootstrap = get_as<bool>(f["bootstrap"], "forest.bootstrap");
    if (c.forest.n_trees == 0) throw RunConfigError("forest.n_trees must be at least 1");
    if (c.forest.min_samples_split < 2) throw RunConfigError("forest.min_samples_split must be at least 2");
  }
  if (j.contains("cv")) {
    const auto& v = j["cv"];
    check_keys(v, {"n_folds", "n_trials"}, "cv");
    if (v.contains("n_folds")) c.n_folds = get_count(v["n_folds"], "cv.n_folds");
    if (v.contains("n_trials")) c.n_trials = get_count(v["n_trials"], "cv.n_trials");
    if (c.n_folds < 2) throw RunConfigError("cv.n_folds must be at least 2");
    if (c.n_trials < 1) throw RunConfigError("cv.n_trials must be at least 1");
  }

  if (j.contains("preprocess")) {
    const auto& p = j["preprocess"];
    check_keys(p, {"crop", "resize", "channel_order", "means"}, "preprocess");
    if (p.contains("crop")) {
      const auto& cr = p["crop"];
      if (!cr.is_array() || cr.size() != 4) throw RunConfigError("preprocess.crop must be [left, top, right, bottom]");
      c.image_spec.crop = {get_count(cr[0], "crop"), get_count(cr[1], "crop"), get_count(cr[2], "crop"),
                           get_count(cr[3], "crop")};
    }
    if (p.contains("resize") && !p["resize"].is_null()) {
      c.image_spec.resize = get_extent(p["resize"], "preprocess.resize");
      if (c.image_spec.resize->first < 32 || c.image_spec.resize->second < 32) {
        throw RunConfigError("preprocess.resize must be at least 32x32");
      }
    }
    if (p.contains("channel_order")) {
      const auto order = get_as<std::string>(p["channel_order"], "preprocess.channel_order");
      if (order == "RGB") {
        c.pixels.order = ChannelOrder::RGB;
      } else if (order == "BGR") {
        c.pixels.order = ChannelOrder::BGR;
      } else {
        throw RunConfigError("preprocess.channel_order must be RGB or BGR");
      }
    }
    if (p.contains("means")) {
      const auto& m = p["means"];
      if (!m.is_array() || m.size() != 3) throw RunConfigError("preprocess.means must be [r, g, b]");
      for (std::size_t i = 0; i < 3; ++i) c.pixels.rgb_means[i] = get_as<double>(m[i], "preprocess.means");
    }
  }

  if (j.contains("ascent")) {
    const auto& a = j["ascent"];
    check_keys(a, {"size", "iterations", "step", "init_range"}, "ascent");
    if (a.contains("size")) std::tie(c.ascent.height, c.ascent.width) = get_extent(a["size"], "ascent.size");
    if (a.contains("iterations")) c.ascent.iterations = get_count(a["iterations"], "ascent.iterations");
    if (a.contains("step")) c.ascent.step = get_as<double>(a["step"], "ascent.step");
    if (a.contains("init_range")) c.ascent.init_range = get_as<double>(a["init_range"], "ascent.init_range");
    if (c.ascent.iterations == 0) throw RunConfigError("ascent.iterations must be at least 1");
    if (c.ascent.height < 32 || c.ascent.width < 32) throw RunConfigError("ascent.size must be at least 32x32");
  }
  c.ascent.preprocess = c.pixels;

  if (j.contains("visualize")) {
    const auto& v = j["visualize"];
    check_keys(v, {"mode", "tap", "filters", "k", "image", "forest", "features"}, "visualize");
    if (v.contains("mode")) c.visualize.mode = get_as<std::string>(v["mode"], "visualize.mode");
    if (v.contains("tap")) c.visualize.tap = get_as<std::string>(v["tap"], "visualize.tap");
    if (v.contains("filters")) {
      c.visualize.filters.clear();
      for (const auto& f : v["filters"]) c.visualize.filters.push_back(get_count(f, "visualize.filters"));
    }
    if (v.contains("k")) c.visualize.k = get_count(v["k"], "visualize.k");
    if (v.contains("image")) c.visualize.image = resolve(v["image"], base_dir, "visualize.image");
    if (v.contains("forest")) c.visualize.forest = resolve(v["forest"], base_dir, "visualize.forest");
    if (v.contains("features")) c.visualize.features = resolve(v["features"], base_dir, "visualize.features");
  }
  return c;
}

inline RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw RunConfigError(path.string() + ": " + e.what());
  }
  return parse_run_config(j, path.parent_path());
}

// ---------------------------------------------------------------------------
// Dataset and weights

inline std::string synthetic_file_name(const std::string& label, std::size_t k) {
  std::string n = std::to_string(k);
  if (n.size() < 3) n.insert(0, 3 - n.size(), '0');
  return label + "_" + n + ".png";
}

struct DatasetSource {
  std::vector<std::string> names;   // file path, or a virtual name for in-memory images
  std::vector<std::string> labels;
  std::vector<Image8> images;       // set for in-memory (synthetic) data only

  std::size_t size() const noexcept { return names.size(); }
  Image8 image(std::size_t i) const { return images.empty() ? read_image(names[i]) : images[i]; }
};

inline DatasetSource open_dataset(const RunConfig& cfg) {
  DatasetSource d;
  if (cfg.manifest) {
    for (auto& r : load_manifest(*cfg.manifest).records) {
      d.names.push_back(r.path.string());
      d.labels.push_back(std::move(r.label));
    }
  } else if (cfg.synthetic) {
    for (auto& li : generate_synthetic_textures(*cfg.synthetic)) {
      const std::size_t k = d.names.size() % cfg.synthetic->n_per_class;
      d.names.push_back("synthetic/" + synthetic_file_name(li.label, k));
      d.labels.push_back(std::move(li.label));
      d.images.push_back(std::move(li.image));
    }
  } else {
    throw RunConfigError("run config needs a \"manifest\" or a \"synthetic\" dataset");
  }
  return d;
}

inline WeightStore<float> open_weights(const RunConfig& cfg) {
  if (cfg.weights == "random") {
    return random_weights<float>(cfg.network, cfg.weights_seed.value_or(stream_seed(cfg.seed, Stream::Weights)));
  }
  return load_weights(cfg.weights, cfg.network);
}

/// Decoded, cropped/resized and mean-subtracted network input for image i.
inline FeatureMap<float> network_input(const DatasetSource& d, std::size_t i, const RunConfig& cfg) {
  return preprocess<float>(apply_preprocess(d.image(i), cfg.image_spec), cfg.pixels);
}

// ---------------------------------------------------------------------------
// Featurization

struct FeatureTable {
  Featurizer kind = Featurizer::Mean;
  TapGroup group;
  std::vector<FeatureLabel> labels;  // per column
  std::vector<std::string> names;    // per row
  std::vector<std::string> classes;  // per row
  Matrix X;

  std::string id() const { return std::string(featurizer_name(kind)) + "_" + group.name(); }
};

namespace detail {

inline FeatureVector featurize_layer(Featurizer kind, const FeatureMap<float>& f, const std::string& layer,
                                     const std::map<std::string, VladDictionary>& dicts) {
  switch (kind) {
    case Featurizer::Mean: return mean_features(f, layer);
    case Featurizer::Max: return max_features(f, layer);
    case Featurizer::Gram: return gram_features(f, layer);
    case Featurizer::Vlad: return vlad_features(f, dicts.at(layer));
  }
  throw ArgumentError("unknown featurizer");
}

struct LayerMaps {
  FeatureMap<float> raw;
  TapMaps<float> taps;

  const FeatureMap<float>& at(const std::string& layer) const {
    return layer == kRawLayer ? raw : taps.at(*parse_tap(layer));
  }
};

inline LayerMaps run_layers(FeatureMap<float> x, const WeightStore<float>& w, const std::set<Tap>& taps) {
  LayerMaps m;
  if (!taps.empty()) m.taps = forward(x, w, taps);
  m.raw = std::move(x);
  return m;
}

inline FeatureMap<float> vlad_input(const FeatureMap<float>& x, const VladOptions& v) {
  return v.resize ? resize_bilinear(x, v.resize->first, v.resize->second) : x;
}

}  // namespace detail

/// Featurizes every image for each (featurizer, tap group) of the config, in config order.
///
/// Images are processed in parallel; rows are stored by manifest index. VLAD
/// dictionaries are built first from the sampled images (one sample shared by
/// all layers), then every image is encoded.
inline std::vector<FeatureTable> featurize_dataset(const DatasetSource& data, const WeightStore<float>& weights,
                                                   const RunConfig& cfg) {
  const std::size_t n = data.size();
  for (const auto& g : cfg.taps) {
    for (Tap t : g.taps()) {
      if (!weights.config().has_tap(t)) throw RunConfigError("tap " + std::string(tap_name(t)) + " is beyond the network depth");
    }
  }
  std::set<Tap> plain_taps, vlad_taps;
  std::set<std::string> vlad_layers;
  const bool any_vlad = std::count(cfg.featurizers.begin(), cfg.featurizers.end(), Featurizer::Vlad) > 0;
  const bool any_plain = std::any_of(cfg.featurizers.begin(), cfg.featurizers.end(),
                                     [](Featurizer f) { return f != Featurizer::Vlad; });
  for (const auto& g : cfg.taps) {
    const auto t = g.taps();
    if (any_plain) plain_taps.insert(t.begin(), t.end());
    if (any_vlad) {
      vlad_taps.insert(t.begin(), t.end());
      vlad_layers.insert(g.layers.begin(), g.layers.end());
    }
  }

  std::map<std::string, VladDictionary> dicts;
  if (any_vlad) {
    const auto sample = vlad_sample_indices(n, cfg.vlad.sample_fraction, stream_seed(cfg.seed, Stream::VladSample));
    std::vector<detail::LayerMaps> sampled(sample.size());
    parallel_for(sample.size(), cfg.jobs, [&](std::size_t s) {
      sampled[s] = detail::run_layers(detail::vlad_input(network_input(data, sample[s], cfg), cfg.vlad), weights, vlad_taps);
    });
    for (const auto& layer : vlad_layers) {
      std::vector<FeatureMap<float>> maps;
      maps.reserve(sampled.size());
      for (const auto& m : sampled) maps.push_back(m.at(layer));
      const auto rank = static_cast<std::uint64_t>(layer_rank(layer) + 1);
      dicts.emplace(layer, build_vlad_dictionary(maps, layer, cfg.vlad.n_words, 1.0,
                                                 substream_seed(stream_seed(cfg.seed, Stream::VladDictionary), rank)));
    }
  }

  struct Job {
    Featurizer kind;
    const TapGroup* group;
  };
  std::vector<Job> jobs;
  for (auto f : cfg.featurizers) {
    for (const auto& g : cfg.taps) jobs.push_back({f, &g});
  }
  std::vector<std::vector<FeatureVector>> rows(n, std::vector<FeatureVector>(jobs.size()));
  parallel_for(n, cfg.jobs, [&](std::size_t i) {
    const auto x = network_input(data, i, cfg);
    detail::LayerMaps plain, vlad;
    if (any_plain) plain = detail::run_layers(x, weights, plain_taps);
    if (any_vlad) vlad = detail::run_layers(detail::vlad_input(x, cfg.vlad), weights, vlad_taps);
    for (std::size_t j = 0; j < jobs.size(); ++j) {
      const auto& src = jobs[j].kind == Featurizer::Vlad ? vlad : plain;
      std::vector<FeatureVector> parts;
      for (const auto& layer : jobs[j].group->layers) {
        parts.push_back(detail::featurize_layer(jobs[j].kind, src.at(layer), layer, dicts));
      }
      rows[i][j] = concat_taps(std::move(parts));
    }
  });

  std::vector<FeatureTable> out;
  for (std::size_t j = 0; j < jobs.size(); ++j) {
    FeatureTable t;
    t.kind = jobs[j].kind;
    t.group = *jobs[j].group;
    t.names = data.names;
    t.classes = data.labels;
    t.labels = rows.empty() ? std::vector<FeatureLabel>{} : rows[0][j].labels;
    const std::size_t cols = t.labels.size();
    std::vector<float> values;
    values.reserve(n * cols);
    for (std::size_t i = 0; i < n; ++i) {
      values.insert(values.end(), rows[i][j].values.begin(), rows[i][j].values.end());
      rows[i][j] = {};
    }
    t.X = Matrix(n, cols, std::move(values));
    out.push_back(std::move(t));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Feature CSV: header "path,label,<provenance>...", one row per image

namespace detail {

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) {
    if (c == '"') q += '"';
    q += c;
  }
  return q + '"';
}

inline std::string format_float(float v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  (void)ec;
  return std::string(buf, end);
}

}  // namespace detail

inline FeatureLabel parse_feature_label(const std::string& s) {
  const auto a = s.find(':'), b = s.find(':', a == std::string::npos ? a : a + 1);
  if (a == std::string::npos || b == std::string::npos) throw FormatError("bad feature label " + s);
  FeatureLabel l;
  const auto kind = parse_featurizer(s.substr(0, a));
  if (!kind) throw FormatError("bad feature label " + s);
  l.kind = *kind;
  l.layer = s.substr(a + 1, b - a - 1);
  if (l.layer != kRawLayer && !parse_tap(l.layer)) throw FormatError("bad layer in feature label " + s);
  const std::string rest = s.substr(b + 1);
  unsigned first = 0, second = 0;
  int used = 0;
  bool ok = false;
  switch (l.kind) {
    case Featurizer::Mean:
    case Featurizer::Max: ok = std::sscanf(rest.c_str(), "f%u%n", &first, &used) == 1; break;
    case Featurizer::Gram: ok = std::sscanf(rest.c_str(), "i%u_j%u%n", &first, &second, &used) == 2; break;
    case Featurizer::Vlad: ok = std::sscanf(rest.c_str(), "w%u_f%u%n", &first, &second, &used) == 2; break;
  }
  if (!ok || static_cast<std::size_t>(used) != rest.size()) throw FormatError("bad feature label " + s);
  l.first = first;
  l.second = second;
  return l;
}

inline void write_features_csv(const fs::path& path, const FeatureTable& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "path,label";
  for (const auto& l : t.labels) out << ',' << l.str();
  out << '\n';
  for (std::size_t i = 0; i < t.X.rows(); ++i) {
    out << detail::csv_field(t.names[i]) << ',' << detail::csv_field(t.classes[i]);
    for (float v : t.X.row(i)) out << ',' << detail::format_float(v);
    out << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

inline FeatureTable read_features_csv(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read features " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw FormatError(path.string() + ": empty features file");
  const auto header = detail::split_csv_line(line);
  if (header.size() < 3 || header[0] != "path" || header[1] != "label") {
    throw FormatError(path.string() + ": header must start with path,label and name at least one feature");
  }
  FeatureTable t;
  std::set<std::string> layers;
  for (std::size_t c = 2; c < header.size(); ++c) {
    t.labels.push_back(parse_feature_label(header[c]));
    if (t.labels.back().kind != t.labels.front().kind) throw FormatError(path.string() + ": mixed featurizers");
    layers.insert(t.labels.back().layer);
  }
  t.kind = t.labels.front().kind;
  for (const auto& l : layers) t.group.layers.push_back(l);
  std::stable_sort(t.group.layers.begin(), t.group.layers.end(),
                   [](const std::string& a, const std::string& b) { return layer_rank(a) < layer_rank(b); });

  std::vector<float> values;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto fields = detail::split_csv_line(line);
    if (fields.size() != header.size()) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": expected " + std::to_string(header.size()) +
                        " fields");
    }
    t.names.push_back(fields[0]);
    t.classes.push_back(fields[1]);
    for (std::size_t c = 2; c < fields.size(); ++c) {
      float v = 0;
      const auto& f = fields[c];
      auto [end, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
      if (ec != std::errc() || end != f.data() + f.size()) {
        throw FormatError(path.string() + ":" + std::to_string(line_no) + ": bad number \"" + f + "\"");
      }
      values.push_back(v);
    }
  }
  if (t.names.empty()) throw FormatError(path.string() + ": no rows");
  t.X = Matrix(t.names.size(), t.labels.size(), std::move(values));
  return t;
}

// ---------------------------------------------------------------------------
// Commands

/// Class names sorted ascending; labels become their indices.
inline std::pair<std::vector<int>, std::vector<std::string>> encode_labels(const std::vector<std::string>& labels) {
  std::vector<std::string> classes(labels.begin(), labels.end());
  std::sort(classes.begin(), classes.end());
  classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
  std::vector<int> y;
  y.reserve(labels.size());
  for (const auto& l : labels) y.push_back(static_cast<int>(std::lower_bound(classes.begin(), classes.end(), l) - classes.begin()));
  return {std::move(y), std::move(classes)};
}

inline EvalReport evaluate_table(const FeatureTable& t, const RunConfig& cfg) {
  const auto [y, classes] = encode_labels(t.classes);
  if (classes.size() < 2) throw DataError("evaluation needs at least 2 classes");
  CvConfig cv;
  cv.n_folds = cfg.n_folds;
  cv.n_trials = cfg.n_trials;
  cv.seed = stream_seed(cfg.seed, Stream::CrossValidation);
  cv.forest = cfg.forest;
  cv.jobs = cfg.jobs;
  auto report = cross_validate(t.X, y, cv);
  report.featurizer = featurizer_name(t.kind);
  report.taps = t.group.name();
  return report;
}

/// Forest fitted on every row, with the provenance needed to interpret it later.
inline json forest_dump(const FeatureTable& t, const RunConfig& cfg) {
  const auto [y, classes] = encode_labels(t.classes);
  TrainConfig fc = cfg.forest;
  fc.seed = stream_seed(cfg.seed, Stream::FinalForest);
  fc.jobs = cfg.jobs;
  auto j = RandomForest::fit(t.X, y, fc).to_json();
  j["class_names"] = classes;
  j["featurizer"] = featurizer_name(t.kind);
  j["taps"] = t.group.name();
  auto& labels = j["feature_labels"] = json::array();
  for (const auto& l : t.labels) labels.push_back(l.str());
  return j;
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

inline void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
}

/// Writes features_<featurizer>_<taps>.csv per combination; returns the paths written.
inline std::vector<fs::path> cmd_featurize(const RunConfig& cfg) {
  const auto tables = featurize_dataset(open_dataset(cfg), open_weights(cfg), cfg);
  ensure_dir(cfg.output);
  std::vector<fs::path> written;
  for (const auto& t : tables) {
    written.push_back(cfg.output / ("features_" + t.id() + ".csv"));
    write_features_csv(written.back(), t);
  }
  return written;
}

/// Writes evaluation.csv (per-trial F1 plus summary per combination) and forest_<id>.json dumps.
inline std::vector<EvalReport> cmd_evaluate(const RunConfig& cfg) {
  std::vector<FeatureTable> tables;
  if (cfg.features) {
    tables.push_back(read_features_csv(*cfg.features));
  } else {
    tables = featurize_dataset(open_dataset(cfg), open_weights(cfg), cfg);
  }
  ensure_dir(cfg.output);
  std::ostringstream csv;
  write_report_header(csv);
  std::vector<EvalReport> reports;
  for (const auto& t : tables) {
    reports.push_back(evaluate_table(t, cfg));
    write_report_rows(csv, reports.back());
    write_text(cfg.output / ("forest_" + t.id() + ".json"), forest_dump(t, cfg).dump(1) + "\n");
  }
  write_text(cfg.output / "evaluation.csv", csv.str());
  return reports;
}

struct VisualOutput {
  std::string mode;
  std::vector<fs::path> images;
  fs::path index;
};

namespace detail {

inline Tap require_tap(const std::string& layer, const VggConfig& net) {
  const auto t = parse_tap(layer);
  if (!t) throw UnsupportedError("layer " + layer + " has no network filters to visualize");
  if (!net.has_tap(*t)) throw RunConfigError("tap " + layer + " is beyond the network depth");
  return *t;
}

inline std::string image_name(const std::string& mode, Tap t, std::size_t filter) {
  return mode + "_" + std::string(tap_name(t)) + "_f" + std::to_string(filter) + ".png";
}

/// Renders texture images for (tap, filter) pairs in parallel; pair i uses ascent stream i's filter seed.
inline std::vector<TextureImage> render_textures(const WeightStore<float>& w, const std::vector<std::pair<Tap, std::size_t>>& what,
                                                 const RunConfig& cfg) {
  std::vector<TextureImage> out(what.size());
  parallel_for(what.size(), cfg.jobs, [&](std::size_t i) {
    AscentConfig a = cfg.ascent;
    a.seed = substream_seed(stream_seed(cfg.seed, Stream::Ascent),
                            static_cast<std::uint64_t>(tap_stack(what[i].first)) * 4096 + what[i].second);
    out[i] = texture_image(w, what[i].first, what[i].second, a);
  });
  return out;
}

}  // namespace detail

/// Renders PNGs for the configured visualize mode and writes visualize_<mode>.csv as an index.
inline VisualOutput cmd_visualize(const RunConfig& cfg) {
  const auto& v = cfg.visualize;
  VisualOutput result{v.mode, {}, cfg.output / ("visualize_" + v.mode + ".csv")};
  std::ostringstream index;
  auto tap_arg = [&]() {
    if (!v.tap) throw UsageError("visualize " + v.mode + " needs visualize.tap");
    const auto t = parse_tap(*v.tap);
    if (!t) throw RunConfigError("unknown tap " + *v.tap);
    return *t;
  };

  if (v.mode == "textures") {
    const Tap tap = tap_arg();
    const auto w = open_weights(cfg);
    for (auto f : v.filters) {
      if (f >= w.config().tap_channels(tap)) throw RunConfigError("filter " + std::to_string(f) + " out of range for " + *v.tap);
    }
    std::vector<std::pair<Tap, std::size_t>> what;
    for (auto f : v.filters) what.emplace_back(tap, f);
    ensure_dir(cfg.output);
    const auto tex = detail::render_textures(w, what, cfg);
    index << "tap,filter,objective,path\n";
    for (std::size_t i = 0; i < tex.size(); ++i) {
      const auto name = detail::image_name("textures", tap, what[i].second);
      write_png(cfg.output / name, tex[i].image);
      result.images.push_back(cfg.output / name);
      index << tap_name(tap) << ',' << what[i].second << ',' << format_number(tex[i].final_objective) << ',' << name
            << '\n';
    }
  } else if (v.mode == "important") {
    if (!v.forest) throw UsageError("visualize important needs visualize.forest (a forest dump from evaluate)");
    json dump;
    {
      std::ifstream in(*v.forest);
      if (!in) throw IoError("cannot read forest dump " + v.forest->string());
      try {
        dump = json::parse(in);
      } catch (const json::parse_error& e) {
        throw FormatError(v.forest->string() + ": " + e.what());
      }
    }
    const auto forest = RandomForest::from_json(dump);
    std::vector<FeatureLabel> labels;
    try {
      for (const auto& s : dump.at("feature_labels")) labels.push_back(parse_feature_label(s.get<std::string>()));
    } catch (const json::exception& e) {
      throw FormatError(v.forest->string() + ": missing feature_labels");
    }
    if (labels.size() != forest.n_features()) throw FormatError(v.forest->string() + ": feature_labels count mismatch");
    const auto top = top_important_textures(forest, labels, v.k);
    const auto w = open_weights(cfg);
    std::vector<std::pair<Tap, std::size_t>> what;
    for (const auto& r : top) what.emplace_back(detail::require_tap(r.layer, w.config()), r.filter);
    ensure_dir(cfg.output);
    const auto tex = detail::render_textures(w, what, cfg);
    index << "rank,tap,filter,importance,path\n";
    for (std::size_t i = 0; i < tex.size(); ++i) {
      const auto name = detail::image_name("important", what[i].first, what[i].second);
      write_png(cfg.output / name, tex[i].image);
      result.images.push_back(cfg.output / name);
      index << i + 1 << ',' << tap_name(what[i].first) << ',' << what[i].second << ',' << format_number(top[i].score)
            << ',' << name << '\n';
    }
  } else if (v.mode == "characteristic") {
    FeatureTable table;
    const auto w = open_weights(cfg);
    if (v.features) {
      table = read_features_csv(*v.features);
    } else {
      RunConfig one = cfg;
      one.featurizers = {cfg.featurizers.front()};
      one.taps = {cfg.taps.front()};
      table = std::move(featurize_dataset(open_dataset(one), w, one).front());
    }
    const auto chars = characteristic_textures(table.X, table.classes, table.labels);
    std::vector<std::pair<Tap, std::size_t>> what;
    for (const auto& c : chars) what.emplace_back(detail::require_tap(c.texture.layer, w.config()), c.texture.filter);
    ensure_dir(cfg.output);
    const auto tex = detail::render_textures(w, what, cfg);
    index << "class,tap,filter,score,path\n";
    for (std::size_t i = 0; i < tex.size(); ++i) {
      const auto name = detail::image_name("characteristic", what[i].first, what[i].second);
      write_png(cfg.output / name, tex[i].image);
      result.images.push_back(cfg.output / name);
      index << detail::csv_field(chars[i].label) << ',' << tap_name(what[i].first) << ',' << what[i].second << ','
            << format_number(chars[i].texture.score) << ',' << name << '\n';
    }
  } else if (v.mode == "heatmap") {
    if (!v.image) throw UsageError("visualize heatmap needs visualize.image");
    const Tap tap = tap_arg();
    const auto w = open_weights(cfg);
    const auto x = preprocess<float>(apply_preprocess(read_image(*v.image), cfg.image_spec), cfg.pixels);
    ensure_dir(cfg.output);
    index << "tap,filter,mean_activation,path\n";
    for (auto f : v.filters) {
      const auto h = activation_heatmap(x, w, tap, f);
      const auto name = detail::image_name("heatmap", tap, f);
      write_png(cfg.output / name, heatmap_to_image(h.upsampled));
      result.images.push_back(cfg.output / name);
      double mean = 0.0;
      for (float a : h.activation.values()) mean += a;
      mean /= static_cast<double>(h.activation.size());
      index << tap_name(tap) << ',' << f << ',' << format_number(mean) << ',' << name << '\n';
    }
  } else {
    throw UsageError("unknown visualize mode \"" + v.mode + "\" (textures, important, characteristic, heatmap)");
  }
  write_text(result.index, index.str());
  return result;
}

/// Writes the synthetic set as PNGs under <out>/images plus <out>/manifest.csv.
inline fs::path cmd_generate(const RunConfig& cfg) {
  SyntheticSpec spec;
  if (cfg.synthetic) {
    spec = *cfg.synthetic;
  } else {
    spec.classes = default_texture_classes();
    spec.seed = stream_seed(cfg.seed, Stream::Synthetic);
  }
  const auto set = generate_synthetic_textures(spec);
  ensure_dir(cfg.output / "images");
  std::ostringstream manifest;
  manifest << "path,label\n";
  for (std::size_t i = 0; i < set.size(); ++i) {
    const auto rel = fs::path("images") / synthetic_file_name(set[i].label, i % spec.n_per_class);
    write_png(cfg.output / rel, set[i].image);
    manifest << detail::csv_field(rel.generic_string()) << ',' << detail::csv_field(set[i].label) << '\n';
  }
  const auto path = cfg.output / "manifest.csv";
  write_text(path, manifest.str());
  return path;
}

/// Loads and validates a weight file; returns a one-line summary.
inline std::string cmd_convert_check(const fs::path& path, const VggConfig& network) {
  const auto store = load_weights(path, network);
  std::size_t params = 0;
  for (const auto& [name, k] : store.layers()) params += k.weights.size() + k.bias.size();
  return path.string() + ": OK, " + std::to_string(2 * store.layers().size()) + " entries, " + std::to_string(params) +
         " parameters, CRC32 valid";
}

}  // namespace mtex
