#pragma once

// Image ingestion: CSV manifests, crop/resize preprocessing and a synthetic
// labeled texture generator.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mtex/error.hpp"
#include "mtex/image.hpp"
#include "mtex/rng.hpp"
#include "mtex/tensor.hpp"

namespace mtex {

// ---------------------------------------------------------------------------
// Manifest

struct ManifestRecord {
  std::filesystem::path path;  // absolute or resolved against the manifest directory
  std::string label;
};

struct Manifest {
  std::vector<ManifestRecord> records;

  std::map<std::string, std::size_t> class_histogram() const {
    std::map<std::string, std::size_t> h;
    for (const auto& r : records) ++h[r.label];
    return h;
  }
};

namespace detail {

// Splits one CSV line; handles double-quoted fields with "" escapes.
inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        out.back() += '"';
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        out.back() += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      out.emplace_back();
    } else {
      out.back() += ch;
    }
  }
  return out;
}

inline std::string trim(std::string s) {
  const auto ws = [](unsigned char c) { return std::isspace(c) != 0; };
  s.erase(s.begin(), std::find_if_not(s.begin(), s.end(), ws));
  s.erase(std::find_if_not(s.rbegin(), s.rend(), ws).base(), s.end());
  return s;
}

}  // namespace detail

inline Manifest parse_manifest(std::istream& in, const std::filesystem::path& base_dir,
                               const std::string& what = "manifest") {
  std::string line;
  if (!std::getline(in, line)) throw ManifestError(what + ": empty file");
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3);  // UTF-8 BOM
  const auto header = detail::split_csv_line(detail::trim(line));
  if (header.size() != 2 || detail::trim(header[0]) != "path" || detail::trim(header[1]) != "label") {
    throw ManifestError(what + ": header must be \"path,label\"");
  }
  Manifest m;
  std::set<std::filesystem::path> seen;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    const auto fields = detail::split_csv_line(detail::trim(line));
    if (fields.size() != 2) throw ManifestError(what + ":" + std::to_string(line_no) + ": expected 2 fields");
    std::filesystem::path p = detail::trim(fields[0]);
    const std::string label = detail::trim(fields[1]);
    if (p.empty()) throw ManifestError(what + ":" + std::to_string(line_no) + ": empty path");
    if (label.empty()) throw ManifestError(what + ":" + std::to_string(line_no) + ": empty label");
    if (p.is_relative()) p = base_dir / p;
    p = p.lexically_normal();
    if (!seen.insert(p).second) throw ManifestError(what + ":" + std::to_string(line_no) + ": duplicate path " + p.string());
    m.records.push_back({p, label});
  }
  if (m.records.empty()) throw ManifestError(what + ": no records");
  return m;
}

inline Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ManifestError("cannot read manifest " + path.string());
  return parse_manifest(in, path.parent_path(), path.string());
}

// ---------------------------------------------------------------------------
// Preprocessing

struct CropMargins {
  std::size_t left = 0, top = 0, right = 0, bottom = 0;
};

struct PreprocessSpec {
  CropMargins crop;
  std::optional<std::pair<std::size_t, std::size_t>> resize;  // (height, width)
};

inline FeatureMap<float> image_to_map(const Image8& img) {
  FeatureMap<float> m(img.channels, img.height, img.width);
  for (std::size_t c = 0; c < img.channels; ++c) {
    for (std::size_t y = 0; y < img.height; ++y) {
      for (std::size_t x = 0; x < img.width; ++x) m(c, y, x) = img.at(y, x, c);
    }
  }
  return m;
}

inline Image8 map_to_image(const FeatureMap<float>& m) {
  Image8 img(m.width(), m.height(), m.channels());
  for (std::size_t c = 0; c < m.channels(); ++c) {
    for (std::size_t y = 0; y < m.height(); ++y) {
      for (std::size_t x = 0; x < m.width(); ++x) {
        img.at(y, x, c) = static_cast<std::uint8_t>(std::clamp(std::lround(m(c, y, x)), 0L, 255L));
      }
    }
  }
  return img;
}

/// Crop, then bilinear resize. A spec with zero margins and no resize returns the input unchanged.
inline Image8 apply_preprocess(const Image8& image, const PreprocessSpec& spec) {
  const auto& c = spec.crop;
  if (c.left + c.right >= image.width || c.top + c.bottom >= image.height) {
    throw SpecError("crop margins (" + std::to_string(c.left) + "," + std::to_string(c.top) + "," +
                    std::to_string(c.right) + "," + std::to_string(c.bottom) + ") exceed image " +
                    std::to_string(image.width) + "x" + std::to_string(image.height));
  }
  if (spec.resize && (spec.resize->first < 32 || spec.resize->second < 32)) {
    throw SpecError("resize target must be at least 32x32");
  }
  Image8 cropped(image.width - c.left - c.right, image.height - c.top - c.bottom, image.channels);
  for (std::size_t y = 0; y < cropped.height; ++y) {
    const auto* src = image.pixels.data() + ((y + c.top) * image.width + c.left) * image.channels;
    std::copy_n(src, cropped.width * image.channels, cropped.pixels.data() + y * cropped.width * image.channels);
  }
  if (!spec.resize || (spec.resize->first == cropped.height && spec.resize->second == cropped.width)) return cropped;
  return map_to_image(resize_bilinear(image_to_map(cropped), spec.resize->first, spec.resize->second));
}

// ---------------------------------------------------------------------------
// Synthetic textures

struct TextureClass {
  enum class Kind { Stripes, Dots, Checker };
  std::string label;
  Kind kind = Kind::Stripes;
  double angle_deg = 0.0;  // stripes
  double period = 8.0;     // stripes, pixels
  double radius = 3.0;     // dots, pixels
  double density = 0.2;    // dots, fraction of area covered (before overlap)
  double cell = 8.0;       // checker, pixels
};

struct SyntheticSpec {
  std::vector<TextureClass> classes;
  std::size_t n_per_class = 30;
  std::size_t size = 64;
  double noise = 0.0;  // stddev of additive Gaussian pixel noise
  std::uint64_t seed = 0;
};

/// Three microconstituent-like classes: lamellar stripes, dots, and a cell-like checker.
inline std::vector<TextureClass> default_texture_classes() {
  using K = TextureClass::Kind;
  return {{"pearlite", K::Stripes, 30.0, 6.0, 0, 0, 0},
          {"spheroidite", K::Dots, 0, 0, 2.5, 0.25, 0},
          {"network", K::Checker, 0, 0, 0, 0, 10.0}};
}

struct LabeledImage {
  Image8 image;
  std::string label;
};

/// Grayscale texture images, class-major order. Image i draws from Rng::substream(seed, i).
inline std::vector<LabeledImage> generate_synthetic_textures(const SyntheticSpec& spec) {
  if (spec.classes.size() < 2) throw ArgumentError("synthetic textures need at least 2 classes");
  if (spec.size < 32) throw ArgumentError("synthetic image size must be at least 32");
  if (spec.n_per_class == 0) throw ArgumentError("n_per_class must be positive");
  if (spec.noise < 0.0) throw ArgumentError("noise must be non-negative");
  std::set<std::string> labels;
  for (const auto& c : spec.classes) {
    if (c.label.empty() || !labels.insert(c.label).second) throw ArgumentError("class labels must be unique and non-empty");
    const bool bad = (c.kind == TextureClass::Kind::Stripes && !(c.period > 0)) ||
                     (c.kind == TextureClass::Kind::Dots && (!(c.radius > 0) || !(c.density > 0))) ||
                     (c.kind == TextureClass::Kind::Checker && !(c.cell > 0));
    if (bad) throw ArgumentError("invalid texture parameters for class " + c.label);
  }

  const std::size_t n = spec.size;
  std::vector<LabeledImage> out;
  out.reserve(spec.classes.size() * spec.n_per_class);
  for (std::size_t ci = 0; ci < spec.classes.size(); ++ci) {
    const auto& cls = spec.classes[ci];
    for (std::size_t k = 0; k < spec.n_per_class; ++k) {
      Rng rng = Rng::substream(spec.seed, ci * spec.n_per_class + k);
      std::vector<double> v(n * n);
      switch (cls.kind) {
        case TextureClass::Kind::Stripes: {
          const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
          const double th = cls.angle_deg * std::numbers::pi / 180.0;
          const double cx = std::cos(th), sy = std::sin(th);
          for (std::size_t y = 0; y < n; ++y) {
            for (std::size_t x = 0; x < n; ++x) {
              const double t = (static_cast<double>(x) * cx + static_cast<double>(y) * sy) / cls.period;
              v[y * n + x] = 128.0 + 100.0 * std::sin(2.0 * std::numbers::pi * t + phase);
            }
          }
          break;
        }
        case TextureClass::Kind::Dots: {
          std::fill(v.begin(), v.end(), 40.0);
          const double area = static_cast<double>(n * n);
          const auto count = static_cast<std::size_t>(
              std::max(1.0, std::round(cls.density * area / (std::numbers::pi * cls.radius * cls.radius))));
          const double r2 = cls.radius * cls.radius;
          for (std::size_t d = 0; d < count; ++d) {
            const double px = rng.uniform(0.0, static_cast<double>(n));
            const double py = rng.uniform(0.0, static_cast<double>(n));
            const auto y0 = static_cast<std::ptrdiff_t>(std::floor(py - cls.radius));
            const auto x0 = static_cast<std::ptrdiff_t>(std::floor(px - cls.radius));
            const auto span = static_cast<std::ptrdiff_t>(std::ceil(2.0 * cls.radius)) + 1;
            for (std::ptrdiff_t y = y0; y <= y0 + span; ++y) {
              for (std::ptrdiff_t x = x0; x <= x0 + span; ++x) {
                if (y < 0 || x < 0 || y >= static_cast<std::ptrdiff_t>(n) || x >= static_cast<std::ptrdiff_t>(n)) continue;
                const double dx = static_cast<double>(x) + 0.5 - px, dy = static_cast<double>(y) + 0.5 - py;
                if (dx * dx + dy * dy <= r2) v[static_cast<std::size_t>(y) * n + static_cast<std::size_t>(x)] = 220.0;
              }
            }
          }
          break;
        }
        case TextureClass::Kind::Checker: {
          const double ox = rng.uniform(0.0, 2.0 * cls.cell);
          const double oy = rng.uniform(0.0, 2.0 * cls.cell);
          for (std::size_t y = 0; y < n; ++y) {
            for (std::size_t x = 0; x < n; ++x) {
              const auto cx = static_cast<long>(std::floor((static_cast<double>(x) + ox) / cls.cell));
              const auto cy = static_cast<long>(std::floor((static_cast<double>(y) + oy) / cls.cell));
              v[y * n + x] = ((cx + cy) % 2 == 0) ? 60.0 : 200.0;
            }
          }
          break;
        }
      }
      Image8 img(n, n, 1);
      for (std::size_t i = 0; i < n * n; ++i) {
        const double noisy = spec.noise > 0.0 ? v[i] + rng.normal(0.0, spec.noise) : v[i];
        img.pixels[i] = static_cast<std::uint8_t>(std::clamp(std::lround(noisy), 0L, 255L));
      }
      out.push_back({std::move(img), cls.label});
    }
  }
  return out;
}

}  // namespace mtex
