#pragma once

// 8-bit raster images and file I/O. PNG goes through libpng's simplified API;
// TIFF support covers the uncompressed baseline subset (8-bit gray or RGB,
// chunky planar configuration), which is what microscope exports produce.

#include <png.h>

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "mtex/error.hpp"

namespace mtex {

/// Interleaved row-major 8-bit image with 1 (gray) or 3 (RGB) channels.
struct Image8 {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 1;
  std::vector<std::uint8_t> pixels;

  Image8() = default;
  Image8(std::size_t w, std::size_t h, std::size_t c, std::uint8_t fill = 0)
      : width(w), height(h), channels(c), pixels(w * h * c, fill) {}

  std::uint8_t& at(std::size_t y, std::size_t x, std::size_t c = 0) noexcept {
    return pixels[(y * width + x) * channels + c];
  }
  std::uint8_t at(std::size_t y, std::size_t x, std::size_t c = 0) const noexcept {
    return pixels[(y * width + x) * channels + c];
  }

  friend bool operator==(const Image8&, const Image8&) = default;
};

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

// ---------------------------------------------------------------------------
// PNG

inline Image8 decode_png(const std::vector<std::uint8_t>& bytes, const std::string& what = "PNG data") {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size())) {
    throw IoError(what + ": " + img.message);
  }
  const bool color = (img.format & PNG_FORMAT_FLAG_COLOR) != 0;
  img.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  Image8 out(img.width, img.height, color ? 3 : 1);
  if (!png_image_finish_read(&img, nullptr, out.pixels.data(), 0, nullptr)) {
    throw IoError(what + ": " + img.message);
  }
  return out;
}

inline void write_png(const std::filesystem::path& path, const Image8& image) {
  if (image.channels != 1 && image.channels != 3) throw ArgumentError("write_png: 1 or 3 channels required");
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = image.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&img, path.string().c_str(), 0, image.pixels.data(), 0, nullptr)) {
    throw IoError("write_png " + path.string() + ": " + img.message);
  }
}

// ---------------------------------------------------------------------------
// TIFF (baseline, uncompressed)

namespace detail {

class TiffReader {
 public:
  TiffReader(const std::vector<std::uint8_t>& bytes, std::string what) : b_(bytes), what_(std::move(what)) {
    if (b_.size() < 8) fail("file too short");
    if (b_[0] == 'I' && b_[1] == 'I') {
      little_ = true;
    } else if (b_[0] == 'M' && b_[1] == 'M') {
      little_ = false;
    } else {
      fail("bad byte-order mark");
    }
    if (u16(2) != 42) fail("not a classic TIFF");
  }

  Image8 decode() {
    const std::uint32_t ifd = u32(4);
    const std::uint16_t count = u16(ifd);
    std::uint32_t width = 0, height = 0, compression = 1, photometric = 1, samples = 1, planar = 1;
    std::uint32_t rows_per_strip = ~0U;
    std::vector<std::uint32_t> bits, offsets, byte_counts;
    for (std::uint16_t i = 0; i < count; ++i) {
      const std::size_t e = ifd + 2 + 12 * std::size_t{i};
      const std::uint16_t tag = u16(e);
      auto values = read_values(e);
      auto first = [&] { return values.empty() ? 0U : values.front(); };
      switch (tag) {
        case 256: width = first(); break;
        case 257: height = first(); break;
        case 258: bits = values; break;
        case 259: compression = first(); break;
        case 262: photometric = first(); break;
        case 273: offsets = values; break;
        case 277: samples = first(); break;
        case 278: rows_per_strip = first(); break;
        case 279: byte_counts = values; break;
        case 284: planar = first(); break;
        default: break;
      }
    }
    if (width == 0 || height == 0) fail("missing dimensions");
    if (compression != 1) throw UnsupportedError(what_ + ": compressed TIFF is not supported");
    if (samples != 1 && samples != 3) throw UnsupportedError(what_ + ": only gray or RGB TIFF is supported");
    if (planar != 1 && samples > 1) throw UnsupportedError(what_ + ": planar TIFF is not supported");
    if (bits.empty()) bits.assign(samples, 1);
    if (std::any_of(bits.begin(), bits.end(), [](std::uint32_t v) { return v != 8; })) {
      throw UnsupportedError(what_ + ": only 8-bit samples are supported");
    }
    if (photometric > 2) throw UnsupportedError(what_ + ": unsupported photometric interpretation");
    if (offsets.empty() || offsets.size() != byte_counts.size()) fail("bad strip tables");

    Image8 img(width, height, samples);
    const std::size_t total = img.pixels.size();
    std::size_t pos = 0;
    (void)rows_per_strip;
    for (std::size_t s = 0; s < offsets.size() && pos < total; ++s) {
      const std::size_t n = std::min<std::size_t>(byte_counts[s], total - pos);
      if (std::size_t{offsets[s]} + n > b_.size()) fail("strip past end of file");
      std::copy_n(b_.begin() + offsets[s], n, img.pixels.begin() + static_cast<std::ptrdiff_t>(pos));
      pos += n;
    }
    if (pos != total) fail("not enough pixel data");
    if (photometric == 0) {
      for (auto& p : img.pixels) p = static_cast<std::uint8_t>(255 - p);
    }
    return img;
  }

 private:
  [[noreturn]] void fail(const std::string& msg) const { throw IoError(what_ + ": " + msg); }

  void need(std::size_t off, std::size_t n) const {
    if (off + n > b_.size()) fail("truncated");
  }
  std::uint16_t u16(std::size_t off) const {
    need(off, 2);
    return little_ ? static_cast<std::uint16_t>(b_[off] | b_[off + 1] << 8)
                   : static_cast<std::uint16_t>(b_[off] << 8 | b_[off + 1]);
  }
  std::uint32_t u32(std::size_t off) const {
    need(off, 4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      const std::uint32_t byte = b_[off + static_cast<std::size_t>(i)];
      v |= little_ ? byte << (8 * i) : byte << (8 * (3 - i));
    }
    return v;
  }

  std::vector<std::uint32_t> read_values(std::size_t entry) const {
    const std::uint16_t type = u16(entry + 2);
    const std::uint32_t n = u32(entry + 4);
    std::size_t size = 0;
    switch (type) {
      case 1: size = 1; break;  // BYTE
      case 3: size = 2; break;  // SHORT
      case 4: size = 4; break;  // LONG
      default: return {};
    }
    const std::size_t base = size * n <= 4 ? entry + 8 : u32(entry + 8);
    std::vector<std::uint32_t> out(n);
    for (std::uint32_t i = 0; i < n; ++i) {
      const std::size_t off = base + size * i;
      if (size == 1) {
        need(off, 1);
        out[i] = b_[off];
      } else if (size == 2) {
        out[i] = u16(off);
      } else {
        out[i] = u32(off);
      }
    }
    return out;
  }

  const std::vector<std::uint8_t>& b_;
  std::string what_;
  bool little_ = true;
};

}  // namespace detail

inline Image8 decode_tiff(const std::vector<std::uint8_t>& bytes, const std::string& what = "TIFF data") {
  return detail::TiffReader(bytes, what).decode();
}

/// Reads a PNG or baseline TIFF, chosen by file signature. Other formats are rejected.
inline Image8 read_image(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  static constexpr std::array<std::uint8_t, 8> kPngSig{0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A};
  if (bytes.size() >= 8 && std::equal(kPngSig.begin(), kPngSig.end(), bytes.begin())) {
    return decode_png(bytes, path.string());
  }
  if (bytes.size() >= 4 && ((bytes[0] == 'I' && bytes[1] == 'I') || (bytes[0] == 'M' && bytes[1] == 'M'))) {
    return decode_tiff(bytes, path.string());
  }
  throw UnsupportedError(path.string() + ": unsupported image format (PNG or TIFF expected)");
}

}  // namespace mtex
