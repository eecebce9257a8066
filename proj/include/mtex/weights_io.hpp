#pragma once

// MTEXW001 weight container (all integers little-endian):
//
//   "MTEXW001"                       8-byte magic
//   u32 entry_count
//   entry_count x {
//     u16 name_len, name bytes (UTF-8)
//     u8 ndim, ndim x u32 dims
//     prod(dims) x float32
//   }
//   u32 CRC32 (IEEE) of every byte after the magic
//
// Kernels are stored as "conv{s}_{i}" with dims (out, in, kh, kw); biases as
// "conv{s}_{i}.bias" with one dimension.

#include <zlib.h>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "mtex/cnn.hpp"
#include "mtex/error.hpp"
#include "mtex/image.hpp"

namespace mtex {

inline constexpr std::string_view kWeightMagic = "MTEXW001";

inline std::uint32_t crc32_ieee(const std::uint8_t* data, std::size_t size) {
  uLong crc = crc32(0L, Z_NULL, 0);
  while (size > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(size, 1U << 30));
    crc = crc32(crc, data, chunk);
    data += chunk;
    size -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

namespace detail {

class ByteWriter {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::uint16_t v) {
    for (int i = 0; i < 2; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  std::vector<std::uint8_t>& buffer() { return out_; }

 private:
  std::vector<std::uint8_t> out_;
};

class ByteReader {
 public:
  ByteReader(const std::uint8_t* data, std::size_t size) : p_(data), end_(data + size) {}
  void need(std::size_t n) const {
    if (static_cast<std::size_t>(end_ - p_) < n) throw CorruptionError("weight file truncated");
  }
  std::uint8_t u8() {
    need(1);
    return *p_++;
  }
  std::uint16_t u16() {
    need(2);
    const auto v = static_cast<std::uint16_t>(p_[0] | p_[1] << 8);
    p_ += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{p_[i]} << (8 * i);
    p_ += 4;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(p_), n);
    p_ += n;
    return s;
  }
  bool at_end() const { return p_ == end_; }

 private:
  const std::uint8_t* p_;
  const std::uint8_t* end_;
};

struct RawEntry {
  std::vector<std::uint32_t> dims;
  std::vector<float> values;
};

}  // namespace detail

/// Serializes a float weight store; layers in network order, each kernel followed by its bias.
inline std::vector<std::uint8_t> serialize_weights(const WeightStore<float>& store) {
  detail::ByteWriter w;
  w.bytes(kWeightMagic.data(), kWeightMagic.size());
  const auto specs = store.config().layers();
  w.u32(static_cast<std::uint32_t>(2 * specs.size()));
  auto entry = [&](const std::string& name, const std::vector<std::uint32_t>& dims, const std::vector<float>& v) {
    w.u16(static_cast<std::uint16_t>(name.size()));
    w.bytes(name.data(), name.size());
    w.u8(static_cast<std::uint8_t>(dims.size()));
    for (auto d : dims) w.u32(d);
    for (float x : v) w.f32(x);
  };
  for (const auto& spec : specs) {
    const auto& k = store.layer(spec.name);
    entry(spec.name,
          {static_cast<std::uint32_t>(k.out_channels), static_cast<std::uint32_t>(k.in_channels),
           static_cast<std::uint32_t>(k.kernel_h), static_cast<std::uint32_t>(k.kernel_w)},
          k.weights);
    entry(spec.name + ".bias", {static_cast<std::uint32_t>(k.out_channels)}, k.bias);
  }
  auto& buf = w.buffer();
  const std::uint32_t crc = crc32_ieee(buf.data() + kWeightMagic.size(), buf.size() - kWeightMagic.size());
  w.u32(crc);
  return std::move(w.buffer());
}

/// Parses and validates an MTEXW001 image against `config`.
inline WeightStore<float> parse_weights(const std::vector<std::uint8_t>& bytes,
                                        const VggConfig& config = VggConfig::vgg16()) {
  if (bytes.size() < kWeightMagic.size() ||
      std::memcmp(bytes.data(), kWeightMagic.data(), kWeightMagic.size()) != 0) {
    throw FormatError("not an MTEXW001 weight file (bad magic or version)");
  }
  if (bytes.size() < kWeightMagic.size() + 8) throw CorruptionError("weight file truncated");
  const std::size_t body = bytes.size() - 4;
  detail::ByteReader tail(bytes.data() + body, 4);
  if (crc32_ieee(bytes.data() + kWeightMagic.size(), body - kWeightMagic.size()) != tail.u32()) {
    throw CorruptionError("weight file CRC32 mismatch (truncated or corrupted)");
  }

  detail::ByteReader r(bytes.data() + kWeightMagic.size(), body - kWeightMagic.size());
  const std::uint32_t count = r.u32();
  std::map<std::string, detail::RawEntry> entries;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.str(r.u16());
    detail::RawEntry e;
    e.dims.resize(r.u8());
    std::uint64_t n = 1;
    for (auto& d : e.dims) {
      d = r.u32();
      n *= d;
    }
    r.need(static_cast<std::size_t>(n * 4));
    e.values.resize(static_cast<std::size_t>(n));
    for (auto& v : e.values) v = r.f32();
    if (!entries.emplace(name, std::move(e)).second) throw SchemaError("duplicate weight entry " + name);
  }
  if (!r.at_end()) throw CorruptionError("trailing bytes after last weight entry");

  std::map<std::string, ConvKernel<float>> layers;
  for (const auto& spec : config.layers()) {
    auto kit = entries.find(spec.name);
    auto bit = entries.find(spec.name + ".bias");
    if (kit == entries.end()) throw SchemaError("missing weight entry " + spec.name);
    if (bit == entries.end()) throw SchemaError("missing weight entry " + spec.name + ".bias");
    const auto& kd = kit->second.dims;
    const std::vector<std::uint32_t> want{static_cast<std::uint32_t>(spec.out_channels),
                                          static_cast<std::uint32_t>(spec.in_channels),
                                          static_cast<std::uint32_t>(config.kernel_size),
                                          static_cast<std::uint32_t>(config.kernel_size)};
    if (kd != want) {
      std::string got;
      for (auto d : kd) got += (got.empty() ? "" : "x") + std::to_string(d);
      throw SchemaError("layer " + spec.name + " has shape " + got + ", expected " + std::to_string(want[0]) + "x" +
                        std::to_string(want[1]) + "x" + std::to_string(want[2]) + "x" + std::to_string(want[3]));
    }
    if (bit->second.dims != std::vector<std::uint32_t>{want[0]}) {
      throw SchemaError("bias " + spec.name + ".bias has wrong shape");
    }
    ConvKernel<float> k(spec.out_channels, spec.in_channels, config.kernel_size, config.kernel_size);
    k.weights = std::move(kit->second.values);
    k.bias = std::move(bit->second.values);
    layers.emplace(spec.name, std::move(k));
    entries.erase(kit);
    entries.erase(spec.name + ".bias");
  }
  if (!entries.empty()) throw SchemaError("unexpected weight entry " + entries.begin()->first);
  return WeightStore<float>(config, std::move(layers));
}

inline WeightStore<float> load_weights(const std::filesystem::path& path,
                                       const VggConfig& config = VggConfig::vgg16()) {
  if (!std::filesystem::exists(path)) throw IoError("weights file not found: " + path.string());
  return parse_weights(read_file_bytes(path), config);
}

inline void save_weights(const std::filesystem::path& path, const WeightStore<float>& store) {
  write_file_bytes(path, serialize_weights(store));
}

}  // namespace mtex
