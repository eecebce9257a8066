#pragma once

// Test-only reference implementations. Each is written in the most literal
// form of its definition and shares no code with the library kernels.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <vector>

#include "mtex/tensor.hpp"

namespace oracle {

// Plain nested-vector tensor: t[c][y][x].
using Tensor3 = std::vector<std::vector<std::vector<double>>>;

template <typename T>
Tensor3 to_nested(const mtex::FeatureMap<T>& m) {
  Tensor3 t(m.channels(), std::vector<std::vector<double>>(m.height(), std::vector<double>(m.width())));
  for (std::size_t c = 0; c < m.channels(); ++c)
    for (std::size_t y = 0; y < m.height(); ++y)
      for (std::size_t x = 0; x < m.width(); ++x) t[c][y][x] = m(c, y, x);
  return t;
}

template <typename T>
mtex::FeatureMap<T> random_map(std::mt19937_64& gen, std::size_t c, std::size_t h, std::size_t w, double lo = -1.0,
                               double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  mtex::FeatureMap<T> m(c, h, w);
  for (auto& v : m.values()) v = static_cast<T>(d(gen));
  return m;
}

template <typename T>
mtex::ConvKernel<T> random_kernel(std::mt19937_64& gen, std::size_t out, std::size_t in, std::size_t kh = 3,
                                  std::size_t kw = 3) {
  std::uniform_real_distribution<double> d(-1.0, 1.0);
  mtex::ConvKernel<T> k(out, in, kh, kw);
  for (auto& v : k.weights) v = static_cast<T>(d(gen));
  for (auto& v : k.bias) v = static_cast<T>(d(gen));
  return k;
}

// Quadruple loop over (o, y, x) x (c, dy, dx) straight from the definition.
template <typename T>
Tensor3 conv2d(const mtex::FeatureMap<T>& in, const mtex::ConvKernel<T>& k) {
  const auto x = to_nested(in);
  const long H = static_cast<long>(in.height()), W = static_cast<long>(in.width());
  const long ph = static_cast<long>(k.kernel_h / 2), pw = static_cast<long>(k.kernel_w / 2);
  Tensor3 out(k.out_channels, std::vector<std::vector<double>>(in.height(), std::vector<double>(in.width())));
  for (std::size_t o = 0; o < k.out_channels; ++o)
    for (long yy = 0; yy < H; ++yy)
      for (long xx = 0; xx < W; ++xx) {
        double s = k.bias[o];
        for (std::size_t c = 0; c < k.in_channels; ++c)
          for (long dy = 0; dy < static_cast<long>(k.kernel_h); ++dy)
            for (long dx = 0; dx < static_cast<long>(k.kernel_w); ++dx) {
              const long sy = yy + dy - ph, sx = xx + dx - pw;
              if (sy < 0 || sy >= H || sx < 0 || sx >= W) continue;
              s += x[c][sy][sx] * k.weights[((o * k.in_channels + c) * k.kernel_h + dy) * k.kernel_w + dx];
            }
        out[o][yy][xx] = s;
      }
  return out;
}

template <typename T>
Tensor3 maxpool2(const mtex::FeatureMap<T>& in) {
  const auto x = to_nested(in);
  Tensor3 out(in.channels(), std::vector<std::vector<double>>(in.height() / 2, std::vector<double>(in.width() / 2)));
  for (std::size_t c = 0; c < in.channels(); ++c)
    for (std::size_t y = 0; y < in.height() / 2; ++y)
      for (std::size_t xx = 0; xx < in.width() / 2; ++xx) {
        double m = -std::numeric_limits<double>::infinity();
        for (std::size_t a = 0; a < 2; ++a)
          for (std::size_t b = 0; b < 2; ++b) m = std::max(m, x[c][2 * y + a][2 * xx + b]);
        out[c][y][xx] = m;
      }
  return out;
}

// Per-pixel evaluation of src = (dst + 0.5) * scale - 0.5, clamped, then bilinear blend.
template <typename T>
double bilinear_at(const mtex::FeatureMap<T>& in, std::size_t c, std::size_t dy, std::size_t dx, std::size_t th,
                   std::size_t tw) {
  auto coord = [](std::size_t d, std::size_t src, std::size_t dst) {
    double s = (d + 0.5) * (static_cast<double>(src) / static_cast<double>(dst)) - 0.5;
    if (s < 0) s = 0;
    if (s > static_cast<double>(src - 1)) s = static_cast<double>(src - 1);
    return s;
  };
  const double sy = coord(dy, in.height(), th), sx = coord(dx, in.width(), tw);
  const auto y0 = static_cast<std::size_t>(sy), x0 = static_cast<std::size_t>(sx);
  const std::size_t y1 = std::min(y0 + 1, in.height() - 1), x1 = std::min(x0 + 1, in.width() - 1);
  const double fy = sy - y0, fx = sx - x0;
  return in(c, y0, x0) * (1 - fy) * (1 - fx) + in(c, y0, x1) * (1 - fy) * fx + in(c, y1, x0) * fy * (1 - fx) +
         in(c, y1, x1) * fy * fx;
}

// Central difference of a scalar function of the map along `direction`.
template <typename T>
double directional_fd(const std::function<double(const mtex::FeatureMap<T>&)>& f, const mtex::FeatureMap<T>& at,
                      const mtex::FeatureMap<T>& direction, double step) {
  auto plus = at, minus = at;
  for (std::size_t i = 0; i < at.size(); ++i) {
    plus.values()[i] += static_cast<T>(step * direction.values()[i]);
    minus.values()[i] -= static_cast<T>(step * direction.values()[i]);
  }
  return (f(plus) - f(minus)) / (2.0 * step);
}

template <typename T>
double dot(const mtex::FeatureMap<T>& a, const mtex::FeatureMap<T>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a.values()[i]) * b.values()[i];
  return s;
}

inline double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-12});
}

}  // namespace oracle
