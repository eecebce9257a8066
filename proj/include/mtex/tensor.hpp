#pragma once

// Dense (channel, row, col) arrays and the handful of kernels the VGG stack
// needs: same-padded stride-1 convolution, ReLU, 2x2 max pooling and bilinear
// resampling, plus the input gradients used by activation maximization.
//
// Everything is templated on the scalar type. Production code runs in float;
// gradient checks instantiate double.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <cblas.h>

#include "mtex/error.hpp"

namespace mtex {

template <typename T = float>
class FeatureMap {
 public:
  using value_type = T;

  FeatureMap() = default;

  FeatureMap(std::size_t channels, std::size_t height, std::size_t width, T fill = T{0})
      : channels_(channels), height_(height), width_(width) {
    check_dims();
    values_.assign(channels * height * width, fill);
  }

  FeatureMap(std::size_t channels, std::size_t height, std::size_t width, std::vector<T> values)
      : channels_(channels), height_(height), width_(width), values_(std::move(values)) {
    check_dims();
    if (values_.size() != channels * height * width) {
      throw ConfigError("FeatureMap: value count does not match channels*height*width");
    }
  }

  std::size_t channels() const noexcept { return channels_; }
  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t plane_size() const noexcept { return height_ * width_; }
  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }

  T& operator()(std::size_t c, std::size_t y, std::size_t x) noexcept {
    return values_[(c * height_ + y) * width_ + x];
  }
  const T& operator()(std::size_t c, std::size_t y, std::size_t x) const noexcept {
    return values_[(c * height_ + y) * width_ + x];
  }

  std::span<T> channel(std::size_t c) noexcept { return {values_.data() + c * plane_size(), plane_size()}; }
  std::span<const T> channel(std::size_t c) const noexcept {
    return {values_.data() + c * plane_size(), plane_size()};
  }

  std::span<T> values() noexcept { return values_; }
  std::span<const T> values() const noexcept { return values_; }
  T* data() noexcept { return values_.data(); }
  const T* data() const noexcept { return values_.data(); }

  bool same_shape(const FeatureMap& other) const noexcept {
    return channels_ == other.channels_ && height_ == other.height_ && width_ == other.width_;
  }

  bool all_finite() const noexcept {
    return std::all_of(values_.begin(), values_.end(), [](T v) { return std::isfinite(v); });
  }

  std::string shape_string() const {
    std::ostringstream os;
    os << channels_ << "x" << height_ << "x" << width_;
    return os.str();
  }

  template <typename U>
  FeatureMap<U> cast() const {
    return FeatureMap<U>(channels_, height_, width_, std::vector<U>(values_.begin(), values_.end()));
  }

  friend bool operator==(const FeatureMap&, const FeatureMap&) = default;

 private:
  void check_dims() const {
    if (channels_ == 0 || height_ == 0 || width_ == 0) {
      throw SizeError("FeatureMap: channels, height and width must be at least 1");
    }
  }

  std::size_t channels_ = 0;
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<T> values_;
};

/// Convolution weights in (out, in, kh, kw) order plus one bias per output channel.
template <typename T = float>
struct ConvKernel {
  std::size_t out_channels = 0;
  std::size_t in_channels = 0;
  std::size_t kernel_h = 3;
  std::size_t kernel_w = 3;
  std::vector<T> weights;
  std::vector<T> bias;

  ConvKernel() = default;
  ConvKernel(std::size_t out, std::size_t in, std::size_t kh, std::size_t kw)
      : out_channels(out), in_channels(in), kernel_h(kh), kernel_w(kw),
        weights(out * in * kh * kw, T{0}), bias(out, T{0}) {}

  T& at(std::size_t o, std::size_t c, std::size_t dy, std::size_t dx) noexcept {
    return weights[((o * in_channels + c) * kernel_h + dy) * kernel_w + dx];
  }
  const T& at(std::size_t o, std::size_t c, std::size_t dy, std::size_t dx) const noexcept {
    return weights[((o * in_channels + c) * kernel_h + dy) * kernel_w + dx];
  }

  bool valid() const noexcept {
    return weights.size() == out_channels * in_channels * kernel_h * kernel_w &&
           bias.size() == out_channels && kernel_h >= 1 && kernel_w >= 1;
  }

  template <typename U>
  ConvKernel<U> cast() const {
    ConvKernel<U> k;
    k.out_channels = out_channels;
    k.in_channels = in_channels;
    k.kernel_h = kernel_h;
    k.kernel_w = kernel_w;
    k.weights.assign(weights.begin(), weights.end());
    k.bias.assign(bias.begin(), bias.end());
    return k;
  }

  friend bool operator==(const ConvKernel&, const ConvKernel&) = default;
};

namespace detail {

// Range of output coordinates o in [0, n) for which o + offset stays inside [0, n).
inline std::pair<std::ptrdiff_t, std::ptrdiff_t> valid_range(std::ptrdiff_t n, std::ptrdiff_t offset) {
  return {std::max<std::ptrdiff_t>(0, -offset), std::min<std::ptrdiff_t>(n, n - offset)};
}

// Single-threaded BLAS: callers parallelize over images, and results must not depend on thread count.
inline void blas_single_thread() {
  static const bool once = [] {
    openblas_set_num_threads(1);
    return true;
  }();
  (void)once;
}

// c (m x n) += op(a) * b, row-major; op(a) is a (m x k) or, if a_trans, the transpose of a (k x m).
inline void gemm(bool a_trans, std::size_t m, std::size_t n, std::size_t k, const float* a, std::size_t lda,
                 const float* b, std::size_t ldb, float* c, std::size_t ldc) {
  blas_single_thread();
  cblas_sgemm(CblasRowMajor, a_trans ? CblasTrans : CblasNoTrans, CblasNoTrans, static_cast<int>(m),
              static_cast<int>(n), static_cast<int>(k), 1.0f, a, static_cast<int>(lda), b, static_cast<int>(ldb), 1.0f,
              c, static_cast<int>(ldc));
}

inline void gemm(bool a_trans, std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
                 const double* b, std::size_t ldb, double* c, std::size_t ldc) {
  blas_single_thread();
  cblas_dgemm(CblasRowMajor, a_trans ? CblasTrans : CblasNoTrans, CblasNoTrans, static_cast<int>(m),
              static_cast<int>(n), static_cast<int>(k), 1.0, a, static_cast<int>(lda), b, static_cast<int>(ldb), 1.0,
              c, static_cast<int>(ldc));
}

// Rows (c, dy, dx), columns (y, x): the input pixel under tap (dy, dx) of the window centred at (y, x), zero outside.
template <typename T>
std::vector<T> im2col(const FeatureMap<T>& input, std::size_t kh, std::size_t kw) {
  const auto h = static_cast<std::ptrdiff_t>(input.height());
  const auto w = static_cast<std::ptrdiff_t>(input.width());
  const std::size_t hw = input.plane_size();
  std::vector<T> cols(input.channels() * kh * kw * hw, T{0});
  T* row = cols.data();
  for (std::size_t c = 0; c < input.channels(); ++c) {
    const T* src = input.channel(c).data();
    for (std::size_t dy = 0; dy < kh; ++dy) {
      const std::ptrdiff_t oy = static_cast<std::ptrdiff_t>(dy) - static_cast<std::ptrdiff_t>(kh / 2);
      const auto [y0, y1] = valid_range(h, oy);
      for (std::size_t dx = 0; dx < kw; ++dx, row += hw) {
        const std::ptrdiff_t ox = static_cast<std::ptrdiff_t>(dx) - static_cast<std::ptrdiff_t>(kw / 2);
        const auto [x0, x1] = valid_range(w, ox);
        if (x0 >= x1) continue;
        for (std::ptrdiff_t y = y0; y < y1; ++y) {
          std::copy(src + (y + oy) * w + ox + x0, src + (y + oy) * w + ox + x1, row + y * w + x0);
        }
      }
    }
  }
  return cols;
}

// Adjoint of im2col: scatter-adds each column entry back onto its input pixel.
template <typename T>
void col2im_add(const std::vector<T>& cols, std::size_t kh, std::size_t kw, FeatureMap<T>& out) {
  const auto h = static_cast<std::ptrdiff_t>(out.height());
  const auto w = static_cast<std::ptrdiff_t>(out.width());
  const std::size_t hw = out.plane_size();
  const T* row = cols.data();
  for (std::size_t c = 0; c < out.channels(); ++c) {
    T* dst = out.channel(c).data();
    for (std::size_t dy = 0; dy < kh; ++dy) {
      const std::ptrdiff_t oy = static_cast<std::ptrdiff_t>(dy) - static_cast<std::ptrdiff_t>(kh / 2);
      const auto [y0, y1] = valid_range(h, oy);
      for (std::size_t dx = 0; dx < kw; ++dx, row += hw) {
        const std::ptrdiff_t ox = static_cast<std::ptrdiff_t>(dx) - static_cast<std::ptrdiff_t>(kw / 2);
        const auto [x0, x1] = valid_range(w, ox);
        for (std::ptrdiff_t y = y0; y < y1; ++y) {
          T* g = dst + (y + oy) * w + ox;
          const T* r = row + y * w;
          for (std::ptrdiff_t x = x0; x < x1; ++x) g[x] += r[x];
        }
      }
    }
  }
}

template <typename T>
void check_kernel(const FeatureMap<T>& input, const ConvKernel<T>& kernel) {
  if (!kernel.valid()) throw ConfigError("conv2d: kernel weight/bias sizes are inconsistent");
  if (input.channels() != kernel.in_channels) {
    throw ConfigError("conv2d: input has " + std::to_string(input.channels()) +
                      " channels, kernel expects " + std::to_string(kernel.in_channels));
  }
}

}  // namespace detail

/// Stride-1 convolution with zero "same" padding; output spatial dims equal the input's.
template <typename T>
FeatureMap<T> conv2d(const FeatureMap<T>& input, const ConvKernel<T>& kernel) {
  detail::check_kernel(input, kernel);
  const std::size_t hw = input.plane_size();
  FeatureMap<T> out(kernel.out_channels, input.height(), input.width());
  for (std::size_t o = 0; o < kernel.out_channels; ++o) std::fill_n(out.channel(o).data(), hw, kernel.bias[o]);
  if (hw == 0) return out;
  const auto cols = detail::im2col(input, kernel.kernel_h, kernel.kernel_w);
  const std::size_t k = kernel.in_channels * kernel.kernel_h * kernel.kernel_w;
  // out (O x HW) += W (O x K) * cols (K x HW)
  detail::gemm(false, kernel.out_channels, hw, k, kernel.weights.data(), k, cols.data(), hw, out.values().data(), hw);
  return out;
}

template <typename T>
FeatureMap<T> relu(FeatureMap<T> input) {
  for (T& v : input.values()) v = std::max(v, T{0});
  return input;
}

/// 2x2 window, stride 2. Odd trailing rows/columns are dropped.
template <typename T>
FeatureMap<T> maxpool2(const FeatureMap<T>& input) {
  if (input.height() < 2 || input.width() < 2) {
    throw SizeError("maxpool2: input " + input.shape_string() + " is smaller than 2x2");
  }
  const std::size_t oh = input.height() / 2;
  const std::size_t ow = input.width() / 2;
  FeatureMap<T> out(input.channels(), oh, ow);
  for (std::size_t c = 0; c < input.channels(); ++c) {
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t x = 0; x < ow; ++x) {
        const T a = std::max(input(c, 2 * y, 2 * x), input(c, 2 * y, 2 * x + 1));
        const T b = std::max(input(c, 2 * y + 1, 2 * x), input(c, 2 * y + 1, 2 * x + 1));
        out(c, y, x) = std::max(a, b);
      }
    }
  }
  return out;
}

/// Bilinear resampling with the half-pixel (align_corners = false) convention.
template <typename T>
FeatureMap<T> resize_bilinear(const FeatureMap<T>& image, std::size_t target_h, std::size_t target_w) {
  if (target_h == 0 || target_w == 0) throw SizeError("resize_bilinear: target dimension is zero");
  if (target_h == image.height() && target_w == image.width()) return image;

  struct Tap {
    std::size_t i0, i1;
    double frac;
  };
  auto taps = [](std::size_t src, std::size_t dst) {
    std::vector<Tap> t(dst);
    const double scale = static_cast<double>(src) / static_cast<double>(dst);
    const double hi = static_cast<double>(src - 1);
    for (std::size_t d = 0; d < dst; ++d) {
      const double s = std::clamp((static_cast<double>(d) + 0.5) * scale - 0.5, 0.0, hi);
      const auto i0 = static_cast<std::size_t>(std::floor(s));
      t[d] = {i0, std::min(i0 + 1, src - 1), s - static_cast<double>(i0)};
    }
    return t;
  };
  const auto ty = taps(image.height(), target_h);
  const auto tx = taps(image.width(), target_w);

  FeatureMap<T> out(image.channels(), target_h, target_w);
  for (std::size_t c = 0; c < image.channels(); ++c) {
    for (std::size_t y = 0; y < target_h; ++y) {
      const auto& [y0, y1, fy] = ty[y];
      for (std::size_t x = 0; x < target_w; ++x) {
        const auto& [x0, x1, fx] = tx[x];
        const double top = (1.0 - fx) * image(c, y0, x0) + fx * image(c, y0, x1);
        const double bottom = (1.0 - fx) * image(c, y1, x0) + fx * image(c, y1, x1);
        out(c, y, x) = static_cast<T>((1.0 - fy) * top + fy * bottom);
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Input gradients. Each takes the forward input and the gradient of a scalar
// objective with respect to the forward output, and returns the gradient with
// respect to the forward input.

template <typename T>
FeatureMap<T> conv2d_input_grad(const FeatureMap<T>& input, const ConvKernel<T>& kernel,
                                const FeatureMap<T>& upstream) {
  detail::check_kernel(input, kernel);
  if (upstream.channels() != kernel.out_channels || upstream.height() != input.height() ||
      upstream.width() != input.width()) {
    throw ConfigError("conv2d_input_grad: upstream " + upstream.shape_string() +
                      " does not match forward output shape");
  }
  FeatureMap<T> grad(input.channels(), input.height(), input.width());
  const std::size_t hw = input.plane_size();
  if (hw == 0) return grad;
  const std::size_t k = kernel.in_channels * kernel.kernel_h * kernel.kernel_w;
  // cols (K x HW) = W^T (K x O) * upstream (O x HW), then scattered back to pixels
  std::vector<T> cols(k * hw, T{0});
  detail::gemm(true, k, hw, kernel.out_channels, kernel.weights.data(), k, upstream.values().data(), hw, cols.data(), hw);
  detail::col2im_add(cols, kernel.kernel_h, kernel.kernel_w, grad);
  return grad;
}

template <typename T>
FeatureMap<T> relu_input_grad(const FeatureMap<T>& input, const FeatureMap<T>& upstream) {
  if (!input.same_shape(upstream)) throw ConfigError("relu_input_grad: shape mismatch");
  FeatureMap<T> grad(input.channels(), input.height(), input.width());
  auto in = input.values();
  auto up = upstream.values();
  auto g = grad.values();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = in[i] > T{0} ? up[i] : T{0};
  return grad;
}

/// Routes each upstream value to the first maximum of its window in row-major scan order.
template <typename T>
FeatureMap<T> maxpool2_input_grad(const FeatureMap<T>& input, const FeatureMap<T>& upstream) {
  if (input.height() < 2 || input.width() < 2) throw SizeError("maxpool2_input_grad: input smaller than 2x2");
  if (upstream.channels() != input.channels() || upstream.height() != input.height() / 2 ||
      upstream.width() != input.width() / 2) {
    throw ConfigError("maxpool2_input_grad: upstream " + upstream.shape_string() +
                      " does not match pooled shape of " + input.shape_string());
  }
  FeatureMap<T> grad(input.channels(), input.height(), input.width());
  for (std::size_t c = 0; c < input.channels(); ++c) {
    for (std::size_t y = 0; y < upstream.height(); ++y) {
      for (std::size_t x = 0; x < upstream.width(); ++x) {
        std::size_t by = 2 * y, bx = 2 * x;
        T best = input(c, by, bx);
        for (std::size_t k = 1; k < 4; ++k) {
          const std::size_t yy = 2 * y + k / 2, xx = 2 * x + k % 2;
          if (input(c, yy, xx) > best) {
            best = input(c, yy, xx);
            by = yy;
            bx = xx;
          }
        }
        grad(c, by, bx) += upstream(c, y, x);
      }
    }
  }
  return grad;
}

}  // namespace mtex
