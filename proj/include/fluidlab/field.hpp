#pragma once

// Deterministic grid arithmetic shared by every other module: the FieldGrid
// carrier, scalar nonlinearities, multi-scale Laplacian stencils, pooling,
// resampling, normalization, finite differences, energy and spectra.
//
// Linear operators come with an `*_adjoint` that accumulates the transpose
// product into an existing grid; the autodiff layer builds on those.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace fluidlab {

/// C×H×W grid of doubles in row-major (channel, row, column) order.
///
/// Every learnable quantity is also stored as a FieldGrid: a matrix with R rows
/// and K columns is a 1×R×K grid, a per-channel vector is a d×1×1 grid and a
/// scalar is a 1×1×1 grid.
class FieldGrid {
 public:
  FieldGrid() = default;

  FieldGrid(std::size_t channels, std::size_t height, std::size_t width, double fill = 0.0)
      : c_(channels), h_(height), w_(width), v_(channels * height * width, fill) {}

  FieldGrid(std::size_t channels, std::size_t height, std::size_t width, std::vector<double> values)
      : c_(channels), h_(height), w_(width), v_(std::move(values)) {
    if (v_.size() != c_ * h_ * w_) {
      throw std::invalid_argument("FieldGrid: value count " + std::to_string(v_.size()) +
                                  " does not match shape " + std::to_string(c_) + "x" +
                                  std::to_string(h_) + "x" + std::to_string(w_));
    }
  }

  std::size_t channels() const noexcept { return c_; }
  std::size_t height() const noexcept { return h_; }
  std::size_t width() const noexcept { return w_; }
  std::size_t plane() const noexcept { return h_ * w_; }
  std::size_t size() const noexcept { return v_.size(); }
  bool empty() const noexcept { return v_.empty(); }

  double& operator()(std::size_t c, std::size_t y, std::size_t x) noexcept {
    return v_[(c * h_ + y) * w_ + x];
  }
  double operator()(std::size_t c, std::size_t y, std::size_t x) const noexcept {
    return v_[(c * h_ + y) * w_ + x];
  }
  double& operator[](std::size_t i) noexcept { return v_[i]; }
  double operator[](std::size_t i) const noexcept { return v_[i]; }

  std::span<double> values() noexcept { return v_; }
  std::span<const double> values() const noexcept { return v_; }
  std::vector<double>& data() noexcept { return v_; }
  const std::vector<double>& data() const noexcept { return v_; }

  std::span<double> channel(std::size_t c) noexcept { return {v_.data() + c * plane(), plane()}; }
  std::span<const double> channel(std::size_t c) const noexcept {
    return {v_.data() + c * plane(), plane()};
  }

  bool same_shape(const FieldGrid& o) const noexcept {
    return c_ == o.c_ && h_ == o.h_ && w_ == o.w_;
  }

  bool all_finite() const noexcept {
    return std::all_of(v_.begin(), v_.end(), [](double x) { return std::isfinite(x); });
  }

  void fill(double value) { std::fill(v_.begin(), v_.end(), value); }

  friend bool operator==(const FieldGrid&, const FieldGrid&) = default;

 private:
  std::size_t c_ = 0;
  std::size_t h_ = 0;
  std::size_t w_ = 0;
  std::vector<double> v_;
};

/// d per-channel scalars (spatial means, diffusion coefficients, fatigue health).
class ChannelVector {
 public:
  ChannelVector() = default;
  explicit ChannelVector(std::size_t dim, double fill = 0.0) : v_(dim, fill) {}
  explicit ChannelVector(std::vector<double> values) : v_(std::move(values)) {}
  ChannelVector(std::initializer_list<double> values) : v_(values) {}

  std::size_t dim() const noexcept { return v_.size(); }
  double& operator[](std::size_t i) noexcept { return v_[i]; }
  double operator[](std::size_t i) const noexcept { return v_[i]; }
  std::span<double> values() noexcept { return v_; }
  std::span<const double> values() const noexcept { return v_; }

  /// As a d×1×1 grid.
  FieldGrid as_grid() const { return FieldGrid(v_.size(), 1, 1, v_); }
  static ChannelVector from_grid(const FieldGrid& g) { return ChannelVector(g.data()); }

  friend bool operator==(const ChannelVector&, const ChannelVector&) = default;

 private:
  std::vector<double> v_;
};

inline void require(bool condition, const char* message) {
  if (!condition) throw std::invalid_argument(message);
}

inline void require_same_shape(const FieldGrid& a, const FieldGrid& b, const char* what) {
  if (!a.same_shape(b)) throw std::invalid_argument(std::string(what) + ": shape mismatch");
}

inline FieldGrid make_matrix(std::size_t rows, std::size_t cols, double fill = 0.0) {
  return FieldGrid(1, rows, cols, fill);
}
inline FieldGrid make_vector(std::size_t dim, double fill = 0.0) { return FieldGrid(dim, 1, 1, fill); }
inline FieldGrid make_scalar(double value) { return FieldGrid(1, 1, 1, value); }

// ---------------------------------------------------------------------------
// Scalar nonlinearities

inline double softplus(double x) noexcept {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline double softplus_inverse(double y) {
  require(y > 0.0, "softplus_inverse: argument must be positive");
  return y > 30.0 ? y + std::log(-std::expm1(-y)) : std::log(std::expm1(y));
}

inline double sigmoid(double x) noexcept {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
inline constexpr double kGeluA = 0.044715;

/// GELU, tanh approximation.
inline double gelu(double x) noexcept {
  return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x)));
}

inline double gelu_derivative(double x) noexcept {
  const double inner = kGeluC * (x + kGeluA * x * x * x);
  const double t = std::tanh(inner);
  const double dinner = kGeluC * (1.0 + 3.0 * kGeluA * x * x);
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner;
}

// ---------------------------------------------------------------------------
// Boundary indexing

/// Half-sample symmetric reflection (u[-1-k] = u[k], period 2n). Coincides
/// with replicate padding for offsets of one cell and keeps dilated stencils
/// mass-conserving.
inline std::size_t reflect_index(long i, std::size_t n) noexcept {
  const long period = 2 * static_cast<long>(n);
  long m = i % period;
  if (m < 0) m += period;
  return static_cast<std::size_t>(m < static_cast<long>(n) ? m : period - 1 - m);
}

inline std::size_t clamp_index(long i, std::size_t n) noexcept {
  if (i < 0) return 0;
  if (i >= static_cast<long>(n)) return n - 1;
  return static_cast<std::size_t>(i);
}

// ---------------------------------------------------------------------------
// Laplacian

namespace detail {

struct StencilTaps {
  std::vector<std::size_t> up, down, left, right;
};

inline StencilTaps stencil_taps(std::size_t h, std::size_t w, std::size_t dilation) {
  StencilTaps t;
  const long d = static_cast<long>(dilation);
  t.up.resize(h);
  t.down.resize(h);
  t.left.resize(w);
  t.right.resize(w);
  for (std::size_t y = 0; y < h; ++y) {
    t.up[y] = reflect_index(static_cast<long>(y) - d, h);
    t.down[y] = reflect_index(static_cast<long>(y) + d, h);
  }
  for (std::size_t x = 0; x < w; ++x) {
    t.left[x] = reflect_index(static_cast<long>(x) - d, w);
    t.right[x] = reflect_index(static_cast<long>(x) + d, w);
  }
  return t;
}

}  // namespace detail

/// 5-point Laplacian with taps `dilation` cells apart, reflective boundary.
inline FieldGrid laplacian(const FieldGrid& u, std::size_t dilation) {
  require(dilation >= 1, "laplacian: dilation must be positive");
  const std::size_t h = u.height(), w = u.width();
  const auto taps = detail::stencil_taps(h, w, dilation);
  FieldGrid out(u.channels(), h, w);
  for (std::size_t c = 0; c < u.channels(); ++c) {
    const double* in = u.channel(c).data();
    double* o = out.channel(c).data();
    for (std::size_t y = 0; y < h; ++y) {
      const double* row = in + y * w;
      const double* up = in + taps.up[y] * w;
      const double* down = in + taps.down[y] * w;
      for (std::size_t x = 0; x < w; ++x) {
        o[y * w + x] = up[x] + down[x] + row[taps.left[x]] + row[taps.right[x]] - 4.0 * row[x];
      }
    }
  }
  return out;
}

/// acc += Lᵀ g.
inline void laplacian_adjoint(const FieldGrid& g, std::size_t dilation, FieldGrid& acc) {
  const std::size_t h = g.height(), w = g.width();
  const auto taps = detail::stencil_taps(h, w, dilation);
  for (std::size_t c = 0; c < g.channels(); ++c) {
    const double* gi = g.channel(c).data();
    double* a = acc.channel(c).data();
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const double v = gi[y * w + x];
        a[taps.up[y] * w + x] += v;
        a[taps.down[y] * w + x] += v;
        a[y * w + taps.left[x]] += v;
        a[y * w + taps.right[x]] += v;
        a[y * w + x] -= 4.0 * v;
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Normalization and reductions

/// Per-position RMS normalization across channels, then per-channel gain.
inline FieldGrid rms_norm(const FieldGrid& u, std::span<const double> gains, double eps) {
  require(gains.size() == u.channels(), "rms_norm: gains must have one entry per channel");
  require(eps >= 0.0, "rms_norm: eps must be non-negative");
  const std::size_t n = u.plane(), cs = u.channels();
  FieldGrid out(cs, u.height(), u.width());
  for (std::size_t p = 0; p < n; ++p) {
    double ms = 0.0;
    for (std::size_t c = 0; c < cs; ++c) ms += u[c * n + p] * u[c * n + p];
    ms = ms / static_cast<double>(cs) + eps;
    if (ms == 0.0) continue;
    const double r = 1.0 / std::sqrt(ms);
    for (std::size_t c = 0; c < cs; ++c) out[c * n + p] = u[c * n + p] * r * gains[c];
  }
  return out;
}

inline FieldGrid rms_norm(const FieldGrid& u, const ChannelVector& gains, double eps) {
  return rms_norm(u, gains.values(), eps);
}

inline ChannelVector spatial_mean(const FieldGrid& u) {
  ChannelVector m(u.channels());
  for (std::size_t c = 0; c < u.channels(); ++c) {
    double s = 0.0;
    for (double v : u.channel(c)) s += v;
    m[c] = s / static_cast<double>(u.plane());
  }
  return m;
}

/// Sum of squares over all entries.
inline double energy(const FieldGrid& u) {
  double e = 0.0;
  for (double v : u.values()) e += v * v;
  return e;
}

// ---------------------------------------------------------------------------
// Adaptive average pooling

namespace detail {

struct PoolWindow {
  std::size_t begin, end;
};

inline std::vector<PoolWindow> pool_windows(std::size_t in, std::size_t out) {
  std::vector<PoolWindow> w(out);
  for (std::size_t i = 0; i < out; ++i) {
    w[i].begin = (i * in) / out;
    w[i].end = ((i + 1) * in + out - 1) / out;
  }
  return w;
}

}  // namespace detail

/// Adaptive average pooling: window i spans [floor(i·H/out), ceil((i+1)·H/out)).
/// Output sizes larger than the input repeat cells.
inline FieldGrid avg_pool(const FieldGrid& u, std::size_t out_h, std::size_t out_w) {
  require(out_h >= 1 && out_w >= 1, "avg_pool: output size must be positive");
  const auto wy = detail::pool_windows(u.height(), out_h);
  const auto wx = detail::pool_windows(u.width(), out_w);
  FieldGrid out(u.channels(), out_h, out_w);
  for (std::size_t c = 0; c < u.channels(); ++c) {
    for (std::size_t i = 0; i < out_h; ++i) {
      for (std::size_t j = 0; j < out_w; ++j) {
        double s = 0.0;
        for (std::size_t y = wy[i].begin; y < wy[i].end; ++y)
          for (std::size_t x = wx[j].begin; x < wx[j].end; ++x) s += u(c, y, x);
        const double count = static_cast<double>((wy[i].end - wy[i].begin) * (wx[j].end - wx[j].begin));
        out(c, i, j) = s / count;
      }
    }
  }
  return out;
}

inline void avg_pool_adjoint(const FieldGrid& g, FieldGrid& acc) {
  const auto wy = detail::pool_windows(acc.height(), g.height());
  const auto wx = detail::pool_windows(acc.width(), g.width());
  for (std::size_t c = 0; c < g.channels(); ++c) {
    for (std::size_t i = 0; i < g.height(); ++i) {
      for (std::size_t j = 0; j < g.width(); ++j) {
        const double count = static_cast<double>((wy[i].end - wy[i].begin) * (wx[j].end - wx[j].begin));
        const double v = g(c, i, j) / count;
        for (std::size_t y = wy[i].begin; y < wy[i].end; ++y)
          for (std::size_t x = wx[j].begin; x < wx[j].end; ++x) acc(c, y, x) += v;
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Bilinear resampling (half-pixel centers, border clamp)

namespace detail {

struct LerpTap {
  std::size_t i0, i1;
  double w1;  // weight of i1; i0 gets 1 - w1
};

inline std::vector<LerpTap> lerp_taps(std::size_t in, std::size_t out) {
  std::vector<LerpTap> taps(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t i = 0; i < out; ++i) {
    double src = (static_cast<double>(i) + 0.5) * scale - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const auto i0 = static_cast<std::size_t>(std::floor(src));
    const std::size_t i1 = std::min(i0 + 1, in - 1);
    taps[i] = {i0, i1, src - static_cast<double>(i0)};
  }
  return taps;
}

}  // namespace detail

inline FieldGrid bilinear_resize(const FieldGrid& u, std::size_t out_h, std::size_t out_w) {
  require(out_h >= 1 && out_w >= 1, "bilinear_resize: output size must be positive");
  const auto ty = detail::lerp_taps(u.height(), out_h);
  const auto tx = detail::lerp_taps(u.width(), out_w);
  FieldGrid out(u.channels(), out_h, out_w);
  for (std::size_t c = 0; c < u.channels(); ++c) {
    for (std::size_t i = 0; i < out_h; ++i) {
      const auto& a = ty[i];
      for (std::size_t j = 0; j < out_w; ++j) {
        const auto& b = tx[j];
        const double top = u(c, a.i0, b.i0) * (1.0 - b.w1) + u(c, a.i0, b.i1) * b.w1;
        const double bottom = u(c, a.i1, b.i0) * (1.0 - b.w1) + u(c, a.i1, b.i1) * b.w1;
        out(c, i, j) = top * (1.0 - a.w1) + bottom * a.w1;
      }
    }
  }
  return out;
}

inline void bilinear_resize_adjoint(const FieldGrid& g, FieldGrid& acc) {
  const auto ty = detail::lerp_taps(acc.height(), g.height());
  const auto tx = detail::lerp_taps(acc.width(), g.width());
  for (std::size_t c = 0; c < g.channels(); ++c) {
    for (std::size_t i = 0; i < g.height(); ++i) {
      const auto& a = ty[i];
      for (std::size_t j = 0; j < g.width(); ++j) {
        const auto& b = tx[j];
        const double v = g(c, i, j);
        acc(c, a.i0, b.i0) += v * (1.0 - a.w1) * (1.0 - b.w1);
        acc(c, a.i0, b.i1) += v * (1.0 - a.w1) * b.w1;
        acc(c, a.i1, b.i0) += v * a.w1 * (1.0 - b.w1);
        acc(c, a.i1, b.i1) += v * a.w1 * b.w1;
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Finite differences

/// Forward differences along x and y; the trailing column (x) or row (y) is zero.
inline std::pair<FieldGrid, FieldGrid> finite_diff_grads(const FieldGrid& a) {
  require(a.height() >= 2 && a.width() >= 2, "finite_diff_grads: need at least 2x2");
  FieldGrid gx(a.channels(), a.height(), a.width());
  FieldGrid gy(a.channels(), a.height(), a.width());
  for (std::size_t c = 0; c < a.channels(); ++c) {
    for (std::size_t y = 0; y < a.height(); ++y) {
      for (std::size_t x = 0; x < a.width(); ++x) {
        if (x + 1 < a.width()) gx(c, y, x) = a(c, y, x + 1) - a(c, y, x);
        if (y + 1 < a.height()) gy(c, y, x) = a(c, y + 1, x) - a(c, y, x);
      }
    }
  }
  return {std::move(gx), std::move(gy)};
}

/// acc += Dxᵀ gx + Dyᵀ gy.
inline void finite_diff_adjoint(const FieldGrid& gx, const FieldGrid& gy, FieldGrid& acc) {
  for (std::size_t c = 0; c < acc.channels(); ++c) {
    for (std::size_t y = 0; y < acc.height(); ++y) {
      for (std::size_t x = 0; x < acc.width(); ++x) {
        if (x + 1 < acc.width()) {
          acc(c, y, x + 1) += gx(c, y, x);
          acc(c, y, x) -= gx(c, y, x);
        }
        if (y + 1 < acc.height()) {
          acc(c, y + 1, x) += gy(c, y, x);
          acc(c, y, x) -= gy(c, y, x);
        }
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Spectra

/// Naive unnormalized 2D DFT of one H×W plane (separable, O(HW(H+W))).
inline std::vector<std::complex<double>> dft2d(std::span<const double> plane, std::size_t h,
                                              std::size_t w) {
  using cd = std::complex<double>;
  std::vector<cd> tw_w(w), tw_h(h);
  for (std::size_t k = 0; k < w; ++k)
    tw_w[k] = std::polar(1.0, -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(w));
  for (std::size_t k = 0; k < h; ++k)
    tw_h[k] = std::polar(1.0, -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(h));

  std::vector<cd> rows(h * w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t kx = 0; kx < w; ++kx) {
      cd s = 0.0;
      for (std::size_t x = 0; x < w; ++x) s += plane[y * w + x] * tw_w[(kx * x) % w];
      rows[y * w + kx] = s;
    }
  std::vector<cd> out(h * w);
  for (std::size_t ky = 0; ky < h; ++ky)
    for (std::size_t kx = 0; kx < w; ++kx) {
      cd s = 0.0;
      for (std::size_t y = 0; y < h; ++y) s += rows[y * w + kx] * tw_h[(ky * y) % h];
      out[ky * w + kx] = s;
    }
  return out;
}

/// Signed frequency index of DFT bin k in a length-n transform.
inline double centered_frequency(std::size_t k, std::size_t n) noexcept {
  return 2 * k <= n ? static_cast<double>(k) : static_cast<double>(k) - static_cast<double>(n);
}

struct SpectralSplit {
  double low = 0.0;
  double high = 0.0;
};

/// Squared DFT magnitude inside vs outside the centered disc of radius
/// radius_fraction·min(H,W)/2, summed over channels. low + high = H·W·energy.
inline SpectralSplit spectral_split(const FieldGrid& u, double radius_fraction) {
  require(radius_fraction > 0.0 && radius_fraction < 1.0,
          "spectral_split: radius_fraction must lie in (0, 1)");
  const std::size_t h = u.height(), w = u.width();
  const double radius = radius_fraction * static_cast<double>(std::min(h, w)) / 2.0;
  SpectralSplit s;
  for (std::size_t c = 0; c < u.channels(); ++c) {
    const auto f = dft2d(u.channel(c), h, w);
    for (std::size_t ky = 0; ky < h; ++ky)
      for (std::size_t kx = 0; kx < w; ++kx) {
        const double fy = centered_frequency(ky, h), fx = centered_frequency(kx, w);
        const double p = std::norm(f[ky * w + kx]);
        if (std::sqrt(fy * fy + fx * fx) <= radius)
          s.low += p;
        else
          s.high += p;
      }
  }
  return s;
}

// ---------------------------------------------------------------------------
// Small conveniences used across modules

inline FieldGrid operator+(const FieldGrid& a, const FieldGrid& b) {
  require_same_shape(a, b, "FieldGrid +");
  FieldGrid out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
  return out;
}

inline FieldGrid operator-(const FieldGrid& a, const FieldGrid& b) {
  require_same_shape(a, b, "FieldGrid -");
  FieldGrid out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b[i];
  return out;
}

inline FieldGrid operator*(double s, const FieldGrid& a) {
  FieldGrid out = a;
  for (double& v : out.values()) v *= s;
  return out;
}

inline double mean_abs_diff(const FieldGrid& a, const FieldGrid& b) {
  require_same_shape(a, b, "mean_abs_diff");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return a.empty() ? 0.0 : s / static_cast<double>(a.size());
}

inline double l2_norm(const FieldGrid& a) { return std::sqrt(energy(a)); }

/// Mean over channels of each spatial position (1×H×W).
inline FieldGrid channel_average(const FieldGrid& u) {
  FieldGrid out(1, u.height(), u.width());
  for (std::size_t c = 0; c < u.channels(); ++c) {
    const auto ch = u.channel(c);
    for (std::size_t p = 0; p < u.plane(); ++p) out[p] += ch[p];
  }
  for (double& v : out.values()) v /= static_cast<double>(u.channels());
  return out;
}

}  // namespace fluidlab
