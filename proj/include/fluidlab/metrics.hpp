#pragma once

// Representation and image metrics: spatial std, effective rank, dead
// dimensions and SSIM.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "fluidlab/field.hpp"

namespace fluidlab {

/// Population std of each channel over its H·W positions.
inline std::vector<double> channel_stds(const FieldGrid& z) {
  std::vector<double> out(z.channels());
  const double n = static_cast<double>(z.plane());
  for (std::size_t c = 0; c < z.channels(); ++c) {
    double m = 0.0;
    for (double v : z.channel(c)) m += v;
    m /= n;
    double var = 0.0;
    for (double v : z.channel(c)) var += (v - m) * (v - m);
    out[c] = std::sqrt(var / n);
  }
  return out;
}

inline double spatial_std(const FieldGrid& z) {
  const auto s = channel_stds(z);
  double acc = 0.0;
  for (double v : s) acc += v;
  return acc / static_cast<double>(s.size());
}

/// Population std over every entry.
inline double feature_std(const FieldGrid& z) {
  double m = 0.0;
  for (double v : z.values()) m += v;
  m /= static_cast<double>(z.size());
  double var = 0.0;
  for (double v : z.values()) var += (v - m) * (v - m);
  return std::sqrt(var / static_cast<double>(z.size()));
}

inline std::size_t dead_dims(const FieldGrid& z, double threshold = 0.1) {
  const auto s = channel_stds(z);
  return static_cast<std::size_t>(std::count_if(s.begin(), s.end(), [&](double v) { return v < threshold; }));
}

/// Singular values of a row-major rows×cols matrix by one-sided Jacobi,
/// sorted descending.
inline std::vector<double> singular_values(std::vector<double> a, std::size_t rows, std::size_t cols) {
  require(a.size() == rows * cols, "singular_values: size mismatch");
  auto col_dot = [&](std::size_t i, std::size_t j) {
    double s = 0.0;
    for (std::size_t r = 0; r < rows; ++r) s += a[r * cols + i] * a[r * cols + j];
    return s;
  };
  for (int sweep = 0; sweep < 60; ++sweep) {
    double off = 0.0;
    for (std::size_t i = 0; i + 1 < cols; ++i)
      for (std::size_t j = i + 1; j < cols; ++j) {
        const double alpha = col_dot(i, i), beta = col_dot(j, j), gamma = col_dot(i, j);
        if (gamma == 0.0) continue;
        const double scale = std::sqrt(alpha * beta);
        if (scale == 0.0) continue;
        off = std::max(off, std::abs(gamma) / scale);
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t), s = c * t;
        for (std::size_t r = 0; r < rows; ++r) {
          const double ai = a[r * cols + i], aj = a[r * cols + j];
          a[r * cols + i] = c * ai - s * aj;
          a[r * cols + j] = s * ai + c * aj;
        }
      }
    if (off < 1e-15) break;
  }
  std::vector<double> sv(cols);
  for (std::size_t j = 0; j < cols; ++j) sv[j] = std::sqrt(col_dot(j, j));
  std::sort(sv.begin(), sv.end(), std::greater<>());
  return sv;
}

/// exp(−Σ p_i ln p_i) with p_i = σ_i / Σσ; zero singular values are skipped.
inline double effective_rank_from_singular_values(const std::vector<double>& sv) {
  double total = 0.0;
  for (double s : sv) total += s;
  if (total <= 0.0) return 1.0;
  double h = 0.0;
  for (double s : sv)
    if (s > 0.0) {
      const double p = s / total;
      h -= p * std::log(p);
    }
  return std::exp(h);
}

/// Positions × channels matrix with centered columns.
inline std::vector<double> centered_position_matrix(const FieldGrid& z) {
  const std::size_t n = z.plane(), d = z.channels();
  std::vector<double> a(n * d);
  for (std::size_t c = 0; c < d; ++c) {
    double m = 0.0;
    for (double v : z.channel(c)) m += v;
    m /= static_cast<double>(n);
    for (std::size_t p = 0; p < n; ++p) a[p * d + c] = z.channel(c)[p] - m;
  }
  return a;
}

inline double effective_rank(const FieldGrid& z) {
  return effective_rank_from_singular_values(singular_values(centered_position_matrix(z), z.plane(), z.channels()));
}

// ---------------------------------------------------------------------------
// SSIM

struct SsimOptions {
  std::size_t window = 7;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double range = 1.0;
};

/// Normalized 1D Gaussian taps.
inline std::vector<double> gaussian_taps(std::size_t size, double sigma) {
  std::vector<double> g(size);
  const double mid = (static_cast<double>(size) - 1.0) / 2.0;
  double s = 0.0;
  for (std::size_t i = 0; i < size; ++i) {
    const double x = static_cast<double>(i) - mid;
    g[i] = std::exp(-x * x / (2.0 * sigma * sigma));
    s += g[i];
  }
  for (double& v : g) v /= s;
  return g;
}

/// Mean SSIM over all fully-contained windows and channels. The window
/// shrinks to min(H, W) for frames smaller than it.
inline double ssim(const FieldGrid& a, const FieldGrid& b, const SsimOptions& opt = {}) {
  require_same_shape(a, b, "ssim");
  const std::size_t h = a.height(), w = a.width();
  const std::size_t win = std::min({opt.window, h, w});
  const auto g = gaussian_taps(win, opt.sigma);
  const double c1 = (opt.k1 * opt.range) * (opt.k1 * opt.range);
  const double c2 = (opt.k2 * opt.range) * (opt.k2 * opt.range);
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t c = 0; c < a.channels(); ++c)
    for (std::size_t y0 = 0; y0 + win <= h; ++y0)
      for (std::size_t x0 = 0; x0 + win <= w; ++x0) {
        double ma = 0.0, mb = 0.0, saa = 0.0, sbb = 0.0, sab = 0.0;
        for (std::size_t i = 0; i < win; ++i)
          for (std::size_t j = 0; j < win; ++j) {
            const double wt = g[i] * g[j];
            const double va = a(c, y0 + i, x0 + j), vb = b(c, y0 + i, x0 + j);
            ma += wt * va;
            mb += wt * vb;
            saa += wt * va * va;
            sbb += wt * vb * vb;
            sab += wt * va * vb;
          }
        const double var_a = saa - ma * ma, var_b = sbb - mb * mb, cov = sab - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
        ++count;
      }
  return total / static_cast<double>(count);
}

struct MetricsRecord {
  double spatial_std = 0.0;
  double effective_rank = 0.0;
  std::size_t dead_dims = 0;
  double feature_std = 0.0;
  double mse = 0.0;
  double ssim = 0.0;
};

inline double mse(const FieldGrid& a, const FieldGrid& b) {
  require_same_shape(a, b, "mse");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

inline MetricsRecord latent_metrics(const FieldGrid& z) {
  MetricsRecord m;
  m.spatial_std = spatial_std(z);
  m.effective_rank = effective_rank(z);
  m.dead_dims = dead_dims(z);
  m.feature_std = feature_std(z);
  return m;
}

}  // namespace fluidlab
