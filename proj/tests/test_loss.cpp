#include <gtest/gtest.h>

#include <cmath>

#include "fluidlab/loss.hpp"
#include "fluidlab/rng.hpp"
#include "oracles.hpp"

using namespace fluidlab;

namespace {

double pop_std(std::span<const double> v) {
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size()));
}

double variance_oracle(const FieldGrid& z, double target) {
  double s = 0.0;
  for (std::size_t c = 0; c < z.channels(); ++c) s += std::max(0.0, target - pop_std(z.channel(c)));
  return s / static_cast<double>(z.channels());
}

// Forward differences, zero in the last column/row.
double gradient_oracle(const FieldGrid& a, const FieldGrid& b) {
  const std::size_t h = a.height(), w = a.width();
  double s = 0.0;
  for (std::size_t c = 0; c < a.channels(); ++c)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const double ax = x + 1 < w ? a(c, y, x + 1) - a(c, y, x) : 0.0;
        const double bx = x + 1 < w ? b(c, y, x + 1) - b(c, y, x) : 0.0;
        const double ay = y + 1 < h ? a(c, y + 1, x) - a(c, y, x) : 0.0;
        const double by = y + 1 < h ? b(c, y + 1, x) - b(c, y, x) : 0.0;
        s += std::abs(ax - bx) + std::abs(ay - by);
      }
  return s / static_cast<double>(a.size());
}

double sobel_oracle(const FieldGrid& a, const FieldGrid& b) {
  const long h = static_cast<long>(a.height()), w = static_cast<long>(a.width());
  const double kx[9] = {-1, 0, 1, -2, 0, 2, -1, 0, 1};
  const double ky[9] = {-1, -2, -1, 0, 0, 0, 1, 2, 1};
  double sx = 0.0, sy = 0.0;
  for (std::size_t c = 0; c < a.channels(); ++c)
    for (long y = 0; y < h; ++y)
      for (long x = 0; x < w; ++x) {
        double gx = 0.0, gy = 0.0;
        for (long dy = -1; dy <= 1; ++dy)
          for (long dx = -1; dx <= 1; ++dx) {
            const double d = a(c, oracle::clamp(y + dy, h), oracle::clamp(x + dx, w)) -
                             b(c, oracle::clamp(y + dy, h), oracle::clamp(x + dx, w));
            gx += kx[(dy + 1) * 3 + dx + 1] * d;
            gy += ky[(dy + 1) * 3 + dx + 1] * d;
          }
        sx += std::abs(gx);
        sy += std::abs(gy);
      }
  return (sx + sy) / static_cast<double>(a.size());
}

double freq_oracle(const FieldGrid& a, const FieldGrid& b) {
  double s = 0.0;
  for (std::size_t c = 0; c < a.channels(); ++c) {
    const auto pa = oracle::power_spectrum(a, c), pb = oracle::power_spectrum(b, c);
    for (std::size_t k = 0; k < pa.size(); ++k) s += std::abs(std::log1p(std::sqrt(pa[k])) - std::log1p(std::sqrt(pb[k])));
  }
  return s / static_cast<double>(a.size());
}

double mse_oracle(const FieldGrid& a, const FieldGrid& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

FieldGrid sigmoid_of(const FieldGrid& x) {
  FieldGrid out = x;
  for (double& v : out.values()) v = oracle::sigmoid(v);
  return out;
}

}  // namespace

TEST(VarianceLoss, HingeInactiveAndFullyCollapsed) {
  FieldGrid z(3, 2, 2);
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = i % 2 ? 1.5 : -1.5;
  EXPECT_DOUBLE_EQ(variance_loss(z), 0.0);
  EXPECT_DOUBLE_EQ(variance_loss(FieldGrid(5, 3, 3, 0.4)), 1.0);
}

TEST(VarianceLoss, MatchesTwoPassOracle) {
  Rng rng(1);
  const FieldGrid z = rng.normal_grid(6, 4, 4, 0.8);
  EXPECT_NEAR(variance_loss(z, 1.0), variance_oracle(z, 1.0), 1e-14);
}

TEST(GradientLoss, ZeroForEqualAndShifted) {
  Rng rng(2);
  const FieldGrid t = rng.normal_grid(1, 5, 5);
  EXPECT_DOUBLE_EQ(gradient_loss(t, t), 0.0);
  EXPECT_NEAR(gradient_loss(t + FieldGrid(1, 5, 5, 0.37), t), 0.0, 1e-15);
}

TEST(GradientLoss, HandTwoByTwo) {
  // x-diffs [[1,0],[2,0]] → 3/4, y-diffs [[2,3],[0,0]] → 5/4.
  const FieldGrid p(1, 2, 2, std::vector<double>{1, 2, 3, 5});
  EXPECT_DOUBLE_EQ(gradient_loss(p, FieldGrid(1, 2, 2)), 2.0);
}

TEST(GradientLoss, MatchesLoopOracle) {
  Rng rng(3);
  const FieldGrid a = rng.normal_grid(2, 4, 6), b = rng.normal_grid(2, 4, 6);
  EXPECT_NEAR(gradient_loss(a, b), gradient_oracle(a, b), 1e-14);
}

TEST(EdgeFreqLoss, ZeroForEqual) {
  Rng rng(4);
  const FieldGrid t = rng.uniform_grid(1, 6, 6, 0.0, 1.0);
  EXPECT_DOUBLE_EQ(edge_freq_loss(t, t), 0.0);
}

TEST(EdgeFreqLoss, ConstantsDifferOnlyAtDc) {
  const FieldGrid a(1, 4, 4, 0.2), b(1, 4, 4, 0.5);
  EXPECT_NEAR(edge_freq_loss(a, b, 1.0, 0.0), 0.0, 1e-15);
  EXPECT_NEAR(edge_freq_loss(a, b, 0.0, 1.0), std::abs(std::log(4.2) - std::log(9.0)) / 16.0, 1e-12);
}

TEST(EdgeFreqLoss, MatchesComposedOracle) {
  Rng rng(5);
  const FieldGrid a = rng.uniform_grid(1, 6, 5, 0.0, 1.0), b = rng.uniform_grid(1, 6, 5, 0.0, 1.0);
  EXPECT_NEAR(edge_freq_loss(a, b, 0.7, 0.3), 0.7 * sobel_oracle(a, b) + 0.3 * freq_oracle(a, b), 1e-10);
}

TEST(TotalLoss, DefaultWeights) {
  const LossWeights w;
  EXPECT_EQ(w.recon, 1.0);
  EXPECT_EQ(w.pred, 1.0);
  EXPECT_EQ(w.variance, 0.5);
  EXPECT_EQ(w.gradient, 1.0);
  EXPECT_EQ(w.sigma_target, 1.0);
  EXPECT_EQ(w.edge, 0.0);
  EXPECT_EQ(w.freq, 0.0);
}

TEST(TotalLoss, PerfectFitIsZero) {
  Rng rng(6);
  const FieldGrid x0 = rng.uniform_grid(1, 4, 4, 0.2, 0.8), x1 = rng.uniform_grid(1, 4, 4, 0.2, 0.8);
  auto logit = [](FieldGrid p) {
    for (double& v : p.values()) v = std::log(v / (1.0 - v));
    return p;
  };
  FieldGrid z(4, 2, 2);
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = i % 2 ? 2.0 : -2.0;
  EXPECT_NEAR(total_loss(x0, x1, logit(x0), logit(x1), z, LossWeights{}), 0.0, 1e-15);
}

TEST(TotalLoss, MatchesTermByTermOracle) {
  Rng rng(7);
  const FieldGrid x0 = rng.uniform_grid(1, 4, 4, 0.0, 1.0), x1 = rng.uniform_grid(1, 4, 4, 0.0, 1.0);
  const FieldGrid rl = rng.normal_grid(1, 4, 4), pl = rng.normal_grid(1, 4, 4), z = rng.normal_grid(3, 2, 2, 0.5);
  LossWeights w;
  w.recon = 0.9;
  w.pred = 1.3;
  w.variance = 0.5;
  w.gradient = 0.7;
  w.edge = 0.2;
  w.freq = 0.1;
  const FieldGrid r = sigmoid_of(rl), p = sigmoid_of(pl);
  const double expected = w.recon * mse_oracle(r, x0) + w.pred * mse_oracle(p, x1) +
                          w.variance * variance_oracle(z, 1.0) +
                          w.gradient * 0.5 * (gradient_oracle(r, x0) + gradient_oracle(p, x1)) +
                          w.edge * 0.5 * (sobel_oracle(r, x0) + sobel_oracle(p, x1)) +
                          w.freq * 0.5 * (freq_oracle(r, x0) + freq_oracle(p, x1));
  EXPECT_NEAR(total_loss(x0, x1, rl, pl, z, w), expected, 1e-12);
}

TEST(TotalLoss, NonNegative) {
  Rng rng(8);
  for (int t = 0; t < 20; ++t) {
    const FieldGrid x0 = rng.uniform_grid(1, 4, 4, 0.0, 1.0), x1 = rng.uniform_grid(1, 4, 4, 0.0, 1.0);
    EXPECT_GE(total_loss(x0, x1, rng.normal_grid(1, 4, 4, 3.0), rng.normal_grid(1, 4, 4, 3.0),
                         rng.normal_grid(2, 2, 2), LossWeights{}),
              0.0);
  }
}
