#include <gtest/gtest.h>

#include <cmath>

#include "fluidlab/field.hpp"
#include "fluidlab/rng.hpp"
#include "oracles.hpp"

using namespace fluidlab;

namespace {

FieldGrid impulse3() {
  FieldGrid u(1, 3, 3);
  u(0, 1, 1) = 1.0;
  return u;
}

FieldGrid ramp(std::size_t h, std::size_t w) {
  FieldGrid u(1, h, w);
  for (std::size_t i = 0; i < u.size(); ++i) u[i] = static_cast<double>(i);
  return u;
}

}  // namespace

TEST(Laplacian, ConstantFieldIsZero) {
  for (std::size_t dil : {1, 4, 16}) {
    const FieldGrid out = laplacian(FieldGrid(2, 7, 9, 3.5), dil);
    for (double v : out.values()) EXPECT_EQ(v, 0.0);
  }
}

TEST(Laplacian, ImpulseGivesFivePointStencil) {
  const FieldGrid out = laplacian(impulse3(), 1);
  const double expect[9] = {0, 1, 0, 1, -4, 1, 0, 1, 0};
  for (std::size_t i = 0; i < 9; ++i) EXPECT_DOUBLE_EQ(out[i], expect[i]);
}

TEST(Laplacian, MatchesDoubleLoopOracle) {
  Rng rng(11);
  for (std::size_t dil : {1, 4, 16}) {
    const FieldGrid u = rng.normal_grid(3, 8, 8);
    EXPECT_LT(oracle::max_abs_diff(laplacian(u, dil), oracle::laplacian(u, static_cast<long>(dil))), 1e-12);
  }
}

TEST(Laplacian, DilationOneEqualsReplicatePadding) {
  Rng rng(12);
  const FieldGrid u = rng.normal_grid(2, 6, 5);
  EXPECT_LT(oracle::max_abs_diff(laplacian(u, 1), oracle::laplacian(u, 1, oracle::clamp)), 1e-15);
}

TEST(Laplacian, ConservesSumAtEveryDilation) {
  Rng rng(13);
  for (std::size_t dil : {1, 4, 16}) {
    const FieldGrid u = rng.normal_grid(2, 9, 12);
    const FieldGrid l = laplacian(u, dil);
    for (std::size_t c = 0; c < 2; ++c) {
      double s = 0.0, a = 0.0;
      for (double v : l.channel(c)) s += v;
      for (double v : u.channel(c)) a += std::abs(v);
      EXPECT_LT(std::abs(s), 1e-9 * a) << "dilation " << dil;
    }
  }
}

TEST(Laplacian, IsLinear) {
  Rng rng(14);
  const FieldGrid u = rng.normal_grid(2, 8, 8), v = rng.normal_grid(2, 8, 8);
  const FieldGrid lhs = laplacian(2.5 * u + (-0.75) * v, 4);
  const FieldGrid rhs = 2.5 * laplacian(u, 4) + (-0.75) * laplacian(v, 4);
  EXPECT_LT(oracle::max_abs_diff(lhs, rhs), 1e-12);
}

TEST(Laplacian, AdjointPairing) {
  Rng rng(15);
  for (std::size_t dil : {1, 4, 16}) {
    const FieldGrid u = rng.normal_grid(2, 7, 10), g = rng.normal_grid(2, 7, 10);
    FieldGrid acc(2, 7, 10);
    laplacian_adjoint(g, dil, acc);
    EXPECT_NEAR(oracle::dot(laplacian(u, dil), g), oracle::dot(u, acc), 1e-10);
  }
}

TEST(RmsNorm, ZeroFieldStaysZero) {
  const FieldGrid out = rms_norm(FieldGrid(3, 4, 4), ChannelVector(3, 1.0), 1e-6);
  for (double v : out.values()) EXPECT_EQ(v, 0.0);
}

TEST(RmsNorm, ConstantThreeBecomesOne) {
  const FieldGrid out = rms_norm(FieldGrid(1, 2, 2, 3.0), ChannelVector(1, 1.0), 0.0);
  for (double v : out.values()) EXPECT_DOUBLE_EQ(v, 1.0);
}

TEST(RmsNorm, PerPositionRmsEqualsGain) {
  Rng rng(21);
  const FieldGrid u = rng.normal_grid(4, 5, 5);
  const FieldGrid out = rms_norm(u, ChannelVector(4, 1.7), 0.0);
  for (std::size_t p = 0; p < 25; ++p) {
    double ms = 0.0;
    for (std::size_t c = 0; c < 4; ++c) ms += out.channel(c)[p] * out.channel(c)[p];
    EXPECT_NEAR(std::sqrt(ms / 4.0), 1.7, 1e-10);
  }
}

TEST(AvgPool, RampToTwoByTwo) {
  const FieldGrid out = avg_pool(ramp(4, 4), 2, 2);
  EXPECT_DOUBLE_EQ(out[0], 2.5);
  EXPECT_DOUBLE_EQ(out[1], 4.5);
  EXPECT_DOUBLE_EQ(out[2], 10.5);
  EXPECT_DOUBLE_EQ(out[3], 12.5);
}

TEST(AvgPool, OneByOneIsSpatialMean) {
  Rng rng(22);
  const FieldGrid u = rng.normal_grid(3, 5, 7);
  const FieldGrid out = avg_pool(u, 1, 1);
  const ChannelVector m = spatial_mean(u);
  for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(out[c], m[c], 1e-14);
}

TEST(AvgPool, ConstantStaysConstant) {
  const FieldGrid out = avg_pool(FieldGrid(2, 9, 7, -1.25), 4, 3);
  for (double v : out.values()) EXPECT_DOUBLE_EQ(v, -1.25);
}

TEST(AvgPool, UnevenWindowsFollowAdaptiveRule) {
  // 5 → 2: windows [0,3) and [2,5)
  FieldGrid u(1, 1, 5, std::vector<double>{1, 2, 3, 4, 5});
  const FieldGrid out = avg_pool(u, 1, 2);
  EXPECT_DOUBLE_EQ(out[0], 2.0);
  EXPECT_DOUBLE_EQ(out[1], 4.0);
}

TEST(AvgPool, AdjointPairing) {
  Rng rng(23);
  const FieldGrid u = rng.normal_grid(2, 9, 7), g = rng.normal_grid(2, 4, 3);
  FieldGrid acc(2, 9, 7);
  avg_pool_adjoint(g, acc);
  EXPECT_NEAR(oracle::dot(avg_pool(u, 4, 3), g), oracle::dot(u, acc), 1e-12);
}

TEST(BilinearResize, ConstantAndSinglePixel) {
  const FieldGrid a = bilinear_resize(FieldGrid(2, 3, 5, 0.5), 7, 4);
  for (double v : a.values()) EXPECT_DOUBLE_EQ(v, 0.5);
  const FieldGrid b = bilinear_resize(FieldGrid(1, 1, 1, 2.0), 4, 4);
  for (double v : b.values()) EXPECT_DOUBLE_EQ(v, 2.0);
}

TEST(BilinearResize, HalfPixelTwoByTwoToFour) {
  // [[0,1],[2,3]] is the plane 2y + x, so interpolation is exact; the clamped
  // half-pixel source coordinates for 2 → 4 are 0, 0.25, 0.75, 1.
  const FieldGrid u(1, 2, 2, std::vector<double>{0, 1, 2, 3});
  const FieldGrid out = bilinear_resize(u, 4, 4);
  const double r[4] = {0.0, 0.25, 0.75, 1.0};
  for (std::size_t y = 0; y < 4; ++y)
    for (std::size_t x = 0; x < 4; ++x) EXPECT_NEAR(out(0, y, x), 2.0 * r[y] + r[x], 1e-15);
}

TEST(BilinearResize, SameSizeIsIdentity) {
  Rng rng(24);
  const FieldGrid u = rng.normal_grid(3, 6, 5);
  EXPECT_LT(oracle::max_abs_diff(bilinear_resize(u, 6, 5), u), 1e-12);
}

TEST(BilinearResize, AdjointPairing) {
  Rng rng(25);
  const FieldGrid u = rng.normal_grid(2, 4, 4), g = rng.normal_grid(2, 16, 16);
  FieldGrid acc(2, 4, 4);
  bilinear_resize_adjoint(g, acc);
  EXPECT_NEAR(oracle::dot(bilinear_resize(u, 16, 16), g), oracle::dot(u, acc), 1e-11);
}

TEST(SpatialMean, HandValues) {
  const ChannelVector m = spatial_mean(FieldGrid(1, 2, 2, std::vector<double>{1, 2, 3, 4}));
  EXPECT_DOUBLE_EQ(m[0], 2.5);
}

TEST(FiniteDiff, ConstantAndRamp) {
  auto [cx, cy] = finite_diff_grads(FieldGrid(1, 4, 4, 7.0));
  for (double v : cx.values()) EXPECT_EQ(v, 0.0);
  for (double v : cy.values()) EXPECT_EQ(v, 0.0);

  FieldGrid r(1, 3, 5);
  for (std::size_t y = 0; y < 3; ++y)
    for (std::size_t x = 0; x < 5; ++x) r(0, y, x) = 0.5 * static_cast<double>(x);
  auto [gx, gy] = finite_diff_grads(r);
  for (std::size_t y = 0; y < 3; ++y)
    for (std::size_t x = 0; x < 5; ++x) {
      EXPECT_DOUBLE_EQ(gx(0, y, x), x + 1 < 5 ? 0.5 : 0.0);
      EXPECT_DOUBLE_EQ(gy(0, y, x), 0.0);
    }
}

TEST(FiniteDiff, AdjointPairing) {
  Rng rng(26);
  const FieldGrid u = rng.normal_grid(2, 5, 6), gx = rng.normal_grid(2, 5, 6), gy = rng.normal_grid(2, 5, 6);
  auto [dx, dy] = finite_diff_grads(u);
  FieldGrid acc(2, 5, 6);
  finite_diff_adjoint(gx, gy, acc);
  EXPECT_NEAR(oracle::dot(dx, gx) + oracle::dot(dy, gy), oracle::dot(u, acc), 1e-12);
}

TEST(Energy, HandValues) {
  EXPECT_EQ(energy(FieldGrid(2, 3, 3)), 0.0);
  EXPECT_EQ(energy(FieldGrid(2, 2, 2, 1.0)), 8.0);
}

TEST(SpectralSplit, ConstantHasNoHighBand) {
  const auto s = spectral_split(FieldGrid(1, 8, 8, 2.0), 0.5);
  EXPECT_NEAR(s.high, 0.0, 1e-18);
  EXPECT_NEAR(s.low, 64.0 * 256.0, 1e-9);
}

TEST(SpectralSplit, CheckerboardIsAllHigh) {
  FieldGrid u(1, 8, 8);
  for (std::size_t y = 0; y < 8; ++y)
    for (std::size_t x = 0; x < 8; ++x) u(0, y, x) = (x + y) % 2 ? -1.0 : 1.0;
  const auto s = spectral_split(u, 0.5);
  EXPECT_NEAR(s.low, 0.0, 1e-12);
  EXPECT_NEAR(s.high, 64.0 * 64.0, 1e-8);
}

TEST(SpectralSplit, ParsevalAndDftOracle) {
  Rng rng(27);
  const FieldGrid u = rng.normal_grid(1, 8, 8);
  const auto s = spectral_split(u, 0.4);
  EXPECT_NEAR((s.low + s.high) / (64.0 * energy(u)), 1.0, 1e-8);
  double total = 0.0;
  for (double p : oracle::power_spectrum(u, 0)) total += p;
  EXPECT_NEAR(s.low + s.high, total, 1e-8 * total);
}

TEST(Scalars, FixedNonlinearities) {
  EXPECT_NEAR(gelu(1.0), 0.841192, 1e-6);
  EXPECT_NEAR(gelu(1.0), oracle::gelu(1.0), 1e-15);
  EXPECT_NEAR(softplus(0.0), std::log(2.0), 1e-15);
  EXPECT_NEAR(softplus_inverse(softplus(-1.3)), -1.3, 1e-12);
  EXPECT_NEAR(sigmoid(-40.0), oracle::sigmoid(-40.0), 1e-30);
  for (double x : {-3.0, -0.2, 0.0, 0.7, 2.5}) {
    const double h = 1e-6;
    EXPECT_NEAR(gelu_derivative(x), (gelu(x + h) - gelu(x - h)) / (2 * h), 1e-8);
  }
}

TEST(FieldGrid, ShapeMismatchThrows) {
  EXPECT_THROW(FieldGrid(2, 2, 2, std::vector<double>(7)), std::invalid_argument);
  EXPECT_THROW(FieldGrid(1, 2, 2) + FieldGrid(1, 2, 3), std::invalid_argument);
}

TEST(FieldGrid, OpsAreBitwiseDeterministic) {
  Rng a(5), b(5);
  const FieldGrid u = a.normal_grid(3, 8, 8), v = b.normal_grid(3, 8, 8);
  EXPECT_EQ(laplacian(u, 4).data(), laplacian(v, 4).data());
  EXPECT_EQ(rms_norm(u, ChannelVector(3, 1.0), 1e-6).data(), rms_norm(v, ChannelVector(3, 1.0), 1e-6).data());
  EXPECT_EQ(bilinear_resize(u, 5, 11).data(), bilinear_resize(v, 5, 11).data());
}
