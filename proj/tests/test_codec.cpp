#include <gtest/gtest.h>

#include <cmath>

#include "fluidlab/codec.hpp"
#include "oracles.hpp"

using namespace fluidlab;

namespace {

CodecConfig tiny_cfg() {
  CodecConfig c;
  c.d = 8;
  c.decoder_mid = 16;
  c.decoder_fine = 8;
  return c;
}

EncodeOptions bio_off() {
  EncodeOptions o;
  o.bio.inhibition = false;
  o.bio.fatigue = false;
  o.bio.hebbian = false;
  return o;
}

// Same-size 3×3 convolution, replicate border, weight row o holds ci·9 + ky·3 + kx.
FieldGrid conv_oracle(const FieldGrid& x, const FieldGrid& w, const FieldGrid& b) {
  const long h = static_cast<long>(x.height()), wd = static_cast<long>(x.width());
  const std::size_t cin = x.channels(), cout = b.size();
  FieldGrid out(cout, x.height(), x.width());
  for (std::size_t o = 0; o < cout; ++o)
    for (long y = 0; y < h; ++y)
      for (long xx = 0; xx < wd; ++xx) {
        double s = b[o];
        for (std::size_t ci = 0; ci < cin; ++ci)
          for (long ky = 0; ky < 3; ++ky)
            for (long kx = 0; kx < 3; ++kx)
              s += w[o * cin * 9 + ci * 9 + static_cast<std::size_t>(ky * 3 + kx)] *
                   x(ci, oracle::clamp(y + ky - 1, h), oracle::clamp(xx + kx - 1, wd));
        out(o, y, xx) = s;
      }
  return out;
}

FieldGrid group_norm_oracle(const FieldGrid& x, const FieldGrid& gamma, const FieldGrid& beta, std::size_t groups,
                            double eps) {
  FieldGrid out = x;
  const std::size_t per = x.channels() / groups, n = x.plane();
  for (std::size_t g = 0; g < groups; ++g) {
    double mean = 0.0;
    for (std::size_t c = g * per; c < (g + 1) * per; ++c)
      for (double v : x.channel(c)) mean += v;
    mean /= static_cast<double>(per * n);
    double var = 0.0;
    for (std::size_t c = g * per; c < (g + 1) * per; ++c)
      for (double v : x.channel(c)) var += (v - mean) * (v - mean);
    var /= static_cast<double>(per * n);
    for (std::size_t c = g * per; c < (g + 1) * per; ++c)
      for (std::size_t p = 0; p < n; ++p)
        out[c * n + p] = gamma[c] * (x[c * n + p] - mean) / std::sqrt(var + eps) + beta[c];
  }
  return out;
}

FieldGrid resblock_oracle(const FieldGrid& x, const ResBlockT<FieldGrid>& b, std::size_t groups) {
  FieldGrid y = group_norm_oracle(conv_oracle(x, b.conv1_w, b.conv1_b), b.norm1_gamma, b.norm1_beta, groups, 1e-5);
  for (double& v : y.values()) v = oracle::gelu(v);
  y = group_norm_oracle(conv_oracle(y, b.conv2_w, b.conv2_b), b.norm2_gamma, b.norm2_beta, groups, 1e-5);
  return x + y;
}

FieldGrid pointwise_oracle(const FieldGrid& x, const FieldGrid& w, const FieldGrid& b) {
  const std::size_t rows = b.size(), cols = x.channels(), n = x.plane();
  FieldGrid out(rows, x.height(), x.width());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t p = 0; p < n; ++p) {
      double s = b[r];
      for (std::size_t k = 0; k < cols; ++k) s += w[r * cols + k] * x[k * n + p];
      out[r * n + p] = s;
    }
  return out;
}

CodecParams randomized(const CodecConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  CodecParams p = init_codec(cfg, rng);
  // Non-trivial norms and biases so every term of the chain matters.
  visit_decoder([&](const std::string&, FieldGrid& g) {
    for (double& v : g.values()) v += 0.1 * rng.normal();
  }, "", p.decoder);
  return p;
}

}  // namespace

TEST(PatchEmbed, FullSizeShape) {
  CodecConfig cfg;
  Rng rng(1);
  const CodecParams p = init_codec(cfg, rng);
  const FieldGrid u0 = patch_embed(rng.uniform_grid(1, 64, 64, 0.0, 1.0), p);
  EXPECT_EQ(u0.channels(), 128u);
  EXPECT_EQ(u0.height(), 16u);
  EXPECT_EQ(u0.width(), 16u);
}

TEST(PatchEmbed, ZeroWeightsGiveBias) {
  Rng rng(2);
  CodecParams p = init_codec(tiny_cfg(), rng);
  for (double& v : p.patch_w.values()) v = 0.0;
  for (std::size_t c = 0; c < 8; ++c) p.patch_b[c] = 0.1 * static_cast<double>(c);
  const FieldGrid u0 = patch_embed(rng.uniform_grid(1, 8, 12, 0.0, 1.0), p);
  for (std::size_t c = 0; c < 8; ++c)
    for (double v : u0.channel(c)) EXPECT_DOUBLE_EQ(v, 0.1 * static_cast<double>(c));
}

TEST(PatchEmbed, MatchesPerPatchOracle) {
  CodecConfig cfg = tiny_cfg();
  cfg.d = 2;
  Rng rng(3);
  CodecParams p = init_codec(cfg, rng);
  p.patch_b[0] = 0.3;
  p.patch_b[1] = -0.2;
  const FieldGrid frame = rng.uniform_grid(1, 8, 8, 0.0, 1.0);
  const FieldGrid u0 = patch_embed(frame, p);
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t i = 0; i < 2; ++i)
      for (std::size_t j = 0; j < 2; ++j) {
        double s = p.patch_b[c];
        for (std::size_t ky = 0; ky < 4; ++ky)
          for (std::size_t kx = 0; kx < 4; ++kx) s += p.patch_w[c * 16 + ky * 4 + kx] * frame(0, 4 * i + ky, 4 * j + kx);
        EXPECT_NEAR(u0(c, i, j), s, 1e-12);
      }
}

TEST(PatchEmbed, IndivisibleShapeThrows) {
  Rng rng(4);
  const CodecParams p = init_codec(tiny_cfg(), rng);
  EXPECT_THROW(patch_embed(FieldGrid(1, 10, 8), p), std::invalid_argument);
}

TEST(Encode, SkipConnectionIsExact) {
  Rng rng(5);
  const CodecParams p = init_codec(tiny_cfg(), rng);
  const EncodeResult r = encode(rng.uniform_grid(1, 16, 16, 0.0, 1.0), p, bio_off());
  EXPECT_EQ(r.z, r.u_pde + r.u0);
  EXPECT_EQ(r.z.channels(), 8u);
  EXPECT_EQ(r.z.height(), 4u);
  for (const auto& d : r.diagnostics) EXPECT_EQ(d.steps_used, 6u);
}

TEST(Encode, FullSizeShapeContract) {
  Rng rng(6);
  const CodecParams p = init_codec(CodecConfig{}, rng);
  EncodeOptions opt;
  const EncodeResult r = encode(rng.uniform_grid(1, 64, 64, 0.0, 1.0), p, opt);
  EXPECT_EQ(r.z.channels(), 128u);
  EXPECT_EQ(r.z.height(), 16u);
  EXPECT_EQ(r.z.width(), 16u);
}

TEST(Encode, ConstantFrameWithZeroDynamics) {
  Rng rng(7);
  CodecParams p = init_codec(tiny_cfg(), rng);
  for (auto& layer : p.encoder) layer = zero_dynamics_layer(8);
  for (double& v : p.patch_w.values()) v = 0.0;
  for (std::size_t c = 0; c < 8; ++c) p.patch_b[c] = 1.0;
  EncodeOptions opt = bio_off();
  opt.normalize = false;
  const EncodeResult r = encode(FieldGrid(1, 8, 8, 0.5), p, opt);
  for (double v : r.z.values()) EXPECT_NEAR(v, 2.0, 1e-15);
}

TEST(Encode, FatigueUpdatesStateAndDeterministic) {
  Rng rng(8);
  const CodecParams p = init_codec(tiny_cfg(), rng);
  const FieldGrid frame = rng.uniform_grid(1, 16, 16, 0.0, 1.0);
  FatigueState a = FatigueState::rested(8), b = FatigueState::rested(8);
  const EncodeOptions opt;
  const EncodeResult ra = encode(frame, p, opt, &a), rb = encode(frame, p, opt, &b);
  EXPECT_EQ(ra.z, rb.z);
  EXPECT_EQ(a.health, b.health);
  bool moved = false;
  for (double h : a.health.values()) moved = moved || h < 1.0;
  EXPECT_TRUE(moved);
}

TEST(Decoder, ParameterCountFromLayerTable) {
  // 1×1 proj + ResBlock(64) + up conv 64→64 + GN(64) + ResBlock(64) + up conv
  // 64→32 + GN(32) + ResBlock(32) + out conv 32→1, each conv with bias.
  auto conv = [](std::size_t co, std::size_t ci) { return co * ci * 9 + co; };
  auto block = [&](std::size_t ch) { return 2 * conv(ch, ch) + 4 * ch; };
  const std::size_t expected = (128 * 64 + 64) + block(64) + conv(64, 64) + 128 + block(64) + conv(32, 64) + 64 +
                               block(32) + conv(1, 32);
  Rng rng(9);
  EXPECT_EQ(decoder_parameter_count(init_codec(CodecConfig{}, rng).decoder), expected);
  EXPECT_EQ(expected, 230977u);
}

TEST(Decoder, FullSizeShapeChain) {
  Rng rng(10);
  const CodecParams p = init_codec(CodecConfig{}, rng);
  const FieldGrid out = decode(rng.normal_grid(128, 16, 16), p);
  EXPECT_EQ(out.channels(), 1u);
  EXPECT_EQ(out.height(), 64u);
  EXPECT_EQ(out.width(), 64u);
  EXPECT_EQ(p.decoder.proj_w.height(), 64u);
  EXPECT_EQ(p.decoder.up2_b.size(), 32u);
  for (double v : out.values()) EXPECT_TRUE(std::isfinite(v));
}

TEST(Decoder, ZeroWeightsGiveOutputBias) {
  Rng rng(11);
  CodecParams p = init_codec(tiny_cfg(), rng);
  visit_decoder([](const std::string&, FieldGrid& g) {
    for (double& v : g.values()) v = 0.0;
  }, "", p.decoder);
  p.decoder.out_b[0] = -0.7;
  const FieldGrid out = decode(rng.normal_grid(8, 4, 4), p, tiny_cfg());
  for (double v : out.values()) EXPECT_DOUBLE_EQ(v, -0.7);
}

TEST(Decoder, MatchesStraightLineOracle) {
  const CodecConfig cfg = tiny_cfg();
  const CodecParams p = randomized(cfg, 12);
  Rng rng(13);
  const FieldGrid z = rng.normal_grid(8, 4, 4);
  const auto& d = p.decoder;
  FieldGrid h = pointwise_oracle(z, d.proj_w, d.proj_b);
  h = resblock_oracle(h, d.block0, 8);
  h = conv_oracle(oracle::bilinear(h, 8, 8), d.up1_w, d.up1_b);
  h = resblock_oracle(group_norm_oracle(h, d.norm1_gamma, d.norm1_beta, 8, 1e-5), d.block1, 8);
  h = conv_oracle(oracle::bilinear(h, 16, 16), d.up2_w, d.up2_b);
  h = resblock_oracle(group_norm_oracle(h, d.norm2_gamma, d.norm2_beta, 8, 1e-5), d.block2, 8);
  h = conv_oracle(h, d.out_w, d.out_b);
  const FieldGrid out = decode(z, p, cfg);
  ASSERT_TRUE(out.same_shape(h));
  EXPECT_LT(oracle::max_abs_diff(out, h), 1e-10);
}

TEST(GroupNorm, UnitAffineStandardizesEachGroup) {
  Rng rng(14);
  const FieldGrid x = rng.normal_grid(16, 5, 5, 3.0) + FieldGrid(16, 5, 5, 2.0);
  const FieldGrid out = ad::group_norm(ad::Var::constant(x), ad::Var::constant(make_vector(16, 1.0)),
                                       ad::Var::constant(make_vector(16)), 8, 1e-5)
                            .value();
  const std::size_t n = 25;
  for (std::size_t g = 0; g < 8; ++g) {
    double m = 0.0, v = 0.0;
    for (std::size_t k = g * 2 * n; k < (g + 1) * 2 * n; ++k) m += out[k];
    m /= 2.0 * n;
    for (std::size_t k = g * 2 * n; k < (g + 1) * 2 * n; ++k) v += (out[k] - m) * (out[k] - m);
    v /= 2.0 * n;
    EXPECT_NEAR(m, 0.0, 1e-12);
    EXPECT_NEAR(v, 1.0, 1e-5);  // eps 1e-5 against a variance near 9
  }
}

TEST(Codec, RoundTripSpatialDims) {
  const CodecConfig cfg = tiny_cfg();
  Rng rng(15);
  const CodecParams p = init_codec(cfg, rng);
  const FieldGrid frame = rng.uniform_grid(1, 16, 12, 0.0, 1.0);
  const FieldGrid logits = decode(encode(frame, p, bio_off()).z, p, cfg);
  EXPECT_TRUE(logits.same_shape(frame));
}

TEST(Codec, RejectsIndivisibleDecoderWidths) {
  CodecConfig cfg = tiny_cfg();
  cfg.decoder_fine = 12;
  Rng rng(16);
  EXPECT_THROW(init_codec(cfg, rng), std::invalid_argument);
}
