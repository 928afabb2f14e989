#pragma once

// Frame <-> latent mapping. The encoder is a 4×4 patch embedding followed by
// three PDE layers with a skip from the embedding; the decoder is a 1×1
// projection, two bilinear ×2 upsampling stages with residual blocks, and a
// final 3×3 convolution producing logits.

#include <array>
#include <cstddef>
#include <string>
#include <utility>

#include "fluidlab/autodiff.hpp"
#include "fluidlab/bio.hpp"
#include "fluidlab/dynamics.hpp"
#include "fluidlab/field.hpp"
#include "fluidlab/rng.hpp"

namespace fluidlab {

inline constexpr std::size_t kEncoderLayers = 3;

struct CodecConfig {
  std::size_t in_channels = 1;
  std::size_t d = 128;
  std::size_t patch = 4;
  std::size_t decoder_mid = 64;
  std::size_t decoder_fine = 32;
  std::size_t groups = 8;
  double group_eps = 1e-5;
};

template <class T>
struct ResBlockT {
  T conv1_w, conv1_b, norm1_gamma, norm1_beta;
  T conv2_w, conv2_b, norm2_gamma, norm2_beta;
};

template <class F, class... R>
void visit_resblock(F&& f, const std::string& prefix, R&... r) {
  f(prefix + "conv1_w", r.conv1_w...);
  f(prefix + "conv1_b", r.conv1_b...);
  f(prefix + "norm1_gamma", r.norm1_gamma...);
  f(prefix + "norm1_beta", r.norm1_beta...);
  f(prefix + "conv2_w", r.conv2_w...);
  f(prefix + "conv2_b", r.conv2_b...);
  f(prefix + "norm2_gamma", r.norm2_gamma...);
  f(prefix + "norm2_beta", r.norm2_beta...);
}

template <class T>
struct DecoderT {
  T proj_w, proj_b;  // 1×mid×d, mid×1×1
  ResBlockT<T> block0;
  T up1_w, up1_b;  // 1×mid×(mid·9)
  T norm1_gamma, norm1_beta;
  ResBlockT<T> block1;
  T up2_w, up2_b;  // 1×fine×(mid·9)
  T norm2_gamma, norm2_beta;
  ResBlockT<T> block2;
  T out_w, out_b;  // 1×C×(fine·9)
};

template <class F, class... D>
void visit_decoder(F&& f, const std::string& prefix, D&... d) {
  f(prefix + "proj_w", d.proj_w...);
  f(prefix + "proj_b", d.proj_b...);
  visit_resblock(f, prefix + "block0.", d.block0...);
  f(prefix + "up1_w", d.up1_w...);
  f(prefix + "up1_b", d.up1_b...);
  f(prefix + "norm1_gamma", d.norm1_gamma...);
  f(prefix + "norm1_beta", d.norm1_beta...);
  visit_resblock(f, prefix + "block1.", d.block1...);
  f(prefix + "up2_w", d.up2_w...);
  f(prefix + "up2_b", d.up2_b...);
  f(prefix + "norm2_gamma", d.norm2_gamma...);
  f(prefix + "norm2_beta", d.norm2_beta...);
  visit_resblock(f, prefix + "block2.", d.block2...);
  f(prefix + "out_w", d.out_w...);
  f(prefix + "out_b", d.out_b...);
}

template <class T>
struct CodecParamsT {
  T patch_w;  // 1×d×(C·p²)
  T patch_b;  // d×1×1
  std::array<LayerParamsT<T>, kEncoderLayers> encoder;
  DecoderT<T> decoder;
};

using CodecParams = CodecParamsT<FieldGrid>;
using CodecVars = CodecParamsT<ad::Var>;

template <class F, class... P>
void visit_codec(F&& f, const std::string& prefix, P&... p) {
  f(prefix + "patch_w", p.patch_w...);
  f(prefix + "patch_b", p.patch_b...);
  for (std::size_t i = 0; i < kEncoderLayers; ++i)
    visit_layer(f, prefix + "encoder" + std::to_string(i) + ".", p.encoder[i]...);
  visit_decoder(f, prefix + "decoder.", p.decoder...);
}

inline FieldGrid init_conv(std::size_t cout, std::size_t cin, Rng& rng) {
  return init_weight(cout, cin * 9, cin * 9, rng);
}

inline ResBlockT<FieldGrid> init_resblock(std::size_t ch, Rng& rng) {
  return {init_conv(ch, ch, rng), make_vector(ch), make_vector(ch, 1.0), make_vector(ch),
          init_conv(ch, ch, rng), make_vector(ch), make_vector(ch, 1.0), make_vector(ch)};
}

inline CodecParams init_codec(const CodecConfig& cfg, Rng& rng, const LayerInit& layer_init = {}) {
  require(cfg.decoder_mid % cfg.groups == 0 && cfg.decoder_fine % cfg.groups == 0,
          "init_codec: decoder widths must be divisible by the group count");
  const std::size_t patch_in = cfg.in_channels * cfg.patch * cfg.patch;
  CodecParams p;
  p.patch_w = init_weight(cfg.d, patch_in, patch_in, rng);
  p.patch_b = make_vector(cfg.d);
  for (auto& layer : p.encoder) layer = init_layer(cfg.d, rng, layer_init);
  auto& dec = p.decoder;
  const std::size_t mid = cfg.decoder_mid, fine = cfg.decoder_fine;
  dec.proj_w = init_weight(mid, cfg.d, cfg.d, rng);
  dec.proj_b = make_vector(mid);
  dec.block0 = init_resblock(mid, rng);
  dec.up1_w = init_conv(mid, mid, rng);
  dec.up1_b = make_vector(mid);
  dec.norm1_gamma = make_vector(mid, 1.0);
  dec.norm1_beta = make_vector(mid);
  dec.block1 = init_resblock(mid, rng);
  dec.up2_w = init_conv(fine, mid, rng);
  dec.up2_b = make_vector(fine);
  dec.norm2_gamma = make_vector(fine, 1.0);
  dec.norm2_beta = make_vector(fine);
  dec.block2 = init_resblock(fine, rng);
  dec.out_w = init_conv(cfg.in_channels, fine, rng);
  dec.out_b = make_vector(cfg.in_channels);
  return p;
}

inline std::size_t decoder_parameter_count(const DecoderT<FieldGrid>& dec) {
  std::size_t n = 0;
  visit_decoder([&](const std::string&, const FieldGrid& g) { n += g.size(); }, "", dec);
  return n;
}

// ---------------------------------------------------------------------------
// Encoder

inline ad::Var patch_embed(const ad::Var& frame, const ad::Var& w, const ad::Var& b, std::size_t patch) {
  return ad::linear(w, ad::space_to_depth(frame, patch), b);
}

inline FieldGrid patch_embed(const FieldGrid& frame, const CodecParams& p, std::size_t patch = 4) {
  return patch_embed(ad::Var::constant(frame), ad::Var::constant(p.patch_w), ad::Var::constant(p.patch_b), patch)
      .value();
}

struct EncodeOptions {
  std::size_t patch = 4;
  std::size_t max_steps = 6;
  bool adaptive = false;
  bool normalize = true;
  double norm_eps = 1e-6;
  StopCriterion stop{};
  BioConfig bio{};
};

template <class S>
struct EncodeResultT {
  S u0;
  S u_pde;
  S z;
  std::array<LayerDiagnostics, kEncoderLayers> diagnostics;
};

using EncodeResult = EncodeResultT<FieldGrid>;

/// u0 = patch_embed(frame); three PDE layers; z = u_pde + u0, then inhibition
/// and fatigue when enabled. `fatigue` is updated in place.
inline EncodeResultT<ad::Var> encode(const ad::Var& frame, const CodecVars& p, const EncodeOptions& opt,
                                     FatigueState* fatigue = nullptr, BufferLog* log = nullptr) {
  EncodeResultT<ad::Var> r;
  r.u0 = patch_embed(frame, p.patch_w, p.patch_b, opt.patch);
  IntegrateOptions io;
  io.max_steps = opt.max_steps;
  io.adaptive = opt.adaptive;
  io.normalize = opt.normalize;
  io.norm_eps = opt.norm_eps;
  io.stop = opt.stop;
  ad::Var u = r.u0;
  for (std::size_t i = 0; i < kEncoderLayers; ++i) {
    auto [next, diag] = integrate_layer(u, p.encoder[i], io);
    u = std::move(next);
    r.diagnostics[i] = std::move(diag);
  }
  r.u_pde = u;
  ad::Var z = ad::add(u, r.u0);
  if (opt.bio.inhibition) z = ad::lateral_inhibition(z, opt.bio.inhibition_beta, opt.bio.inhibition_min_factor);
  if (opt.bio.fatigue && fatigue) z = synaptic_fatigue(z, *fatigue, log);
  r.z = std::move(z);
  return r;
}

// ---------------------------------------------------------------------------
// Decoder

/// conv → GN → gelu → conv → GN, plus the identity.
inline ad::Var resblock(const ad::Var& x, const ResBlockT<ad::Var>& b, std::size_t groups, double eps) {
  ad::Var y = ad::group_norm(ad::conv3x3(x, b.conv1_w, b.conv1_b), b.norm1_gamma, b.norm1_beta, groups, eps);
  y = ad::gelu(y);
  y = ad::group_norm(ad::conv3x3(y, b.conv2_w, b.conv2_b), b.norm2_gamma, b.norm2_beta, groups, eps);
  return ad::add(x, y);
}

/// Logits at C×4H×4W for a d×H×W latent; no sigmoid.
inline ad::Var decode(const ad::Var& z, const DecoderT<ad::Var>& p, std::size_t groups = 8, double eps = 1e-5) {
  ad::Var h = ad::linear(p.proj_w, z, p.proj_b);
  h = resblock(h, p.block0, groups, eps);
  h = ad::conv3x3(ad::bilinear_resize(h, 2 * h.height(), 2 * h.width()), p.up1_w, p.up1_b);
  h = resblock(ad::group_norm(h, p.norm1_gamma, p.norm1_beta, groups, eps), p.block1, groups, eps);
  h = ad::conv3x3(ad::bilinear_resize(h, 2 * h.height(), 2 * h.width()), p.up2_w, p.up2_b);
  h = resblock(ad::group_norm(h, p.norm2_gamma, p.norm2_beta, groups, eps), p.block2, groups, eps);
  return ad::conv3x3(h, p.out_w, p.out_b);
}

// ---------------------------------------------------------------------------
// Value versions

inline CodecVars to_vars(const CodecParams& p, bool requires_grad) {
  CodecVars v;
  visit_codec([&](const std::string&, const FieldGrid& src, ad::Var& dst) {
    dst = requires_grad ? ad::Var::parameter(src) : ad::Var::constant(src);
  }, "", p, v);
  return v;
}

inline DecoderT<ad::Var> decoder_constants(const DecoderT<FieldGrid>& p) {
  DecoderT<ad::Var> v;
  visit_decoder([](const std::string&, const FieldGrid& src, ad::Var& dst) { dst = ad::Var::constant(src); }, "",
                p, v);
  return v;
}

inline EncodeResult encode(const FieldGrid& frame, const CodecParams& p, const EncodeOptions& opt,
                           FatigueState* fatigue = nullptr) {
  auto r = encode(ad::Var::constant(frame), to_vars(p, false), opt, fatigue);
  return {r.u0.value(), r.u_pde.value(), r.z.value(), std::move(r.diagnostics)};
}

inline FieldGrid decode(const FieldGrid& z, const CodecParams& p, const CodecConfig& cfg = {}) {
  return decode(ad::Var::constant(z), decoder_constants(p.decoder), cfg.groups, cfg.group_eps).value();
}

}  // namespace fluidlab
