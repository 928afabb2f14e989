#pragma once

// The full model: codec plus belief field, with a flat parameter view and the
// per-window forward pass shared by training, gradient checks and rollouts.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "fluidlab/autodiff.hpp"
#include "fluidlab/belief.hpp"
#include "fluidlab/bio.hpp"
#include "fluidlab/codec.hpp"
#include "fluidlab/dynamics.hpp"
#include "fluidlab/field.hpp"
#include "fluidlab/loss.hpp"
#include "fluidlab/rng.hpp"

namespace fluidlab {

struct ModelConfig {
  CodecConfig codec{};
  std::size_t frame_h = 64;
  std::size_t frame_w = 64;
  std::size_t encoder_steps = 6;
  std::size_t belief_steps = 3;
  double stop_epsilon = 0.08;
  std::size_t stop_patience = 2;
  double norm_eps = 1e-6;
  LayerInit layer_init{};
  double gamma_init = 0.95;
  BioConfig bio{};
  LossWeights loss{};

  std::size_t latent_h() const { return frame_h / codec.patch; }
  std::size_t latent_w() const { return frame_w / codec.patch; }

  EncodeOptions encode_options(bool adaptive) const {
    EncodeOptions o;
    o.patch = codec.patch;
    o.max_steps = encoder_steps;
    o.adaptive = adaptive;
    o.norm_eps = norm_eps;
    o.stop.epsilon = stop_epsilon;
    o.stop.patience = stop_patience;
    o.bio = bio;
    return o;
  }

  BeliefOptions belief_options(bool adaptive) const {
    BeliefOptions o;
    o.n_evolve = belief_steps;
    o.adaptive = adaptive;
    o.norm_eps = norm_eps;
    o.stop.epsilon = stop_epsilon;
    o.stop.patience = stop_patience;
    o.bio = bio;
    return o;
  }
};

template <class T>
struct ModelParamsT {
  CodecParamsT<T> codec;
  BeliefParamsT<T> belief;
};

using ModelParams = ModelParamsT<FieldGrid>;
using ModelVars = ModelParamsT<ad::Var>;

template <class F, class... M>
void visit_model(F&& f, M&... m) {
  visit_codec(f, "codec.", m.codec...);
  visit_belief(f, "belief.", m.belief...);
}

inline ModelParams init_model(const ModelConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  ModelParams p;
  p.codec = init_codec(cfg.codec, rng, cfg.layer_init);
  p.belief = init_belief(cfg.codec.d, rng, cfg.layer_init, cfg.gamma_init);
  return p;
}

inline ModelVars to_vars(const ModelParams& p, bool requires_grad) {
  ModelVars v;
  visit_model([&](const std::string&, const FieldGrid& src, ad::Var& dst) {
    dst = requires_grad ? ad::Var::parameter(src) : ad::Var::constant(src);
  }, p, v);
  return v;
}

/// One named block of the flat parameter vector.
struct ParamBlock {
  std::string name;
  std::size_t offset = 0;
  std::size_t size = 0;
};

inline std::vector<ParamBlock> parameter_layout(const ModelParams& p) {
  std::vector<ParamBlock> out;
  std::size_t off = 0;
  visit_model([&](const std::string& name, const FieldGrid& g) {
    out.push_back({name, off, g.size()});
    off += g.size();
  }, p);
  return out;
}

inline std::size_t parameter_count(const ModelParams& p) {
  std::size_t n = 0;
  visit_model([&](const std::string&, const FieldGrid& g) { n += g.size(); }, p);
  return n;
}

inline std::vector<double> flatten(const ModelParams& p) {
  std::vector<double> out;
  out.reserve(parameter_count(p));
  visit_model([&](const std::string&, const FieldGrid& g) { out.insert(out.end(), g.values().begin(), g.values().end()); },
              p);
  return out;
}

/// Writes `flat` into a copy of `shape`; sizes must match exactly.
inline ModelParams unflatten(const ModelParams& shape, const std::vector<double>& flat) {
  require(flat.size() == parameter_count(shape), "unflatten: parameter vector length mismatch");
  ModelParams p = shape;
  std::size_t off = 0;
  visit_model([&](const std::string&, FieldGrid& g) {
    std::copy(flat.begin() + static_cast<long>(off), flat.begin() + static_cast<long>(off + g.size()),
              g.values().begin());
    off += g.size();
  }, p);
  return p;
}

/// Gradients of every parameter leaf, in flatten order.
inline std::vector<double> gather_gradients(const ModelVars& v) {
  std::vector<double> out;
  visit_model([&](const std::string&, const ad::Var& leaf) {
    const FieldGrid g = leaf.grad();
    out.insert(out.end(), g.values().begin(), g.values().end());
  }, v);
  return out;
}

// ---------------------------------------------------------------------------
// Window forward pass

struct WindowResult {
  ad::Var loss;            // mean over the window's transitions
  std::vector<double> per_step;
  BeliefState final_state; // detached
};

/// frames[0..T]: for each t, encode x_t, reconstruct it, write and evolve the
/// belief, read and decode the prediction of x_{t+1}.
inline WindowResult forward_window(const ModelVars& v, const ModelConfig& cfg, const std::vector<FieldGrid>& frames,
                                   const BeliefState& start, BufferLog* log = nullptr) {
  require(frames.size() >= 2, "forward_window: need at least two frames");
  const EncodeOptions eo = cfg.encode_options(false);
  const BeliefOptions bo = cfg.belief_options(false);
  BeliefTrack st = to_track(start);
  WindowResult r;
  ad::Var total;
  const std::size_t steps = frames.size() - 1;
  for (std::size_t t = 0; t < steps; ++t) {
    auto enc = encode(ad::Var::constant(frames[t]), v.codec, eo, &st.fatigue, log);
    const ad::Var recon = decode(enc.z, v.codec.decoder, cfg.codec.groups, cfg.codec.group_eps);
    st = write(st, enc.z, v.belief);
    st = evolve(st, v.belief, bo, log);
    const ad::Var zhat = read(st, cfg.latent_h(), cfg.latent_w());
    const ad::Var pred = decode(zhat, v.codec.decoder, cfg.codec.groups, cfg.codec.group_eps);
    auto terms = total_loss(frames[t], frames[t + 1], recon, pred, enc.z, cfg.loss);
    r.per_step.push_back(terms.total.item());
    total = total.defined() ? ad::add(total, terms.total) : terms.total;
  }
  r.loss = ad::scale(total, 1.0 / static_cast<double>(steps));
  r.final_state = to_state(st);
  return r;
}

inline BeliefState initial_belief(const ModelConfig& cfg) {
  return initial_belief(cfg.codec.d, cfg.latent_h(), cfg.latent_w(), cfg.bio);
}

}  // namespace fluidlab
