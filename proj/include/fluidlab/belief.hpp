#pragma once

// Persistent latent state: gated write, PDE evolve, interpolated read, and
// seeded corruption for the self-repair experiments.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "fluidlab/autodiff.hpp"
#include "fluidlab/bio.hpp"
#include "fluidlab/dynamics.hpp"
#include "fluidlab/field.hpp"
#include "fluidlab/rng.hpp"

namespace fluidlab {

inline constexpr double kGammaMin = 0.5;
inline constexpr double kGammaMax = 0.99;

template <class T>
struct BeliefParamsT {
  T write_gate;  // 1×d×d
  T write_val;   // 1×d×d
  T gamma_logit; // 1×1×1
  LayerParamsT<T> evolve;
};

using BeliefParams = BeliefParamsT<FieldGrid>;
using BeliefVars = BeliefParamsT<ad::Var>;

template <class F, class... B>
void visit_belief(F&& f, const std::string& prefix, B&... b) {
  f(prefix + "write_gate", b.write_gate...);
  f(prefix + "write_val", b.write_val...);
  f(prefix + "gamma_logit", b.gamma_logit...);
  visit_layer(f, prefix + "evolve.", b.evolve...);
}

inline BeliefParams init_belief(std::size_t d, Rng& rng, const LayerInit& init = {}, double gamma = 0.95) {
  BeliefParams p;
  p.write_gate = init_weight(d, d, d, rng);
  p.write_val = init_weight(d, d, d, rng);
  p.gamma_logit = make_scalar(std::log(gamma));
  p.evolve = init_layer(d, rng, init);
  return p;
}

inline BeliefVars to_vars(const BeliefParams& p, bool requires_grad) {
  BeliefVars v;
  visit_belief([&](const std::string&, const FieldGrid& src, ad::Var& dst) {
    dst = requires_grad ? ad::Var::parameter(src) : ad::Var::constant(src);
  }, "", p, v);
  return v;
}

inline double effective_gamma(const BeliefParams& p) {
  return std::clamp(std::exp(p.gamma_logit[0]), kGammaMin, kGammaMax);
}

struct BeliefOptions {
  std::size_t n_evolve = 3;
  bool adaptive = false;
  bool normalize = true;
  double norm_eps = 1e-6;
  StopCriterion stop{};
  BioConfig bio{};
};

/// S is FieldGrid for plain values, ad::Var inside a differentiable window.
template <class S>
struct BeliefStateT {
  S s;
  FatigueState fatigue;
  HebbianMap hebbian;
};

using BeliefState = BeliefStateT<FieldGrid>;
using BeliefTrack = BeliefStateT<ad::Var>;

/// s = 0, rested health, empty Hebbian map.
inline BeliefState initial_belief(std::size_t d, std::size_t h, std::size_t w, const BioConfig& bio = {}) {
  return {FieldGrid(d, h, w), FatigueState::rested(d, bio), HebbianMap::empty_like(d, h, w, bio)};
}

inline BeliefTrack to_track(const BeliefState& st) {
  return {ad::Var::constant(st.s), st.fatigue, st.hebbian};
}

inline BeliefState to_state(const BeliefTrack& tr) { return {tr.s.value(), tr.fatigue, tr.hebbian}; }

// ---------------------------------------------------------------------------
// Graph versions

/// s' = γ·s + sigmoid(Wg·z) ⊙ tanh(Wv·z).
inline BeliefTrack write(const BeliefTrack& st, const ad::Var& z, const BeliefVars& p) {
  require(z.value().same_shape(st.s.value()), "belief write: z must match the state shape");
  const ad::Var gamma = ad::clamp(ad::exp(p.gamma_logit), kGammaMin, kGammaMax);
  BeliefTrack out = st;
  out.s = gated_accumulate(ad::scale_by(st.s, gamma), z, p.write_gate, p.write_val);
  return out;
}

/// n_evolve PDE steps with the Hebbian multiplier, then one Hebbian update
/// from the result. Inhibition and fatigue follow only with bio.post_evolve.
inline BeliefTrack evolve(const BeliefTrack& st, const BeliefVars& p, const BeliefOptions& opt,
                          BufferLog* log = nullptr, LayerDiagnostics* diag = nullptr) {
  BeliefTrack out = st;
  if (opt.n_evolve == 0) return out;
  FieldGrid multiplier;
  IntegrateOptions io;
  io.max_steps = opt.n_evolve;
  io.adaptive = opt.adaptive;
  io.normalize = opt.normalize;
  io.norm_eps = opt.norm_eps;
  io.stop = opt.stop;
  if (opt.bio.hebbian) {
    multiplier = diffusion_multiplier(st.hebbian);
    io.diffusion_multiplier = &multiplier;
  }
  auto [u, d] = integrate_layer(st.s, p.evolve, io);
  if (opt.bio.post_evolve) {
    if (opt.bio.inhibition) u = ad::lateral_inhibition(u, opt.bio.inhibition_beta, opt.bio.inhibition_min_factor);
    if (opt.bio.fatigue) u = synaptic_fatigue(u, out.fatigue, log);
  }
  if (opt.bio.hebbian) out.hebbian.map = pin(log, hebbian_update(st.hebbian, u.value()).map);
  out.s = std::move(u);
  if (diag) *diag = std::move(d);
  return out;
}

inline ad::Var read(const BeliefTrack& st, std::size_t out_h, std::size_t out_w) {
  return ad::bilinear_resize(st.s, out_h, out_w);
}

// ---------------------------------------------------------------------------
// Value versions

inline BeliefState write(const BeliefState& st, const FieldGrid& z, const BeliefParams& p) {
  return to_state(write(to_track(st), ad::Var::constant(z), to_vars(p, false)));
}

inline BeliefState evolve(const BeliefState& st, const BeliefParams& p, const BeliefOptions& opt,
                          LayerDiagnostics* diag = nullptr) {
  return to_state(evolve(to_track(st), to_vars(p, false), opt, nullptr, diag));
}

inline FieldGrid read(const BeliefState& st, std::size_t out_h, std::size_t out_w) {
  return bilinear_resize(st.s, out_h, out_w);
}

// ---------------------------------------------------------------------------
// Corruption

enum class CorruptionMode { kZeroChannels, kGaussianNoise, kChannelMask, kSpatialShuffle };

inline std::string_view to_string(CorruptionMode m) {
  switch (m) {
    case CorruptionMode::kZeroChannels: return "zero_channels";
    case CorruptionMode::kGaussianNoise: return "gaussian_noise";
    case CorruptionMode::kChannelMask: return "channel_mask";
    case CorruptionMode::kSpatialShuffle: return "spatial_shuffle";
  }
  return "?";
}

inline CorruptionMode parse_corruption_mode(std::string_view s) {
  for (auto m : {CorruptionMode::kZeroChannels, CorruptionMode::kGaussianNoise, CorruptionMode::kChannelMask,
                 CorruptionMode::kSpatialShuffle})
    if (to_string(m) == s) return m;
  throw std::invalid_argument("unknown corruption mode: " + std::string(s));
}

/// ⌈ratio·n⌉ with a little slack so 0.3·10 counts as 3.
inline std::size_t corrupted_count(double ratio, std::size_t n) {
  require(ratio >= 0.0 && ratio <= 1.0, "corrupt: ratio must lie in [0, 1]");
  const auto k = static_cast<std::size_t>(std::ceil(ratio * static_cast<double>(n) - 1e-9));
  return std::min(k, n);
}

/// Channels hit at this ratio. Selections are nested: a larger ratio hits a
/// superset of the channels a smaller one hits under the same seed.
inline std::vector<std::size_t> corrupted_channels(std::size_t d, double ratio, std::uint64_t seed) {
  Rng rng(seed);
  auto perm = rng.permutation(d);
  perm.resize(corrupted_count(ratio, d));
  return perm;
}

inline void zero_channels(FieldGrid& s, const std::vector<std::size_t>& channels) {
  for (std::size_t c : channels) std::fill(s.channel(c).begin(), s.channel(c).end(), 0.0);
}

inline BeliefState corrupt(const BeliefState& st, CorruptionMode mode, double ratio, double intensity,
                           std::uint64_t seed) {
  BeliefState out = st;
  FieldGrid& s = out.s;
  switch (mode) {
    case CorruptionMode::kZeroChannels:
    case CorruptionMode::kChannelMask:
      zero_channels(s, corrupted_channels(s.channels(), ratio, seed));
      break;
    case CorruptionMode::kGaussianNoise: {
      Rng rng(seed);
      const auto order = rng.permutation(s.size());
      const std::size_t k = corrupted_count(ratio, s.size());
      for (std::size_t i = 0; i < k; ++i) s[order[i]] += rng.normal(0.0, intensity);
      break;
    }
    case CorruptionMode::kSpatialShuffle: {
      const auto channels = corrupted_channels(s.channels(), ratio, seed);
      Rng rng(seed ^ 0x9e3779b97f4a7c15ULL);
      for (std::size_t c : channels) {
        const auto perm = rng.permutation(s.plane());
        const std::vector<double> old(s.channel(c).begin(), s.channel(c).end());
        for (std::size_t i = 0; i < old.size(); ++i) s.channel(c)[i] = old[perm[i]];
      }
      break;
    }
  }
  return out;
}

}  // namespace fluidlab
