#pragma once

// One reaction-diffusion layer: the Euler update with multi-scale diffusion,
// a position-wise reaction MLP and gated global/local memories, plus the
// integration loop with periodic RMS normalization and adaptive stopping.
//
// Everything is written once against ad::Var. The FieldGrid overloads run the
// same code with untracked leaves.

#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "fluidlab/autodiff.hpp"
#include "fluidlab/field.hpp"
#include "fluidlab/rng.hpp"

namespace fluidlab {

inline constexpr std::array<std::size_t, 3> kDilations{1, 4, 16};
inline constexpr std::size_t kLocalMemorySize = 4;
inline constexpr double kDtMin = 0.005;
inline constexpr double kDtMax = 0.35;

/// Learnable quantities of one layer. T is FieldGrid for values and ad::Var
/// inside a differentiable forward pass.
template <class T>
struct LayerParamsT {
  T diffusion_logits;  // 1×3×d, one row per dilation
  T reaction_w1;       // 1×2d×d
  T reaction_b1;       // 2d×1×1
  T reaction_w2;       // 1×d×2d
  T reaction_b2;       // d×1×1
  T gmem_gate;         // 1×d×d
  T gmem_val;          // 1×d×d
  T lmem_gate;         // 1×d×d
  T lmem_val;          // 1×d×d
  T alpha_g_logit;     // 1×1×1
  T alpha_l_logit;     // 1×1×1
  T dt_logit;          // 1×1×1
  T norm_gains;        // d×1×1
};

using LayerParams = LayerParamsT<FieldGrid>;
using LayerVars = LayerParamsT<ad::Var>;

/// Calls f(name, member_of_each...) for every parameter, in a fixed order.
template <class F, class... L>
void visit_layer(F&& f, const std::string& prefix, L&... l) {
  f(prefix + "diffusion_logits", l.diffusion_logits...);
  f(prefix + "reaction_w1", l.reaction_w1...);
  f(prefix + "reaction_b1", l.reaction_b1...);
  f(prefix + "reaction_w2", l.reaction_w2...);
  f(prefix + "reaction_b2", l.reaction_b2...);
  f(prefix + "gmem_gate", l.gmem_gate...);
  f(prefix + "gmem_val", l.gmem_val...);
  f(prefix + "lmem_gate", l.lmem_gate...);
  f(prefix + "lmem_val", l.lmem_val...);
  f(prefix + "alpha_g_logit", l.alpha_g_logit...);
  f(prefix + "alpha_l_logit", l.alpha_l_logit...);
  f(prefix + "dt_logit", l.dt_logit...);
  f(prefix + "norm_gains", l.norm_gains...);
}

inline std::size_t layer_dim(const LayerParams& p) { return p.norm_gains.size(); }

/// Uniform(±gain/√fan_in) entries.
inline FieldGrid init_weight(std::size_t rows, std::size_t cols, std::size_t fan_in, Rng& rng,
                             double gain = 1.0) {
  const double bound = gain / std::sqrt(static_cast<double>(fan_in));
  FieldGrid m = make_matrix(rows, cols);
  for (double& v : m.values()) v = rng.uniform(-bound, bound);
  return m;
}

struct LayerInit {
  double diffusion = 0.25;
  double dt = 0.1;
  double alpha = 0.1;
  double reaction_gain = 1.0;
};

inline LayerParams init_layer(std::size_t d, Rng& rng, const LayerInit& init = {}) {
  LayerParams p;
  p.diffusion_logits = make_matrix(kDilations.size(), d, softplus_inverse(init.diffusion));
  p.reaction_w1 = init_weight(2 * d, d, d, rng, init.reaction_gain);
  p.reaction_b1 = make_vector(2 * d);
  p.reaction_w2 = init_weight(d, 2 * d, 2 * d, rng, init.reaction_gain);
  p.reaction_b2 = make_vector(d);
  p.gmem_gate = init_weight(d, d, d, rng);
  p.gmem_val = init_weight(d, d, d, rng);
  p.lmem_gate = init_weight(d, d, d, rng);
  p.lmem_val = init_weight(d, d, d, rng);
  p.alpha_g_logit = make_scalar(softplus_inverse(init.alpha));
  p.alpha_l_logit = make_scalar(softplus_inverse(init.alpha));
  p.dt_logit = make_scalar(std::log(init.dt));
  p.norm_gains = make_vector(d, 1.0);
  return p;
}

/// All weights zero, unit gains; diffusion, timestep and memory gains as given.
inline LayerParams zero_dynamics_layer(std::size_t d, double diffusion = 0.25, double dt = 0.1) {
  LayerParams p;
  p.diffusion_logits = make_matrix(kDilations.size(), d, softplus_inverse(diffusion));
  p.reaction_w1 = make_matrix(2 * d, d);
  p.reaction_b1 = make_vector(2 * d);
  p.reaction_w2 = make_matrix(d, 2 * d);
  p.reaction_b2 = make_vector(d);
  p.gmem_gate = make_matrix(d, d);
  p.gmem_val = make_matrix(d, d);
  p.lmem_gate = make_matrix(d, d);
  p.lmem_val = make_matrix(d, d);
  p.alpha_g_logit = make_scalar(0.0);
  p.alpha_l_logit = make_scalar(0.0);
  p.dt_logit = make_scalar(std::log(dt));
  p.norm_gains = make_vector(d, 1.0);
  return p;
}

inline LayerVars to_vars(const LayerParams& p, bool requires_grad) {
  LayerVars v;
  visit_layer([&](const std::string&, const FieldGrid& src, ad::Var& dst) {
    dst = requires_grad ? ad::Var::parameter(src) : ad::Var::constant(src);
  }, "", p, v);
  return v;
}

/// Effective timestep exp(dt_logit) clamped to [0.005, 0.35].
inline double effective_dt(const LayerParams& p) { return std::clamp(std::exp(p.dt_logit[0]), kDtMin, kDtMax); }

inline ChannelVector effective_diffusion_row(const LayerParams& p, std::size_t k) {
  const std::size_t d = p.diffusion_logits.width();
  ChannelVector out(d);
  for (std::size_t c = 0; c < d; ++c) out[c] = softplus(p.diffusion_logits[k * d + c]);
  return out;
}

struct StopCriterion {
  double epsilon = 0.08;
  std::size_t patience = 2;
  std::size_t probe_h = 8;
  std::size_t probe_w = 8;
  double eps_prime = 1e-6;
};

struct LayerDiagnostics {
  std::size_t steps_used = 0;
  std::vector<double> turbulence_per_step;
  std::vector<double> energy_per_step;
};

struct IntegrateOptions {
  std::size_t max_steps = 6;
  bool adaptive = false;
  bool normalize = true;
  double norm_eps = 1e-6;
  StopCriterion stop{};
  /// Per-position multiplier on the diffusion term (Hebbian modulation), d×H×W.
  const FieldGrid* diffusion_multiplier = nullptr;
  /// Called after every step (post-normalization) with τ and the new field.
  std::function<void(std::size_t, const FieldGrid&)> on_step;
};

// ---------------------------------------------------------------------------
// Differentiable building blocks

/// Position-wise MLP: W2·gelu(W1·u + b1) + b2.
inline ad::Var reaction(const ad::Var& u, const LayerVars& p) {
  return ad::linear(p.reaction_w2, ad::gelu(ad::linear(p.reaction_w1, u, p.reaction_b1)), p.reaction_b2);
}

/// h + sigmoid(Wg·x) ⊙ tanh(Wv·x), with the matrices applied per position.
inline ad::Var gated_accumulate(const ad::Var& h, const ad::Var& x, const ad::Var& gate_w,
                                const ad::Var& val_w) {
  return ad::add(h, ad::mul(ad::sigmoid(ad::linear(gate_w, x)), ad::tanh(ad::linear(val_w, x))));
}

inline ad::Var update_global_memory(const ad::Var& h_g, const ad::Var& u_bar, const LayerVars& p) {
  return gated_accumulate(h_g, u_bar, p.gmem_gate, p.gmem_val);
}

inline ad::Var update_local_memory(const ad::Var& h_l, const ad::Var& u, const LayerVars& p) {
  return gated_accumulate(h_l, ad::avg_pool(u, kLocalMemorySize, kLocalMemorySize), p.lmem_gate, p.lmem_val);
}

inline ad::Var effective_dt(const LayerVars& p) { return ad::clamp(ad::exp(p.dt_logit), kDtMin, kDtMax); }

/// Σ_k softplus(D̂_k) ⊙ ∇²_{dil_k} u, optionally times a per-position multiplier.
inline ad::Var diffusion_term(const ad::Var& u, const LayerVars& p, const FieldGrid* multiplier) {
  ad::Var diff;
  for (std::size_t k = 0; k < kDilations.size(); ++k) {
    ad::Var term = ad::channel_scale(ad::laplacian(u, kDilations[k]), ad::softplus(ad::select_row(p.diffusion_logits, k)));
    diff = diff.defined() ? ad::add(diff, term) : term;
  }
  if (multiplier) diff = ad::mul_const(diff, *multiplier);
  return diff;
}

/// One explicit Euler step: u + Δt·[diffusion + reaction + α_g·h_g + α_l·upsample(h_l)].
inline ad::Var pde_step(const ad::Var& u, const LayerVars& p, const ad::Var& h_g, const ad::Var& h_l,
                        const FieldGrid* diffusion_multiplier = nullptr) {
  const std::size_t h = u.height(), w = u.width();
  ad::Var rhs = ad::add(diffusion_term(u, p, diffusion_multiplier), reaction(u, p));
  rhs = ad::add(rhs, ad::scale_by(ad::broadcast(h_g, h, w), ad::softplus(p.alpha_g_logit)));
  rhs = ad::add(rhs, ad::scale_by(ad::bilinear_resize(h_l, h, w), ad::softplus(p.alpha_l_logit)));
  return ad::add(u, ad::scale_by(rhs, effective_dt(p)));
}

/// Relative L1 change of the probe: ‖curr − prev‖₁ / (‖prev‖₁ + ε') < ε.
inline bool should_stop(const FieldGrid& probe_prev, const FieldGrid& probe_curr, const StopCriterion& crit) {
  require_same_shape(probe_prev, probe_curr, "should_stop");
  double diff = 0.0, base = 0.0;
  for (std::size_t i = 0; i < probe_prev.size(); ++i) {
    diff += std::abs(probe_curr[i] - probe_prev[i]);
    base += std::abs(probe_prev[i]);
  }
  return diff / (base + crit.eps_prime) < crit.epsilon;
}

/// The layer's integration loop. Memories start at zero each call; RMS
/// normalization follows every even step; with `adaptive` the loop exits once
/// `patience` consecutive probe comparisons are below the threshold.
inline std::pair<ad::Var, LayerDiagnostics> integrate_layer(const ad::Var& u0, const LayerVars& p,
                                                            const IntegrateOptions& opt) {
  require(opt.stop.patience >= 1, "integrate_layer: patience must be at least 1");
  const std::size_t d = u0.channels();
  ad::Var u = u0;
  ad::Var h_g = ad::Var::constant(make_vector(d));
  ad::Var h_l = ad::Var::constant(FieldGrid(d, kLocalMemorySize, kLocalMemorySize));
  LayerDiagnostics diag;
  std::size_t calm = 0;
  FieldGrid probe_prev;
  if (opt.adaptive) probe_prev = avg_pool(u.value(), opt.stop.probe_h, opt.stop.probe_w);
  for (std::size_t tau = 1; tau <= opt.max_steps; ++tau) {
    h_g = update_global_memory(h_g, ad::spatial_mean(u), p);
    h_l = update_local_memory(h_l, u, p);
    ad::Var next = pde_step(u, p, h_g, h_l, opt.diffusion_multiplier);
    if (opt.normalize && tau % 2 == 0) next = ad::rms_norm(next, p.norm_gains, opt.norm_eps);
    diag.turbulence_per_step.push_back(mean_abs_diff(next.value(), u.value()));
    diag.energy_per_step.push_back(energy(next.value()));
    u = std::move(next);
    diag.steps_used = tau;
    if (opt.on_step) opt.on_step(tau, u.value());
    if (opt.adaptive) {
      FieldGrid probe = avg_pool(u.value(), opt.stop.probe_h, opt.stop.probe_w);
      calm = should_stop(probe_prev, probe, opt.stop) ? calm + 1 : 0;
      probe_prev = std::move(probe);
      if (calm >= opt.stop.patience) break;
    }
  }
  return {u, std::move(diag)};
}

// ---------------------------------------------------------------------------
// Value-level entry points

inline FieldGrid reaction(const FieldGrid& u, const LayerParams& p) {
  return reaction(ad::Var::constant(u), to_vars(p, false)).value();
}

inline ChannelVector update_global_memory(const ChannelVector& h_g, const ChannelVector& u_bar,
                                          const LayerParams& p) {
  return ChannelVector::from_grid(
      update_global_memory(ad::Var::constant(h_g.as_grid()), ad::Var::constant(u_bar.as_grid()), to_vars(p, false))
          .value());
}

inline FieldGrid update_local_memory(const FieldGrid& h_l, const FieldGrid& u, const LayerParams& p) {
  return update_local_memory(ad::Var::constant(h_l), ad::Var::constant(u), to_vars(p, false)).value();
}

inline FieldGrid pde_step(const FieldGrid& u, const LayerParams& p, const ChannelVector& h_g, const FieldGrid& h_l,
                          const FieldGrid* diffusion_multiplier = nullptr) {
  return pde_step(ad::Var::constant(u), to_vars(p, false), ad::Var::constant(h_g.as_grid()),
                  ad::Var::constant(h_l), diffusion_multiplier)
      .value();
}

inline std::pair<FieldGrid, LayerDiagnostics> integrate_layer(const FieldGrid& u0, const LayerParams& p,
                                                              const IntegrateOptions& opt) {
  auto [u, diag] = integrate_layer(ad::Var::constant(u0), to_vars(p, false), opt);
  return {u.value(), std::move(diag)};
}

}  // namespace fluidlab
