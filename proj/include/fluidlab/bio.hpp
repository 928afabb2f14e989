#pragma once

// Lateral inhibition, synaptic fatigue and Hebbian diffusion modulation.
//
// Fatigue health and the Hebbian map are running buffers: they are computed
// from values and enter the differentiable graph as constants. BufferLog lets
// a caller record those buffers once and replay them, so a finite-difference
// check sees the same stop-gradient function the backward pass differentiates.

#include <algorithm>
#include <cstddef>
#include <stdexcept>
#include <utility>
#include <vector>

#include "fluidlab/autodiff.hpp"
#include "fluidlab/field.hpp"

namespace fluidlab {

struct BioConfig {
  bool inhibition = true;
  double inhibition_beta = 0.3;
  double inhibition_min_factor = 0.2;
  bool fatigue = true;
  double fatigue_kappa = 0.1;
  double fatigue_rho = 0.02;
  double fatigue_h_min = 0.1;
  bool hebbian = true;
  double hebbian_decay = 0.99;
  double hebbian_lr = 0.01;
  double hebbian_gain = 0.5;
  /// Also apply inhibition and fatigue to the belief state after each evolve.
  bool post_evolve = false;
};

/// Record/replay of stop-gradient buffers.
class BufferLog {
 public:
  enum class Mode { kRecord, kReplay };

  BufferLog() = default;
  explicit BufferLog(Mode mode) : mode_(mode) {}

  Mode mode() const noexcept { return mode_; }

  /// Records `computed`, or returns the next recorded buffer in replay mode.
  FieldGrid pin(FieldGrid computed) {
    if (mode_ == Mode::kRecord) {
      entries_.push_back(computed);
      return computed;
    }
    if (cursor_ >= entries_.size()) throw std::logic_error("BufferLog: replay past the recorded buffers");
    return entries_[cursor_++];
  }

  /// A replaying copy positioned at the first buffer.
  BufferLog replay() const {
    BufferLog r(Mode::kReplay);
    r.entries_ = entries_;
    return r;
  }

  std::size_t size() const noexcept { return entries_.size(); }

 private:
  Mode mode_ = Mode::kRecord;
  std::vector<FieldGrid> entries_;
  std::size_t cursor_ = 0;
};

inline FieldGrid pin(BufferLog* log, FieldGrid computed) {
  return log ? log->pin(std::move(computed)) : computed;
}

// ---------------------------------------------------------------------------
// Lateral inhibition

inline FieldGrid lateral_inhibition(const FieldGrid& z, double beta = 0.3, double min_factor = 0.2) {
  require(beta >= 0.0 && beta <= 1.0, "lateral_inhibition: beta must lie in [0, 1]");
  return ad::lateral_inhibition(ad::Var::constant(z), beta, min_factor).value();
}

// ---------------------------------------------------------------------------
// Synaptic fatigue

struct FatigueState {
  ChannelVector health;
  double kappa = 0.1;
  double rho = 0.02;
  double h_min = 0.1;

  static FatigueState rested(std::size_t d, const BioConfig& cfg = {}) {
    return {ChannelVector(d, 1.0), cfg.fatigue_kappa, cfg.fatigue_rho, cfg.fatigue_h_min};
  }
};

/// h' = clamp(h − κ|z̄_c| + ρ, h_min, 1) from the spatial means of z.
inline ChannelVector next_health(const FatigueState& s, const FieldGrid& z) {
  require(s.health.dim() == z.channels(), "synaptic_fatigue: health must have one entry per channel");
  const ChannelVector zbar = spatial_mean(z);
  ChannelVector h(z.channels());
  for (std::size_t c = 0; c < z.channels(); ++c)
    h[c] = std::clamp(s.health[c] - s.kappa * std::abs(zbar[c]) + s.rho, s.h_min, 1.0);
  return h;
}

/// Updates the health buffer and scales each channel by its new health.
inline ad::Var synaptic_fatigue(const ad::Var& z, FatigueState& state, BufferLog* log = nullptr) {
  FieldGrid h = pin(log, next_health(state, z.value()).as_grid());
  state.health = ChannelVector::from_grid(h);
  return ad::channel_scale(z, ad::Var::constant(std::move(h)));
}

inline std::pair<FieldGrid, FatigueState> synaptic_fatigue(const FieldGrid& z, FatigueState state) {
  FieldGrid out = synaptic_fatigue(ad::Var::constant(z), state).value();
  return {std::move(out), std::move(state)};
}

// ---------------------------------------------------------------------------
// Hebbian diffusion

struct HebbianMap {
  FieldGrid map;
  double lambda = 0.99;
  double eta = 0.01;
  double gain = 0.5;

  static HebbianMap empty_like(std::size_t d, std::size_t h, std::size_t w, const BioConfig& cfg = {}) {
    return {FieldGrid(d, h, w), cfg.hebbian_decay, cfg.hebbian_lr, cfg.hebbian_gain};
  }
};

/// 3×3 box mean with replicate border.
inline FieldGrid smooth3x3(const FieldGrid& u) {
  const std::size_t h = u.height(), w = u.width();
  FieldGrid out(u.channels(), h, w);
  for (std::size_t c = 0; c < u.channels(); ++c)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        double s = 0.0;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx)
            s += u(c, clamp_index(static_cast<long>(y) + dy, h), clamp_index(static_cast<long>(x) + dx, w));
        out(c, y, x) = s / 9.0;
      }
  return out;
}

/// M' = λM + η·max(0, u ⊙ smooth(u)).
inline HebbianMap hebbian_update(const HebbianMap& state, const FieldGrid& u) {
  require_same_shape(state.map, u, "hebbian_update");
  const FieldGrid s = smooth3x3(u);
  HebbianMap next = state;
  for (std::size_t i = 0; i < u.size(); ++i)
    next.map[i] = state.lambda * state.map[i] + state.eta * std::max(0.0, u[i] * s[i]);
  return next;
}

/// Per-position diffusion multiplier 1 + α_H·M.
inline FieldGrid diffusion_multiplier(const HebbianMap& state) {
  FieldGrid m = state.map;
  for (double& v : m.values()) v = 1.0 + state.gain * v;
  return m;
}

/// D_c·(1 + α_H·M) for one diffusion scale.
inline FieldGrid effective_diffusion(const ChannelVector& diffusion, const HebbianMap& state) {
  require(diffusion.dim() == state.map.channels(), "effective_diffusion: channel mismatch");
  FieldGrid m = diffusion_multiplier(state);
  for (std::size_t c = 0; c < m.channels(); ++c)
    for (double& v : m.channel(c)) v *= diffusion[c];
  return m;
}

}  // namespace fluidlab
