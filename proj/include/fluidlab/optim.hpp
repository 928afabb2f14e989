#pragma once

// AdamW with global-norm clipping, decoupled weight decay, and a linear
// warmup followed by cosine annealing.

#include <cmath>
#include <cstddef>
#include <numbers>
#include <vector>

#include "fluidlab/field.hpp"

namespace fluidlab {

struct OptimConfig {
  double lr = 3e-4;
  double weight_decay = 0.04;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t warmup = 500;
  std::size_t horizon = 8000;
  double clip_norm = 1.0;
};

struct OptimState {
  OptimConfig cfg{};
  std::vector<double> m;
  std::vector<double> v;
  std::size_t step = 0;

  static OptimState fresh(std::size_t n, const OptimConfig& cfg) { return {cfg, std::vector<double>(n), std::vector<double>(n), 0}; }
};

/// Linear 0→lr over [0, warmup), then lr·½(1 + cos(π·progress)) reaching 0 at
/// the horizon.
inline double lr_at(std::size_t step, const OptimConfig& cfg) {
  if (step < cfg.warmup) return cfg.lr * static_cast<double>(step) / static_cast<double>(cfg.warmup);
  if (cfg.horizon <= cfg.warmup || step >= cfg.horizon) return step >= cfg.horizon ? 0.0 : cfg.lr;
  const double progress = static_cast<double>(step - cfg.warmup) / static_cast<double>(cfg.horizon - cfg.warmup);
  return cfg.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

inline double lr_at(std::size_t step, const OptimState& s) { return lr_at(step, s.cfg); }

inline double global_norm(const std::vector<double>& g) {
  double s = 0.0;
  for (double x : g) s += x * x;
  return std::sqrt(s);
}

/// Scales g in place so its norm is at most clip; returns the norm before clipping.
inline double clip_global_norm(std::vector<double>& g, double clip) {
  const double norm = global_norm(g);
  if (clip > 0.0 && norm > clip) {
    const double k = clip / norm;
    for (double& x : g) x *= k;
  }
  return norm;
}

/// One update. The step counter advances first and the learning rate is
/// lr_at(new step); pass `lr_override` ≥ 0 to bypass the schedule.
inline double optimizer_step(std::vector<double>& params, std::vector<double> grads, OptimState& s,
                             double lr_override = -1.0) {
  require(params.size() == grads.size() && s.m.size() == params.size() && s.v.size() == params.size(),
          "optimizer_step: size mismatch");
  const double norm = clip_global_norm(grads, s.cfg.clip_norm);
  ++s.step;
  const double lr = lr_override >= 0.0 ? lr_override : lr_at(s.step, s.cfg);
  const double bc1 = 1.0 - std::pow(s.cfg.beta1, static_cast<double>(s.step));
  const double bc2 = 1.0 - std::pow(s.cfg.beta2, static_cast<double>(s.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    s.m[i] = s.cfg.beta1 * s.m[i] + (1.0 - s.cfg.beta1) * grads[i];
    s.v[i] = s.cfg.beta2 * s.v[i] + (1.0 - s.cfg.beta2) * grads[i] * grads[i];
    const double mhat = s.m[i] / bc1;
    const double vhat = s.v[i] / bc2;
    params[i] *= 1.0 - lr * s.cfg.weight_decay;
    params[i] -= lr * mhat / (std::sqrt(vhat) + s.cfg.eps);
  }
  return norm;
}

}  // namespace fluidlab
