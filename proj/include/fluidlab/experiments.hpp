#pragma once

// Rollouts and the dynamical-systems experiments: phase sweep, Lyapunov
// exponent, energy trajectories, symmetry breaking, corruption resilience,
// and the attention-vs-diffusion operation counts.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "fluidlab/belief.hpp"
#include "fluidlab/codec.hpp"
#include "fluidlab/dynamics.hpp"
#include "fluidlab/field.hpp"
#include "fluidlab/kmeans.hpp"
#include "fluidlab/metrics.hpp"
#include "fluidlab/model.hpp"
#include "fluidlab/parallel.hpp"
#include "fluidlab/rng.hpp"

namespace fluidlab {

// ---------------------------------------------------------------------------
// Rollout

struct RolloutTrace {
  std::vector<FieldGrid> frames;
  std::vector<double> ssim_per_step;
  std::vector<double> mse_per_step;
};

inline FieldGrid sigmoid(const FieldGrid& logits) {
  FieldGrid out = logits;
  for (double& v : out.values()) v = sigmoid(v);
  return out;
}

/// Encode the first frame, then per step: evolve, read, decode, sigmoid, and
/// feed the prediction back through the encoder. `truth[k]` is compared with
/// prediction k when given. Runs in eval mode (adaptive stopping on).
inline RolloutTrace rollout(const ModelParams& p, const ModelConfig& cfg, const FieldGrid& init_frame,
                            std::size_t horizon, const std::vector<FieldGrid>* truth = nullptr) {
  require(!truth || truth->size() >= horizon, "rollout: fewer truth frames than the horizon");
  const EncodeOptions eo = cfg.encode_options(true);
  const BeliefOptions bo = cfg.belief_options(true);
  RolloutTrace tr;
  if (horizon == 0) return tr;
  BeliefState st = initial_belief(cfg);
  auto enc = encode(init_frame, p.codec, eo, &st.fatigue);
  st = write(st, enc.z, p.belief);
  for (std::size_t k = 0; k < horizon; ++k) {
    st = evolve(st, p.belief, bo);
    FieldGrid frame = sigmoid(decode(read(st, cfg.latent_h(), cfg.latent_w()), p.codec, cfg.codec));
    if (truth) {
      tr.ssim_per_step.push_back(ssim(frame, (*truth)[k]));
      tr.mse_per_step.push_back(mse(frame, (*truth)[k]));
    }
    if (k + 1 < horizon) {
      enc = encode(frame, p.codec, eo, &st.fatigue);
      st = write(st, enc.z, p.belief);
    }
    tr.frames.push_back(std::move(frame));
  }
  return tr;
}

// ---------------------------------------------------------------------------
// Layer helpers

/// A layer with random reaction weights of the given gain and with the
/// diffusion coefficient and timestep set directly.
inline LayerParams random_reaction_layer(std::size_t d, std::uint64_t seed, double diffusion, double dt,
                                         double reaction_gain = 1.0, bool memory = true) {
  Rng rng(seed);
  LayerInit init;
  init.diffusion = diffusion;
  init.dt = dt;
  init.reaction_gain = reaction_gain;
  LayerParams p = init_layer(d, rng, init);
  if (!memory) {
    const LayerParams z = zero_dynamics_layer(d, diffusion, dt);
    p.gmem_gate = z.gmem_gate;
    p.gmem_val = z.gmem_val;
    p.lmem_gate = z.lmem_gate;
    p.lmem_val = z.lmem_val;
  }
  return p;
}

inline IntegrateOptions fixed_steps(std::size_t steps, bool normalize) {
  IntegrateOptions o;
  o.max_steps = steps;
  o.normalize = normalize;
  return o;
}

/// Per-step energies of a fixed-length integration, starting with E(u0).
inline std::vector<double> energy_trajectory(const FieldGrid& u0, const LayerParams& p, std::size_t steps,
                                             bool normalize) {
  auto [u, diag] = integrate_layer(u0, p, fixed_steps(steps, normalize));
  std::vector<double> e{energy(u0)};
  e.insert(e.end(), diag.energy_per_step.begin(), diag.energy_per_step.end());
  return e;
}

// ---------------------------------------------------------------------------
// Phase sweep

enum class Regime { kSub, kCritical, kSuper };

inline const char* to_string(Regime r) {
  switch (r) {
    case Regime::kSub: return "sub";
    case Regime::kCritical: return "critical";
    case Regime::kSuper: return "super";
  }
  return "?";
}

inline Regime classify_growth(double rate, double threshold = 1e-3) {
  if (rate > threshold) return Regime::kSuper;
  if (rate < -threshold) return Regime::kSub;
  return Regime::kCritical;
}

struct PhasePoint {
  double D = 0.0;
  double dt = 0.0;
  double growth_rate = 0.0;
  Regime regime = Regime::kCritical;
};

struct PhaseConfig {
  double d_min = 0.01, d_max = 1.0;
  double dt_min = 0.005, dt_max = 0.35;
  std::size_t grid = 15;
  std::size_t steps = 50;
  std::size_t channels = 8;
  std::size_t size = 16;
  double reaction_gain = 1.0;
  bool memory = true;
  std::uint64_t seed = 0;
  double threshold = 1e-3;
};

inline std::vector<double> linspace(double lo, double hi, std::size_t n) {
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i)
    v[i] = n == 1 ? lo : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
  return v;
}

/// growth = ln(E_end / E_start) / steps for a fixed random-reaction layer and
/// initial field, normalization off, all three dilations at coefficient D.
/// Row-major over (D, Δt).
inline std::vector<PhasePoint> phase_sweep(const PhaseConfig& cfg) {
  const auto ds = linspace(cfg.d_min, cfg.d_max, cfg.grid);
  const auto dts = linspace(cfg.dt_min, cfg.dt_max, cfg.grid);
  Rng rng(cfg.seed);
  const FieldGrid u0 = rng.normal_grid(cfg.channels, cfg.size, cfg.size);
  const LayerParams base = random_reaction_layer(cfg.channels, cfg.seed + 1, 0.25, 0.1, cfg.reaction_gain, cfg.memory);
  std::vector<PhasePoint> out(ds.size() * dts.size());
  parallel_for(out.size(), [&](std::size_t cell) {
    LayerParams p = base;
    const double D = ds[cell / dts.size()], dt = dts[cell % dts.size()];
    for (double& v : p.diffusion_logits.values()) v = softplus_inverse(D);
    p.dt_logit = make_scalar(std::log(dt));
    const auto e = energy_trajectory(u0, p, cfg.steps, false);
    const double rate = std::log(e.back() / e.front()) / static_cast<double>(cfg.steps);
    out[cell] = {D, dt, rate, classify_growth(rate, cfg.threshold)};
  });
  return out;
}

// ---------------------------------------------------------------------------
// Lyapunov exponent

struct LyapunovResult {
  double mean = 0.0;
  double std = 0.0;
  std::vector<double> increments;
};

/// Benettin estimate for a map u → f(u): co-iterate a trajectory and a copy
/// perturbed by delta0 along a seeded random direction, record
/// ln(d_t / delta0) each step, then rescale the separation back to delta0.
/// Increments after `transient` steps are divided by steps_per_map.
inline LyapunovResult lyapunov(const std::function<FieldGrid(const FieldGrid&)>& f, const FieldGrid& u0,
                               std::size_t steps, std::uint64_t seed, double delta0 = 1e-6,
                               std::size_t transient = 10, double steps_per_map = 1.0) {
  require(steps > transient, "lyapunov: steps must exceed the transient");
  Rng rng(seed);
  FieldGrid dir = rng.normal_grid(u0.channels(), u0.height(), u0.width());
  const double n0 = l2_norm(dir);
  FieldGrid u = u0;
  FieldGrid v = u0 + (delta0 / n0) * dir;
  LyapunovResult r;
  for (std::size_t t = 0; t < steps; ++t) {
    u = f(u);
    v = f(v);
    FieldGrid sep = v - u;
    const double d = l2_norm(sep);
    require(d > 0.0 && std::isfinite(d), "lyapunov: separation collapsed or diverged");
    if (t >= transient) r.increments.push_back(std::log(d / delta0) / steps_per_map);
    v = u + (delta0 / d) * sep;
  }
  for (double x : r.increments) r.mean += x;
  r.mean /= static_cast<double>(r.increments.size());
  double ss = 0.0;
  for (double x : r.increments) ss += (x - r.mean) * (x - r.mean);
  r.std = r.increments.size() > 1 ? std::sqrt(ss / static_cast<double>(r.increments.size() - 1)) : 0.0;
  return r;
}

/// The layer map is one normalized two-step integration (memories reset per call).
inline LyapunovResult lyapunov(const LayerParams& p, const FieldGrid& u0, std::size_t steps, std::uint64_t seed,
                               double delta0 = 1e-6) {
  const IntegrateOptions io = fixed_steps(2, true);
  return lyapunov([&](const FieldGrid& u) { return integrate_layer(u, p, io).first; }, u0, steps, seed, delta0, 10,
                  2.0);
}

// ---------------------------------------------------------------------------
// Energy experiment

enum class InitKind { kUniform, kRandom, kGradient };

inline InitKind parse_init_kind(const std::string& s) {
  if (s == "uniform") return InitKind::kUniform;
  if (s == "random") return InitKind::kRandom;
  if (s == "gradient") return InitKind::kGradient;
  throw std::invalid_argument("unknown init kind: " + s);
}

/// uniform: all ones; random: N(0, 1); gradient: horizontal ramp from −1 to 1.
inline FieldGrid initial_field(InitKind kind, std::size_t d, std::size_t h, std::size_t w, std::uint64_t seed) {
  switch (kind) {
    case InitKind::kUniform: return FieldGrid(d, h, w, 1.0);
    case InitKind::kRandom: {
      Rng rng(seed);
      return rng.normal_grid(d, h, w);
    }
    case InitKind::kGradient: {
      FieldGrid f(d, h, w);
      for (std::size_t c = 0; c < d; ++c)
        for (std::size_t y = 0; y < h; ++y)
          for (std::size_t x = 0; x < w; ++x)
            f(c, y, x) = w == 1 ? 0.0 : -1.0 + 2.0 * static_cast<double>(x) / static_cast<double>(w - 1);
      return f;
    }
  }
  return FieldGrid(d, h, w);
}

inline std::vector<double> energy_experiment(InitKind init, const LayerParams& p, std::size_t steps, bool normalize,
                                             std::size_t h, std::size_t w, std::uint64_t seed) {
  return energy_trajectory(initial_field(init, layer_dim(p), h, w, seed), p, steps, normalize);
}

// ---------------------------------------------------------------------------
// Symmetry breaking

/// Cosine similarity of the four quadrants of a single plane after mirroring
/// them onto the top-left one, averaged over the six pairs. A field with both
/// mirror symmetries scores 1. Odd central rows/columns are ignored.
inline double symmetry_index(const FieldGrid& plane) {
  const std::size_t h = plane.height(), w = plane.width(), qh = h / 2, qw = w / 2;
  require(plane.channels() == 1 && qh > 0 && qw > 0, "symmetry_index: need a single plane of at least 2x2");
  std::array<std::vector<double>, 4> q;
  for (auto& v : q) v.reserve(qh * qw);
  for (std::size_t y = 0; y < qh; ++y)
    for (std::size_t x = 0; x < qw; ++x) {
      q[0].push_back(plane(0, y, x));
      q[1].push_back(plane(0, y, w - 1 - x));
      q[2].push_back(plane(0, h - 1 - y, x));
      q[3].push_back(plane(0, h - 1 - y, w - 1 - x));
    }
  double total = 0.0;
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = i + 1; j < 4; ++j) {
      double ab = 0.0, aa = 0.0, bb = 0.0;
      for (std::size_t k = 0; k < q[i].size(); ++k) {
        ab += q[i][k] * q[j][k];
        aa += q[i][k] * q[i][k];
        bb += q[j][k] * q[j][k];
      }
      total += (aa > 0.0 && bb > 0.0) ? ab / std::sqrt(aa * bb) : (aa == bb ? 1.0 : 0.0);
    }
  return total / 6.0;
}

/// Shannon entropy (nats) of |values| in `bins` equal bins over [0, max].
inline double spatial_entropy(const FieldGrid& plane, std::size_t bins = 32) {
  double mx = 0.0;
  for (double v : plane.values()) mx = std::max(mx, std::abs(v));
  if (mx == 0.0) return 0.0;
  std::vector<std::size_t> hist(bins);
  for (double v : plane.values())
    ++hist[std::min(bins - 1, static_cast<std::size_t>(std::abs(v) / mx * static_cast<double>(bins)))];
  double h = 0.0;
  const double n = static_cast<double>(plane.size());
  for (auto c : hist)
    if (c) {
      const double p = static_cast<double>(c) / n;
      h -= p * std::log(p);
    }
  return h;
}

inline std::vector<Point> position_vectors(const FieldGrid& u) {
  std::vector<Point> pts(u.plane(), Point(u.channels()));
  for (std::size_t c = 0; c < u.channels(); ++c)
    for (std::size_t p = 0; p < u.plane(); ++p) pts[p][c] = u.channel(c)[p];
  return pts;
}

struct SymmetryConfig {
  double epsilon = 1e-4;
  std::size_t steps = 20;
  std::uint64_t seed = 0;         // noise
  std::uint64_t param_seed = 1;   // reaction weights and diffusion spread
  std::size_t channels = 8;
  std::size_t size = 16;
  double base = 1.0;
  double diffusion_min = 0.05;    // per channel and dilation, uniform in [min, max]
  double diffusion_max = 1.0;
  double dt = 0.35;
  double reaction_gain = 1.0;
  bool normalize = true;
  bool clusters = true;
};

struct SymmetryStep {
  std::size_t step = 0;
  double symmetry_index = 0.0;
  double entropy = 0.0;
  std::size_t clusters = 0;
  FieldGrid field;  // channel average
};

inline FieldGrid symmetry_initial_field(const SymmetryConfig& cfg) {
  Rng rng(cfg.seed);
  FieldGrid u(cfg.channels, cfg.size, cfg.size, cfg.base);
  for (double& v : u.values()) v += cfg.epsilon * rng.normal();
  return u;
}

inline LayerParams symmetry_layer(const SymmetryConfig& cfg) {
  LayerParams p = random_reaction_layer(cfg.channels, cfg.param_seed, cfg.diffusion_max, cfg.dt, cfg.reaction_gain);
  Rng rng(cfg.param_seed ^ 0x5bd1e995ULL);
  for (double& v : p.diffusion_logits.values()) v = softplus_inverse(rng.uniform(cfg.diffusion_min, cfg.diffusion_max));
  return p;
}

inline std::vector<SymmetryStep> symmetry_experiment(const SymmetryConfig& cfg, std::vector<FieldGrid>* fields = nullptr) {
  const LayerParams p = symmetry_layer(cfg);
  std::vector<SymmetryStep> out;
  auto record = [&](std::size_t step, const FieldGrid& u) {
    SymmetryStep s;
    s.step = step;
    s.field = channel_average(u);
    s.symmetry_index = symmetry_index(s.field);
    s.entropy = spatial_entropy(s.field);
    if (cfg.clusters) s.clusters = best_kmeans(position_vectors(u), 2, 6, cfg.seed).centroids.size();
    if (fields) fields->push_back(u);
    out.push_back(std::move(s));
  };
  const FieldGrid u0 = symmetry_initial_field(cfg);
  record(0, u0);
  IntegrateOptions io = fixed_steps(cfg.steps, cfg.normalize);
  io.on_step = record;
  integrate_layer(u0, p, io);
  return out;
}

// ---------------------------------------------------------------------------
// Resilience

struct ResilienceConfig {
  std::vector<CorruptionMode> modes{CorruptionMode::kZeroChannels, CorruptionMode::kGaussianNoise,
                                    CorruptionMode::kChannelMask, CorruptionMode::kSpatialShuffle};
  std::vector<double> ratios{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  std::size_t warmup = 2;    // evolve steps before corruption
  std::size_t steps = 20;    // evolve steps after corruption
  double intensity = 1.0;
  double recovery_threshold = 0.05;
  std::size_t trials = 32;
  std::uint64_t seed = 0;
};

struct ResilienceCell {
  CorruptionMode mode{};
  double ratio = 0.0;
  double residual_mse = 0.0;
  std::optional<std::size_t> recovery_steps;  // empty: never within the horizon
  std::vector<double> distance;               // relative distance at 0..steps after corruption
};

inline double relative_distance(const FieldGrid& a, const FieldGrid& ref) {
  const double base = l2_norm(ref);
  const double d = l2_norm(a - ref);
  return base > 0.0 ? d / base : d;
}

/// Paired clean/corrupted runs of the belief evolve from a common start. A
/// channel_mask corruption is re-applied after every evolve step. Distances
/// and residuals are averaged over `trials` corruption seeds (seed + trial).
inline ResilienceCell resilience_run(const BeliefState& start, const BeliefParams& p, const BeliefOptions& opt,
                                     CorruptionMode mode, double ratio, const ResilienceConfig& cfg) {
  require(cfg.trials > 0, "resilience: trials must be positive");
  BeliefState warm = start;
  for (std::size_t t = 0; t < cfg.warmup; ++t) warm = evolve(warm, p, opt);
  // The clean run does not depend on the corruption seed.
  std::vector<FieldGrid> clean{warm.s};
  for (BeliefState st = warm; clean.size() <= cfg.steps;) {
    st = evolve(st, p, opt);
    clean.push_back(st.s);
  }
  ResilienceCell cell;
  cell.mode = mode;
  cell.ratio = ratio;
  cell.distance.assign(cfg.steps + 1, 0.0);
  const double inv = 1.0 / static_cast<double>(cfg.trials);
  for (std::size_t trial = 0; trial < cfg.trials; ++trial) {
    const std::uint64_t seed = cfg.seed + trial;
    BeliefState bad = corrupt(warm, mode, ratio, cfg.intensity, seed);
    const auto masked = mode == CorruptionMode::kChannelMask ? corrupted_channels(warm.s.channels(), ratio, seed)
                                                             : std::vector<std::size_t>{};
    cell.distance[0] += inv * relative_distance(bad.s, clean[0]);
    for (std::size_t t = 0; t < cfg.steps; ++t) {
      bad = evolve(bad, p, opt);
      zero_channels(bad.s, masked);
      cell.distance[t + 1] += inv * relative_distance(bad.s, clean[t + 1]);
    }
    cell.residual_mse += inv * mse(bad.s, clean.back());
  }
  for (std::size_t t = 0; t < cell.distance.size(); ++t)
    if (cell.distance[t] < cfg.recovery_threshold) {
      cell.recovery_steps = t;
      break;
    }
  return cell;
}

inline std::vector<ResilienceCell> resilience_sweep(const BeliefState& start, const BeliefParams& p,
                                                    const BeliefOptions& opt, const ResilienceConfig& cfg) {
  std::vector<ResilienceCell> out(cfg.modes.size() * cfg.ratios.size());
  parallel_for(out.size(), [&](std::size_t i) {
    out[i] = resilience_run(start, p, opt, cfg.modes[i / cfg.ratios.size()], cfg.ratios[i % cfg.ratios.size()], cfg);
  });
  return out;
}

struct ResilienceSetup {
  BeliefState start;
  BeliefParams params;
  BeliefOptions options;
};

/// Pure-diffusion belief dynamics (no reaction, memory, normalization or bio)
/// from a state that is constant within each channel. The clean run is then
/// a fixed point and the corrupted run relaxes towards it.
inline ResilienceSetup diffusion_resilience_setup(std::size_t d, std::size_t size, std::uint64_t seed,
                                                  double diffusion = 0.25, double dt = 0.1) {
  Rng rng(seed);
  ResilienceSetup r;
  r.params = init_belief(d, rng);
  r.params.evolve = zero_dynamics_layer(d, diffusion, dt);
  r.options.normalize = false;
  r.options.bio.inhibition = false;
  r.options.bio.fatigue = false;
  r.options.bio.hebbian = false;
  r.start = initial_belief(d, size, size, r.options.bio);
  for (std::size_t c = 0; c < d; ++c) {
    const double level = rng.normal();
    for (double& v : r.start.s.channel(c)) v = level;
  }
  return r;
}

// ---------------------------------------------------------------------------
// Operation counts

struct OpCountRow {
  std::uint64_t tokens = 0;
  std::uint64_t attention_ops = 0;
  std::uint64_t diffusion_ops = 0;
  std::uint64_t ratio = 0;
};

/// Attention compares every token pair (N²); a stencil touches each token once (N).
inline std::vector<OpCountRow> op_count_scaling(const std::vector<std::uint64_t>& tokens) {
  std::vector<OpCountRow> rows;
  for (auto n : tokens) rows.push_back({n, n * n, n, n});
  return rows;
}

}  // namespace fluidlab
