#pragma once

// TBPTT training on moving-disc windows, finite-difference gradient checks
// and the binary checkpoint format.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "fluidlab/autodiff.hpp"
#include "fluidlab/bio.hpp"
#include "fluidlab/datagen.hpp"
#include "fluidlab/field.hpp"
#include "fluidlab/io.hpp"
#include "fluidlab/model.hpp"
#include "fluidlab/optim.hpp"
#include "fluidlab/parallel.hpp"
#include "fluidlab/rng.hpp"

namespace fluidlab {

struct TrainConfig {
  std::size_t batch = 16;
  std::size_t window = 4;
  std::size_t steps = 8000;
  std::uint64_t seed = 0;
  OptimConfig optim{};
  std::size_t n_objects = 2;
  double object_radius = 2.0;
  double speed = 1.0;
  std::size_t threads = 0;
};

/// Seed of sample b in window k; every window draws fresh sequences.
inline std::uint64_t sample_seed(std::uint64_t seed, std::size_t window, std::size_t b) {
  std::uint64_t x = seed * 0x9e3779b97f4a7c15ULL + window * 0xbf58476d1ce4e5b9ULL + b * 0x94d049bb133111ebULL + 1;
  x ^= x >> 31;
  x *= 0xd6e9f2b1a4c3e58dULL;
  return x ^ (x >> 29);
}

inline SceneConfig scene_for(const ModelConfig& mc, const TrainConfig& tc, std::uint64_t seed) {
  SceneConfig s;
  s.width = mc.frame_w;
  s.height = mc.frame_h;
  s.n_objects = tc.n_objects;
  s.object_radius = tc.object_radius;
  s.speed = tc.speed;
  s.n_frames = tc.window + 1;
  s.seed = seed;
  return s;
}

inline std::vector<std::vector<FieldGrid>> training_batch(const ModelConfig& mc, const TrainConfig& tc,
                                                          std::size_t window) {
  std::vector<std::vector<FieldGrid>> batch;
  batch.reserve(tc.batch);
  for (std::size_t b = 0; b < tc.batch; ++b)
    batch.push_back(generate_sequence(scene_for(mc, tc, sample_seed(tc.seed, window, b))));
  return batch;
}

struct SampleGradient {
  double loss = 0.0;
  std::vector<double> grad;
};

/// Loss and flat gradient of one window, starting from a fresh belief state.
inline SampleGradient window_gradient(const ModelParams& p, const ModelConfig& cfg,
                                      const std::vector<FieldGrid>& frames, BufferLog* log = nullptr) {
  const ModelVars v = to_vars(p, true);
  auto r = forward_window(v, cfg, frames, initial_belief(cfg), log);
  ad::backward(r.loss);
  return {r.loss.item(), gather_gradients(v)};
}

inline double window_loss(const ModelParams& p, const ModelConfig& cfg, const std::vector<FieldGrid>& frames,
                          BufferLog* log = nullptr) {
  return forward_window(to_vars(p, false), cfg, frames, initial_belief(cfg), log).loss.item();
}

struct WindowMetrics {
  double loss = 0.0;
  double grad_norm = 0.0;
  double lr = 0.0;
};

/// Batch-mean loss and gradient (reduced in sample order), then one AdamW step.
inline WindowMetrics train_window(ModelParams& p, OptimState& opt, const ModelConfig& cfg,
                                  const std::vector<std::vector<FieldGrid>>& batch, std::size_t threads = 0) {
  require(!batch.empty(), "train_window: empty batch");
  std::vector<SampleGradient> parts(batch.size());
  parallel_for(batch.size(), [&](std::size_t b) { parts[b] = window_gradient(p, cfg, batch[b]); }, threads);
  const double inv = 1.0 / static_cast<double>(batch.size());
  std::vector<double> grad(parts[0].grad.size());
  WindowMetrics m;
  for (const auto& part : parts) {
    m.loss += part.loss * inv;
    for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += part.grad[i] * inv;
  }
  for (std::size_t i = 0; i < grad.size(); ++i)
    if (!std::isfinite(grad[i]))
      throw std::runtime_error("train_window: non-finite gradient at parameter index " + std::to_string(i));
  std::vector<double> flat = flatten(p);
  m.grad_norm = optimizer_step(flat, std::move(grad), opt);
  m.lr = lr_at(opt.step, opt);
  p = unflatten(p, flat);
  return m;
}

/// Runs tc.steps windows from the current optimizer step. The callback sees
/// each window's metrics and may return false to stop early.
inline std::vector<double> train(ModelParams& p, OptimState& opt, const ModelConfig& mc, const TrainConfig& tc,
                                 const std::function<bool(std::size_t, const WindowMetrics&)>& on_window = {}) {
  std::vector<double> losses;
  for (std::size_t k = opt.step; k < tc.steps; ++k) {
    const WindowMetrics m = train_window(p, opt, mc, training_batch(mc, tc, k), tc.threads);
    losses.push_back(m.loss);
    if (on_window && !on_window(k, m)) break;
  }
  return losses;
}

// ---------------------------------------------------------------------------
// Gradient check

struct GradCheckEntry {
  std::size_t index = 0;
  std::string block;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
  bool smooth = true;  // central differences at h and h/2 agree
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0.0;  // over smooth entries
  double tolerance = 1e-4;
  std::size_t smooth_count() const {
    return static_cast<std::size_t>(std::count_if(entries.begin(), entries.end(), [](const auto& e) { return e.smooth; }));
  }
  bool pass() const { return smooth_count() > 0 && max_rel_error < tolerance; }
};

/// n indices spread over every parameter block: one per block in layout order,
/// round-robin, each drawn uniformly within its block.
inline std::vector<std::size_t> stratified_indices(const ModelParams& p, std::size_t n, std::uint64_t seed) {
  const auto layout = parameter_layout(p);
  Rng rng(seed);
  std::vector<std::size_t> out;
  std::vector<std::vector<std::size_t>> pools;
  for (const auto& b : layout) {
    auto perm = rng.permutation(b.size);
    for (auto& i : perm) i += b.offset;
    pools.push_back(std::move(perm));
  }
  for (std::size_t round = 0; out.size() < n; ++round) {
    bool any = false;
    for (auto& pool : pools) {
      if (round < pool.size() && out.size() < n) {
        out.push_back(pool[round]);
        any = true;
      }
    }
    if (!any) break;
  }
  return out;
}

/// Central differences of the window loss against reverse-mode gradients.
/// Running buffers are recorded in the analytic pass and replayed in every
/// perturbed pass, so both sides differentiate the same function. The loss
/// has kinks (L1 terms, clamps); an index whose differences at h and h/2
/// disagree by more than the tolerance straddles one and is reported as
/// non-smooth instead of being scored. Relative errors use max(|g|, abs_floor);
/// the floor sits above the differencing round-off (≈ ε·|L|/h ≈ 1e-11) so
/// structurally zero gradients compare as zero rather than as noise.
inline GradCheckReport check_gradients(const ModelParams& p, const ModelConfig& cfg,
                                       const std::vector<FieldGrid>& frames, const std::vector<std::size_t>& indices,
                                       double h = 1e-5, double tolerance = 1e-4, double abs_floor = 1e-6) {
  BufferLog log(BufferLog::Mode::kRecord);
  const SampleGradient sg = window_gradient(p, cfg, frames, &log);
  const auto layout = parameter_layout(p);
  const std::vector<double> flat = flatten(p);
  GradCheckReport rep;
  rep.tolerance = tolerance;
  for (std::size_t idx : indices) {
    require(idx < flat.size(), "check_gradients: index out of range");
    auto eval = [&](double delta) {
      std::vector<double> q = flat;
      q[idx] += delta;
      BufferLog replay = log.replay();
      return window_loss(unflatten(p, q), cfg, frames, &replay);
    };
    GradCheckEntry e;
    e.index = idx;
    for (const auto& b : layout)
      if (idx >= b.offset && idx < b.offset + b.size) e.block = b.name;
    e.analytic = sg.grad[idx];
    e.numeric = (eval(h) - eval(-h)) / (2.0 * h);
    const double half = (eval(h / 2) - eval(-h / 2)) / h;
    e.smooth = std::abs(e.numeric - half) <= tolerance * std::max(std::abs(half), abs_floor);
    e.rel_error = std::abs(e.analytic - e.numeric) / std::max(std::abs(e.analytic), abs_floor);
    if (e.smooth) rep.max_rel_error = std::max(rep.max_rel_error, e.rel_error);
    rep.entries.push_back(std::move(e));
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Checkpoints: "FWCK", u32 version, u64 metadata length, metadata (JSON text),
// u64 n, n f64 parameters, u64 optimizer step, n f64 first moments, n f64
// second moments. All little-endian.

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::string metadata;
  std::vector<double> params;
  std::size_t step = 0;
  std::vector<double> m, v;
};

inline std::string encode_checkpoint(const Checkpoint& ck) {
  require(ck.m.size() == ck.params.size() && ck.v.size() == ck.params.size(),
          "checkpoint: moment vectors must match the parameter vector");
  std::string out = "FWCK";
  io::put_u32(out, kCheckpointVersion);
  io::put_u64(out, ck.metadata.size());
  out += ck.metadata;
  io::put_u64(out, ck.params.size());
  for (double x : ck.params) io::put_f64(out, x);
  io::put_u64(out, ck.step);
  for (double x : ck.m) io::put_f64(out, x);
  for (double x : ck.v) io::put_f64(out, x);
  return out;
}

inline Checkpoint decode_checkpoint(const std::string& bytes) {
  io::Reader r(bytes, "checkpoint");
  if (r.bytes(4) != "FWCK") throw io::IoError("checkpoint: bad magic");
  if (const auto ver = r.u32(); ver != kCheckpointVersion)
    throw io::IoError("checkpoint: unsupported version " + std::to_string(ver));
  Checkpoint ck;
  ck.metadata = r.bytes(r.u64());
  const std::size_t n = r.u64();
  if (n > r.remaining() / 8) throw io::IoError("checkpoint: truncated data");
  ck.params.resize(n);
  for (double& x : ck.params) x = r.f64();
  ck.step = r.u64();
  if (n > r.remaining() / 16) throw io::IoError("checkpoint: truncated data");
  ck.m.resize(n);
  ck.v.resize(n);
  for (double& x : ck.m) x = r.f64();
  for (double& x : ck.v) x = r.f64();
  if (r.remaining() != 0) throw io::IoError("checkpoint: trailing bytes");
  return ck;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) { io::write_file(path, encode_checkpoint(ck)); }
inline Checkpoint load_checkpoint(const std::string& path) { return decode_checkpoint(io::read_file(path)); }

}  // namespace fluidlab
