#pragma once

// Run configuration: JSON sections mapped onto the library's config structs.
// One field list drives both parsing and the manifest echo, so the two can
// never disagree about key names.

#include <cstdint>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fluidlab/belief.hpp"
#include "fluidlab/datagen.hpp"
#include "fluidlab/experiments.hpp"
#include "fluidlab/io.hpp"
#include "fluidlab/model.hpp"
#include "fluidlab/training.hpp"

namespace fluidlab {

using json = nlohmann::json;

class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string key, const std::string& what)
      : std::runtime_error(key + ": " + what), key_(std::move(key)) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

struct RolloutConfig {
  std::size_t horizon = 20;
  std::size_t n_sequences = 50;
  std::size_t context = 1;  // frames of the scene before the rollout starts
  std::uint64_t seed = 0;
  double recovery_threshold = 0.01;
};

struct EnergyConfig {
  std::string init = "random";
  bool normalize = true;
  std::size_t steps = 200;
  std::size_t channels = 8;
  std::size_t size = 16;
  double diffusion = 0.25;
  double dt = 0.1;
  double reaction_gain = 1.0;
  std::uint64_t seed = 0;
};

struct LyapunovConfig {
  std::size_t steps = 100;
  std::size_t channels = 8;
  std::size_t size = 16;
  double diffusion = 0.25;
  double dt = 0.1;
  double reaction_gain = 1.0;
  double delta0 = 1e-6;
  std::uint64_t seed = 0;
};

struct ScalingConfig {
  std::vector<std::uint64_t> tokens{256, 1024, 4096, 16384};
};

struct GradCheckConfig {
  std::size_t samples = 120;
  double h = 1e-5;
  double tolerance = 1e-4;
  std::uint64_t seed = 0;
};

struct RunConfig {
  ModelConfig model{};
  TrainConfig train{};
  SceneConfig data{};
  RolloutConfig rollout{};
  PhaseConfig phase{};
  EnergyConfig energy{};
  SymmetryConfig symmetry{};
  ResilienceConfig resilience{};
  LyapunovConfig lyapunov{};
  ScalingConfig scaling{};
  GradCheckConfig gradcheck{};
};

namespace detail {

inline std::vector<std::string> mode_names(const std::vector<CorruptionMode>& modes) {
  std::vector<std::string> out;
  for (auto m : modes) out.emplace_back(to_string(m));
  return out;
}

/// Reads keys out of one JSON object and remembers which ones it consumed.
class SectionReader {
 public:
  SectionReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_, "expected an object");
  }

  template <class T>
  void operator()(const char* key, T& out) {
    seen_.insert(key);
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(path_ + "." + key, std::string("wrong type (") + e.what() + ")");
    }
  }

  void operator()(const char* key, std::vector<CorruptionMode>& out) {
    std::vector<std::string> names = mode_names(out);
    (*this)(key, names);
    out.clear();
    try {
      for (const auto& n : names) out.push_back(parse_corruption_mode(n));
    } catch (const std::invalid_argument& e) {
      throw ConfigError(path_ + "." + key, e.what());
    }
  }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw ConfigError(path_ + "." + k, "unknown key");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

class SectionWriter {
 public:
  explicit SectionWriter(json& j) : j_(j) {}
  template <class T>
  void operator()(const char* key, const T& v) { j_[key] = v; }
  void operator()(const char* key, const std::vector<CorruptionMode>& v) { j_[key] = mode_names(v); }

 private:
  json& j_;
};

/// The full key list. `V` is called once per section with a callable that
/// visits that section's fields.
template <class C, class V>
void config_fields(C& c, V&& section) {
  section("model", [&](auto& f) {
    f("in_channels", c.model.codec.in_channels);
    f("latent_dim", c.model.codec.d);
    f("patch_size", c.model.codec.patch);
    f("decoder_mid", c.model.codec.decoder_mid);
    f("decoder_fine", c.model.codec.decoder_fine);
    f("group_norm_groups", c.model.codec.groups);
    f("group_norm_eps", c.model.codec.group_eps);
    f("frame_height", c.model.frame_h);
    f("frame_width", c.model.frame_w);
    f("encoder_max_steps", c.model.encoder_steps);
    f("belief_evolve_steps", c.model.belief_steps);
    f("stop_epsilon", c.model.stop_epsilon);
    f("stop_patience", c.model.stop_patience);
    f("norm_eps", c.model.norm_eps);
    f("diffusion_init", c.model.layer_init.diffusion);
    f("dt_init", c.model.layer_init.dt);
    f("memory_alpha_init", c.model.layer_init.alpha);
    f("reaction_init_gain", c.model.layer_init.reaction_gain);
    f("gamma_init", c.model.gamma_init);
  });
  section("bio", [&](auto& f) {
    f("inhibition", c.model.bio.inhibition);
    f("inhibition_beta", c.model.bio.inhibition_beta);
    f("inhibition_min_factor", c.model.bio.inhibition_min_factor);
    f("fatigue", c.model.bio.fatigue);
    f("fatigue_kappa", c.model.bio.fatigue_kappa);
    f("fatigue_rho", c.model.bio.fatigue_rho);
    f("fatigue_h_min", c.model.bio.fatigue_h_min);
    f("hebbian", c.model.bio.hebbian);
    f("hebbian_decay", c.model.bio.hebbian_decay);
    f("hebbian_lr", c.model.bio.hebbian_lr);
    f("hebbian_gain", c.model.bio.hebbian_gain);
    f("post_evolve", c.model.bio.post_evolve);
  });
  section("loss", [&](auto& f) {
    f("recon", c.model.loss.recon);
    f("pred", c.model.loss.pred);
    f("variance", c.model.loss.variance);
    f("gradient", c.model.loss.gradient);
    f("sigma_target", c.model.loss.sigma_target);
    f("edge", c.model.loss.edge);
    f("freq", c.model.loss.freq);
  });
  section("optimizer", [&](auto& f) {
    f("lr", c.train.optim.lr);
    f("weight_decay", c.train.optim.weight_decay);
    f("beta1", c.train.optim.beta1);
    f("beta2", c.train.optim.beta2);
    f("eps", c.train.optim.eps);
    f("warmup", c.train.optim.warmup);
    f("horizon", c.train.optim.horizon);
    f("clip_norm", c.train.optim.clip_norm);
  });
  section("train", [&](auto& f) {
    f("batch", c.train.batch);
    f("window", c.train.window);
    f("steps", c.train.steps);
    f("seed", c.train.seed);
    f("n_objects", c.train.n_objects);
    f("object_radius", c.train.object_radius);
    f("speed", c.train.speed);
    f("threads", c.train.threads);
  });
  section("data", [&](auto& f) {
    f("width", c.data.width);
    f("height", c.data.height);
    f("n_objects", c.data.n_objects);
    f("object_radius", c.data.object_radius);
    f("speed", c.data.speed);
    f("n_frames", c.data.n_frames);
    f("seed", c.data.seed);
  });
  section("rollout", [&](auto& f) {
    f("horizon", c.rollout.horizon);
    f("n_sequences", c.rollout.n_sequences);
    f("context", c.rollout.context);
    f("seed", c.rollout.seed);
    f("recovery_threshold", c.rollout.recovery_threshold);
  });
  section("phase", [&](auto& f) {
    f("d_min", c.phase.d_min);
    f("d_max", c.phase.d_max);
    f("dt_min", c.phase.dt_min);
    f("dt_max", c.phase.dt_max);
    f("grid", c.phase.grid);
    f("steps", c.phase.steps);
    f("channels", c.phase.channels);
    f("size", c.phase.size);
    f("reaction_gain", c.phase.reaction_gain);
    f("memory", c.phase.memory);
    f("seed", c.phase.seed);
    f("threshold", c.phase.threshold);
  });
  section("energy", [&](auto& f) {
    f("init", c.energy.init);
    f("normalize", c.energy.normalize);
    f("steps", c.energy.steps);
    f("channels", c.energy.channels);
    f("size", c.energy.size);
    f("diffusion", c.energy.diffusion);
    f("dt", c.energy.dt);
    f("reaction_gain", c.energy.reaction_gain);
    f("seed", c.energy.seed);
  });
  section("symmetry", [&](auto& f) {
    f("epsilon", c.symmetry.epsilon);
    f("steps", c.symmetry.steps);
    f("seed", c.symmetry.seed);
    f("param_seed", c.symmetry.param_seed);
    f("channels", c.symmetry.channels);
    f("size", c.symmetry.size);
    f("base", c.symmetry.base);
    f("diffusion_min", c.symmetry.diffusion_min);
    f("diffusion_max", c.symmetry.diffusion_max);
    f("dt", c.symmetry.dt);
    f("reaction_gain", c.symmetry.reaction_gain);
    f("normalize", c.symmetry.normalize);
    f("clusters", c.symmetry.clusters);
  });
  section("resilience", [&](auto& f) {
    f("modes", c.resilience.modes);
    f("ratios", c.resilience.ratios);
    f("warmup", c.resilience.warmup);
    f("steps", c.resilience.steps);
    f("intensity", c.resilience.intensity);
    f("recovery_threshold", c.resilience.recovery_threshold);
    f("trials", c.resilience.trials);
    f("seed", c.resilience.seed);
  });
  section("lyapunov", [&](auto& f) {
    f("steps", c.lyapunov.steps);
    f("channels", c.lyapunov.channels);
    f("size", c.lyapunov.size);
    f("diffusion", c.lyapunov.diffusion);
    f("dt", c.lyapunov.dt);
    f("reaction_gain", c.lyapunov.reaction_gain);
    f("delta0", c.lyapunov.delta0);
    f("seed", c.lyapunov.seed);
  });
  section("scaling", [&](auto& f) { f("tokens", c.scaling.tokens); });
  section("gradcheck", [&](auto& f) {
    f("samples", c.gradcheck.samples);
    f("h", c.gradcheck.h);
    f("tolerance", c.gradcheck.tolerance);
    f("seed", c.gradcheck.seed);
  });
}

inline void check(bool ok, const char* key, const std::string& what) {
  if (!ok) throw ConfigError(key, what);
}

}  // namespace detail

/// Cross-field checks that the individual types cannot express.
inline void validate(const RunConfig& c) {
  using detail::check;
  const auto& m = c.model;
  check(m.codec.in_channels >= 1, "model.in_channels", "must be at least 1");
  check(m.codec.d >= 1, "model.latent_dim", "must be at least 1");
  check(m.codec.patch >= 1, "model.patch_size", "must be at least 1");
  check(m.frame_h % m.codec.patch == 0 && m.frame_w % m.codec.patch == 0, "model.patch_size",
        "must divide frame_height and frame_width");
  check(m.codec.patch == 4, "model.patch_size", "the decoder upsamples by exactly 4");
  check(m.codec.groups >= 1 && m.codec.decoder_mid % m.codec.groups == 0 && m.codec.decoder_fine % m.codec.groups == 0 &&
            m.codec.d % m.codec.groups == 0,
        "model.group_norm_groups", "must divide latent_dim, decoder_mid and decoder_fine");
  check(m.encoder_steps >= 1, "model.encoder_max_steps", "must be at least 1");
  check(m.stop_epsilon > 0.0, "model.stop_epsilon", "must be positive");
  check(m.stop_patience >= 1, "model.stop_patience", "must be at least 1");
  check(m.layer_init.diffusion > 0.0, "model.diffusion_init", "must be positive");
  check(m.layer_init.dt >= kDtMin && m.layer_init.dt <= kDtMax, "model.dt_init", "must lie in [0.005, 0.35]");
  check(m.gamma_init > kGammaMin && m.gamma_init < kGammaMax, "model.gamma_init", "must lie in (0.5, 0.99)");
  check(m.bio.fatigue_h_min > 0.0 && m.bio.fatigue_h_min <= 1.0, "bio.fatigue_h_min", "must lie in (0, 1]");
  check(m.bio.inhibition_min_factor > 0.0 && m.bio.inhibition_min_factor <= 1.0, "bio.inhibition_min_factor",
        "must lie in (0, 1]");
  check(c.train.batch >= 1, "train.batch", "must be at least 1");
  check(c.train.window >= 1, "train.window", "must be at least 1");
  check(c.train.optim.lr > 0.0, "optimizer.lr", "must be positive");
  check(c.train.optim.clip_norm > 0.0, "optimizer.clip_norm", "must be positive");
  check(c.rollout.horizon >= 3, "rollout.horizon", "recovery statistics need at least 3 steps");
  check(c.rollout.context >= 1, "rollout.context", "must be at least 1");
  check(c.phase.grid >= 2, "phase.grid", "must be at least 2");
  check(c.phase.d_min > 0.0 && c.phase.d_max >= c.phase.d_min, "phase.d_min", "need 0 < d_min <= d_max");
  check(c.phase.dt_min > 0.0 && c.phase.dt_max >= c.phase.dt_min, "phase.dt_min", "need 0 < dt_min <= dt_max");
  check(c.symmetry.size >= 2 && c.symmetry.size % 2 == 0, "symmetry.size", "must be even");
  check(c.symmetry.diffusion_min > 0.0 && c.symmetry.diffusion_max >= c.symmetry.diffusion_min,
        "symmetry.diffusion_min", "need 0 < diffusion_min <= diffusion_max");
  check(c.lyapunov.steps > 10, "lyapunov.steps", "must exceed the 10-step transient");
  for (double r : c.resilience.ratios) check(r >= 0.0 && r <= 1.0, "resilience.ratios", "ratios must lie in [0, 1]");
  check(c.resilience.trials >= 1, "resilience.trials", "must be at least 1");
  check(c.gradcheck.samples >= 1, "gradcheck.samples", "must be at least 1");
  try {
    parse_init_kind(c.energy.init);
    validate(c.data);
  } catch (const std::invalid_argument& e) {
    throw ConfigError("energy.init/data", e.what());
  }
}

/// Applies a JSON document over `base`. Unknown sections and keys are errors.
inline RunConfig parse_config(const json& doc, RunConfig base = {}) {
  if (!doc.is_object()) throw ConfigError("<root>", "expected an object");
  std::set<std::string> sections;
  detail::config_fields(base, [&](const char* name, auto&& fields) {
    sections.insert(name);
    const auto it = doc.find(name);
    if (it == doc.end()) return;
    detail::SectionReader r(*it, name);
    fields(r);
    r.finish();
  });
  for (const auto& [k, v] : doc.items())
    if (!sections.count(k)) throw ConfigError(k, "unknown section");
  validate(base);
  return base;
}

inline RunConfig load_config(const std::string& path) {
  json doc;
  try {
    doc = json::parse(io::read_file(path));
  } catch (const json::parse_error& e) {
    throw ConfigError(path, std::string("invalid JSON: ") + e.what());
  }
  return parse_config(doc);
}

inline json to_json(const RunConfig& c) {
  json out = json::object();
  RunConfig copy = c;
  detail::config_fields(copy, [&](const char* name, auto&& fields) {
    json section = json::object();
    detail::SectionWriter w(section);
    fields(w);
    out[name] = std::move(section);
  });
  return out;
}

}  // namespace fluidlab
