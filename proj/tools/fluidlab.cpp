// fluidlab: command-line driver for the experiments, training and data tools.
//
//   fluidlab <command> --out DIR [--config FILE] [command flags]
//
// Flags override values from --config, which override built-in defaults.
// Every run writes DIR/manifest.json; failures print a JSON object to stderr
// and exit nonzero.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <boost/crc.hpp>

#include "fluidlab/config.hpp"
#include "fluidlab/datagen.hpp"
#include "fluidlab/experiments.hpp"
#include "fluidlab/io.hpp"
#include "fluidlab/model.hpp"
#include "fluidlab/stats.hpp"
#include "fluidlab/training.hpp"

namespace fs = std::filesystem;
using namespace fluidlab;

namespace {

std::string utc_timestamp() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

std::string crc32_hex(const std::string& bytes) {
  boost::crc_32_type crc;
  crc.process_bytes(bytes.data(), bytes.size());
  std::ostringstream os;
  os << std::hex << std::setw(8) << std::setfill('0') << crc.checksum();
  return os.str();
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

/// Owns the output directory; every artifact goes through `put` so the
/// manifest can list it with its checksum.
class RunDir {
 public:
  explicit RunDir(const std::string& dir) : root_(dir) { fs::create_directories(root_); }

  void put(const std::string& name, const std::string& bytes) {
    const fs::path p = root_ / name;
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    io::write_file(p.string(), bytes);
    artifacts_[name] = {{"bytes", bytes.size()}, {"crc32", crc32_hex(bytes)}};
  }

  void manifest(const std::string& command, const RunConfig& cfg, std::uint64_t seed, json extra) {
    json m;
    m["command"] = command;
    m["seed"] = seed;
    m["config"] = to_json(cfg);
    m["parameters"] = std::move(extra);
    m["artifacts"] = artifacts_;
    m["timestamp"] = utc_timestamp();
    io::write_file((root_ / "manifest.json").string(), m.dump(2) + "\n");
  }

 private:
  fs::path root_;
  json artifacts_ = json::object();
};

std::string pgm_name(const std::string& stem, std::size_t i) {
  std::ostringstream os;
  os << stem << std::setw(3) << std::setfill('0') << i << ".pgm";
  return os.str();
}

std::vector<std::string> split(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');)
    if (!item.empty()) out.push_back(item);
  return out;
}

/// Per-sequence SSIM curves from a rollout CSV.
std::vector<std::vector<double>> read_rollout_curves(const std::string& path) {
  std::istringstream in(io::read_file(path));
  std::string line;
  std::getline(in, line);
  if (line.rfind("sequence,step,ssim,mse", 0) != 0) throw io::IoError(path + ": not a rollout CSV");
  std::map<std::size_t, std::vector<double>> curves;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split(line);
    if (f.size() != 4) throw io::IoError(path + ": malformed row '" + line + "'");
    curves[std::stoul(f[0])].push_back(std::stod(f[2]));
  }
  std::vector<std::vector<double>> out;
  for (auto& [k, c] : curves) out.push_back(std::move(c));
  return out;
}

// ---------------------------------------------------------------------------

struct Common {
  std::string out;
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
};

RunConfig load(const Common& c) {
  RunConfig cfg = c.config.empty() ? RunConfig{} : load_config(c.config);
  if (c.threads) cfg.train.threads = *c.threads;
  return cfg;
}

ModelParams params_from(const Checkpoint& ck, const RunConfig& cfg) {
  const ModelParams shape = init_model(cfg.model, 0);
  if (ck.params.size() != parameter_count(shape))
    throw io::IoError("checkpoint: parameter count " + std::to_string(ck.params.size()) +
                      " does not match the configured model (" + std::to_string(parameter_count(shape)) + ")");
  return unflatten(shape, ck.params);
}

void cmd_train(const Common& c, std::optional<std::size_t> steps, const std::string& resume) {
  RunConfig cfg = load(c);
  if (c.seed) cfg.train.seed = *c.seed;
  if (steps) cfg.train.steps = *steps;
  validate(cfg);
  ModelParams p = init_model(cfg.model, cfg.train.seed);
  OptimState opt = OptimState::fresh(parameter_count(p), cfg.train.optim);
  if (!resume.empty()) {
    const Checkpoint ck = load_checkpoint(resume);
    p = params_from(ck, cfg);
    opt.m = ck.m;
    opt.v = ck.v;
    opt.step = ck.step;
  }
  RunDir run(c.out);
  std::string csv = "window,loss,grad_norm,lr\n";
  train(p, opt, cfg.model, cfg.train, [&](std::size_t k, const WindowMetrics& m) {
    csv += std::to_string(k) + "," + fmt(m.loss) + "," + fmt(m.grad_norm) + "," + fmt(m.lr) + "\n";
    if ((k + 1) % 50 == 0) std::cerr << "window " << k + 1 << "/" << cfg.train.steps << " loss " << m.loss << "\n";
    return true;
  });
  run.put("loss.csv", csv);
  run.put("checkpoint.fwck", encode_checkpoint({to_json(cfg).dump(), flatten(p), opt.step, opt.m, opt.v}));
  run.manifest("train", cfg, cfg.train.seed, {{"steps", cfg.train.steps}, {"resume", resume}});
}

void cmd_rollout(const Common& c, const std::string& checkpoint, std::optional<std::size_t> horizon,
                 std::optional<std::size_t> n_seq) {
  const Checkpoint ck = load_checkpoint(checkpoint);
  RunConfig cfg;
  try {
    cfg = parse_config(json::parse(ck.metadata));
  } catch (const json::exception&) {
    throw io::IoError(checkpoint + ": metadata is not valid JSON");
  }
  if (!c.config.empty()) {
    const RunConfig over = load_config(c.config);
    cfg.rollout = over.rollout;
  }
  if (c.seed) cfg.rollout.seed = *c.seed;
  if (horizon) cfg.rollout.horizon = *horizon;
  if (n_seq) cfg.rollout.n_sequences = *n_seq;
  validate(cfg);
  const ModelParams p = params_from(ck, cfg);
  const auto& ro = cfg.rollout;
  std::vector<RolloutTrace> traces(ro.n_sequences);
  std::vector<std::vector<FieldGrid>> scenes(ro.n_sequences);
  parallel_for(
      ro.n_sequences,
      [&](std::size_t i) {
        TrainConfig tc = cfg.train;
        tc.window = ro.context + ro.horizon - 1;
        scenes[i] = generate_sequence(scene_for(cfg.model, tc, sample_seed(ro.seed, 0, i)));
        const std::vector<FieldGrid> truth(scenes[i].begin() + static_cast<std::ptrdiff_t>(ro.context), scenes[i].end());
        traces[i] = rollout(p, cfg.model, scenes[i][ro.context - 1], ro.horizon, &truth);
      },
      cfg.train.threads);
  RunDir run(c.out);
  std::string csv = "sequence,step,ssim,mse\n";
  for (std::size_t i = 0; i < traces.size(); ++i)
    for (std::size_t k = 0; k < ro.horizon; ++k)
      csv += std::to_string(i) + "," + std::to_string(k + 1) + "," + fmt(traces[i].ssim_per_step[k]) + "," +
             fmt(traces[i].mse_per_step[k]) + "\n";
  run.put("rollout.csv", csv);
  if (!traces.empty()) {
    for (std::size_t k = 0; k < ro.horizon; ++k) {
      run.put(pgm_name("frames/pred_", k + 1), encode_pgm(traces[0].frames[k]));
      run.put(pgm_name("frames/truth_", k + 1), encode_pgm(scenes[0][ro.context + k]));
    }
  }
  run.manifest("rollout", cfg, ro.seed, {{"checkpoint", checkpoint}, {"checkpoint_crc32", crc32_hex(io::read_file(checkpoint))}});
}

void cmd_recovery(const Common& c, const std::string& rollout_csv, std::optional<double> threshold) {
  RunConfig cfg = load(c);
  if (threshold) cfg.rollout.recovery_threshold = *threshold;
  validate(cfg);
  const auto curves = read_rollout_curves(rollout_csv);
  if (curves.empty()) throw io::IoError(rollout_csv + ": no rollouts");
  const RecoveryReport rep = recovery_stats(curves, cfg.rollout.recovery_threshold);
  std::vector<double> mean(curves[0].size());
  for (const auto& cv : curves) {
    if (cv.size() != mean.size()) throw io::IoError(rollout_csv + ": rollouts have different horizons");
    for (std::size_t k = 0; k < mean.size(); ++k) mean[k] += cv[k] / static_cast<double>(curves.size());
  }
  json out;
  out["n"] = curves.size();
  out["threshold"] = rep.threshold;
  out["recovery_fraction"] = rep.fraction;
  out["magnitude_mean"] = rep.magnitudes.mean;
  out["magnitude_std"] = rep.magnitudes.std;
  out["t"] = rep.magnitudes.t;
  out["cohen_d"] = rep.magnitudes.cohen_d;
  out["p_value"] = rep.magnitudes.p_value ? json(*rep.magnitudes.p_value) : json(nullptr);
  out["mean_curve"] = mean;
  if (mean.size() >= 5 && *std::min_element(mean.begin(), mean.begin() + 5) > 0.0) {
    const ExpFit fit = fit_exp_null(mean);
    out["null_model"] = {{"a", fit.a}, {"b", fit.b}, {"curve", fit.null_curve}};
  } else {
    out["null_model"] = nullptr;
  }
  RunDir run(c.out);
  run.put("recovery.json", out.dump(2) + "\n");
  run.manifest("recovery", cfg, 0, {{"rollout_csv", rollout_csv}, {"rollout_crc32", crc32_hex(io::read_file(rollout_csv))}});
}

void cmd_phase(const Common& c, const std::map<std::string, std::optional<double>>& ranges,
               std::optional<std::size_t> grid) {
  RunConfig cfg = load(c);
  if (c.seed) cfg.phase.seed = *c.seed;
  if (auto v = ranges.at("d-min")) cfg.phase.d_min = *v;
  if (auto v = ranges.at("d-max")) cfg.phase.d_max = *v;
  if (auto v = ranges.at("dt-min")) cfg.phase.dt_min = *v;
  if (auto v = ranges.at("dt-max")) cfg.phase.dt_max = *v;
  if (grid) cfg.phase.grid = *grid;
  validate(cfg);
  const auto pts = phase_sweep(cfg.phase);
  std::string csv = "D,dt,growth_rate,regime\n";
  FieldGrid heat(1, cfg.phase.grid, cfg.phase.grid);
  double lo = 0.0, hi = 0.0;
  for (const auto& p : pts) {
    lo = std::min(lo, p.growth_rate);
    hi = std::max(hi, p.growth_rate);
  }
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const auto& p = pts[i];
    csv += fmt(p.D) + "," + fmt(p.dt) + "," + fmt(p.growth_rate) + "," + std::string(to_string(p.regime)) + "\n";
    // rows: D ascending downwards; columns: dt ascending
    heat(0, i / cfg.phase.grid, i % cfg.phase.grid) = hi > lo ? (p.growth_rate - lo) / (hi - lo) : 0.5;
  }
  RunDir run(c.out);
  run.put("phase.csv", csv);
  run.put("phase.pgm", encode_pgm(heat));
  run.manifest("phase", cfg, cfg.phase.seed, json::object());
}

void cmd_energy(const Common& c, const std::string& init, const std::string& norm, std::optional<std::size_t> steps) {
  RunConfig cfg = load(c);
  if (c.seed) cfg.energy.seed = *c.seed;
  if (!init.empty()) cfg.energy.init = init;
  if (!norm.empty()) cfg.energy.normalize = norm == "on";
  if (steps) cfg.energy.steps = *steps;
  validate(cfg);
  const auto& e = cfg.energy;
  const LayerParams p = random_reaction_layer(e.channels, e.seed + 1, e.diffusion, e.dt, e.reaction_gain);
  const auto traj = energy_experiment(parse_init_kind(e.init), p, e.steps, e.normalize, e.size, e.size, e.seed);
  std::string csv = "step,energy\n";
  for (std::size_t t = 0; t < traj.size(); ++t) csv += std::to_string(t) + "," + fmt(traj[t]) + "\n";
  RunDir run(c.out);
  run.put("energy.csv", csv);
  run.manifest("energy", cfg, e.seed,
               {{"reference_energy", static_cast<double>(e.channels * e.size * e.size)}});
}

void cmd_symmetry(const Common& c, std::optional<double> epsilon, std::optional<std::size_t> steps) {
  RunConfig cfg = load(c);
  if (c.seed) cfg.symmetry.seed = *c.seed;
  if (epsilon) cfg.symmetry.epsilon = *epsilon;
  if (steps) cfg.symmetry.steps = *steps;
  validate(cfg);
  const auto trace = symmetry_experiment(cfg.symmetry);
  RunDir run(c.out);
  std::string csv = "step,symmetry_index,entropy,clusters\n";
  for (const auto& s : trace) {
    csv += std::to_string(s.step) + "," + fmt(s.symmetry_index) + "," + fmt(s.entropy) + "," +
           std::to_string(s.clusters) + "\n";
    run.put(pgm_name("fields/step_", s.step), encode_pgm_normalized(s.field));
  }
  run.put("symmetry.csv", csv);
  run.manifest("symmetry", cfg, cfg.symmetry.seed, json::object());
}

void cmd_resilience(const Common& c, const std::string& modes, const std::string& ratios) {
  RunConfig cfg = load(c);
  if (c.seed) cfg.resilience.seed = *c.seed;
  if (!modes.empty()) {
    cfg.resilience.modes.clear();
    for (const auto& m : split(modes)) {
      try {
        cfg.resilience.modes.push_back(parse_corruption_mode(m));
      } catch (const std::invalid_argument& e) {
        throw ConfigError("--modes", e.what());
      }
    }
  }
  if (!ratios.empty()) {
    cfg.resilience.ratios.clear();
    for (const auto& r : split(ratios)) {
      try {
        cfg.resilience.ratios.push_back(std::stod(r));
      } catch (const std::exception&) {
        throw ConfigError("--ratios", "not a number: " + r);
      }
    }
  }
  validate(cfg);
  const auto setup = diffusion_resilience_setup(cfg.model.codec.d, cfg.model.latent_h(), cfg.resilience.seed);
  const auto cells = resilience_sweep(setup.start, setup.params, setup.options, cfg.resilience);
  std::string csv = "mode,ratio,residual_mse,recovery_steps,final_distance\n";
  for (const auto& cell : cells)
    csv += std::string(to_string(cell.mode)) + "," + fmt(cell.ratio) + "," + fmt(cell.residual_mse) + "," +
           (cell.recovery_steps ? std::to_string(*cell.recovery_steps) : std::string("never")) + "," +
           fmt(cell.distance.back()) + "\n";
  RunDir run(c.out);
  run.put("resilience.csv", csv);
  run.manifest("resilience", cfg, cfg.resilience.seed, json::object());
}

void cmd_scaling(const Common& c, const std::string& tokens) {
  RunConfig cfg = load(c);
  if (!tokens.empty()) {
    cfg.scaling.tokens.clear();
    for (const auto& t : split(tokens)) {
      try {
        cfg.scaling.tokens.push_back(std::stoull(t));
      } catch (const std::exception&) {
        throw ConfigError("--tokens", "not a token count: " + t);
      }
    }
  }
  validate(cfg);
  std::string csv = "tokens,attention_ops,diffusion_ops,ratio\n";
  for (const auto& r : op_count_scaling(cfg.scaling.tokens))
    csv += std::to_string(r.tokens) + "," + std::to_string(r.attention_ops) + "," + std::to_string(r.diffusion_ops) +
           "," + std::to_string(r.ratio) + "\n";
  RunDir run(c.out);
  run.put("scaling.csv", csv);
  run.manifest("scaling", cfg, 0, json::object());
}

int cmd_gradcheck(const Common& c, std::optional<std::size_t> samples) {
  RunConfig cfg = load(c);
  if (c.seed) cfg.gradcheck.seed = *c.seed;
  if (samples) cfg.gradcheck.samples = *samples;
  validate(cfg);
  const ModelParams p = init_model(cfg.model, cfg.gradcheck.seed);
  const auto frames = generate_sequence(scene_for(cfg.model, cfg.train, sample_seed(cfg.gradcheck.seed, 0, 0)));
  const auto idx = stratified_indices(p, cfg.gradcheck.samples, cfg.gradcheck.seed);
  const GradCheckReport rep = check_gradients(p, cfg.model, frames, idx, cfg.gradcheck.h, cfg.gradcheck.tolerance);
  json out;
  out["status"] = rep.pass() ? "pass" : "fail";
  out["max_rel_error"] = rep.max_rel_error;
  out["tolerance"] = rep.tolerance;
  out["n_parameters"] = parameter_count(p);
  out["n_checked"] = rep.entries.size();
  out["n_nonsmooth"] = rep.entries.size() - rep.smooth_count();
  json entries = json::array();
  for (const auto& e : rep.entries)
    entries.push_back({{"index", e.index}, {"block", e.block}, {"analytic", e.analytic}, {"numeric", e.numeric},
                       {"rel_error", e.rel_error}, {"smooth", e.smooth}});
  out["entries"] = std::move(entries);
  RunDir run(c.out);
  run.put("gradcheck.json", out.dump(2) + "\n");
  run.manifest("gradcheck", cfg, cfg.gradcheck.seed, json::object());
  std::cout << out["status"].get<std::string>() << " max_rel_error " << rep.max_rel_error << "\n";
  return rep.pass() ? 0 : 1;
}

void cmd_gen_data(const Common& c, std::optional<std::size_t> n_seq, std::optional<std::size_t> frames) {
  RunConfig cfg = load(c);
  if (c.seed) cfg.data.seed = *c.seed;
  if (frames) cfg.data.n_frames = *frames;
  validate(cfg);
  const std::size_t n = n_seq.value_or(1);
  RunDir run(c.out);
  for (std::size_t i = 0; i < n; ++i) {
    SceneConfig sc = cfg.data;
    sc.seed = sample_seed(cfg.data.seed, 0, i);
    const auto seq = generate_sequence(sc);
    std::ostringstream name;
    name << "seq_" << std::setw(4) << std::setfill('0') << i << ".fwsq";
    run.put(name.str(), encode_sequence(seq));
    if (i == 0)
      for (std::size_t t = 0; t < seq.size(); ++t) run.put(pgm_name("preview/frame_", t), encode_pgm(seq[t]));
  }
  run.manifest("gen-data", cfg, cfg.data.seed, {{"n_sequences", n}});
}

void cmd_lyapunov(const Common& c, std::optional<std::size_t> steps) {
  RunConfig cfg = load(c);
  if (c.seed) cfg.lyapunov.seed = *c.seed;
  if (steps) cfg.lyapunov.steps = *steps;
  validate(cfg);
  const auto& l = cfg.lyapunov;
  const LayerParams p = random_reaction_layer(l.channels, l.seed + 1, l.diffusion, l.dt, l.reaction_gain);
  const FieldGrid u0 = initial_field(InitKind::kRandom, l.channels, l.size, l.size, l.seed);
  const auto r = lyapunov(p, u0, l.steps, l.seed + 2, l.delta0);
  std::string csv = "map_step,increment\n";
  for (std::size_t i = 0; i < r.increments.size(); ++i) csv += std::to_string(i) + "," + fmt(r.increments[i]) + "\n";
  RunDir run(c.out);
  run.put("lyapunov.csv", csv);
  run.put("lyapunov.json", json{{"mean", r.mean}, {"std", r.std}, {"n", r.increments.size()}}.dump(2) + "\n");
  run.manifest("lyapunov", cfg, l.seed, json::object());
}

void fail_json(const std::string& kind, const std::string& message, const std::string& key = {}) {
  json e{{"error", kind}, {"message", message}};
  if (!key.empty()) e["key"] = key;
  std::cerr << e.dump() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fluidlab: reaction-diffusion world-model experiments"};
  app.require_subcommand(1);

  Common common;
  auto add_common = [&](CLI::App* sub, bool seed = true) {
    sub->add_option("--out", common.out, "output directory")->required();
    sub->add_option("--config", common.config, "JSON run configuration")->check(CLI::ExistingFile);
    if (seed) sub->add_option("--seed", common.seed, "seed override");
    sub->add_option("--threads", common.threads, "worker cap (0 = FLUIDLAB_THREADS or hardware)");
  };

  std::optional<std::size_t> steps, horizon, n_seq, grid, samples, frames;
  std::optional<double> epsilon, threshold;
  std::map<std::string, std::optional<double>> ranges{{"d-min", {}}, {"d-max", {}}, {"dt-min", {}}, {"dt-max", {}}};
  std::string checkpoint, rollout_csv, init, norm, modes, ratios, tokens, resume;

  auto* train_cmd = app.add_subcommand("train", "train on moving-disc windows");
  add_common(train_cmd);
  train_cmd->add_option("--steps", steps, "number of training windows");
  train_cmd->add_option("--resume", resume, "continue from a checkpoint")->check(CLI::ExistingFile);

  auto* rollout_cmd = app.add_subcommand("rollout", "autoregressive rollouts from a checkpoint");
  add_common(rollout_cmd);
  rollout_cmd->add_option("--checkpoint", checkpoint, "checkpoint written by train")->required();
  rollout_cmd->add_option("--horizon", horizon);
  rollout_cmd->add_option("--n-sequences", n_seq);

  auto* recovery_cmd = app.add_subcommand("recovery", "recovery statistics of rollout SSIM curves");
  add_common(recovery_cmd, false);
  recovery_cmd->add_option("--rollout-csv", rollout_csv)->required();
  recovery_cmd->add_option("--threshold", threshold);

  auto* phase_cmd = app.add_subcommand("phase", "growth-rate sweep over diffusion and timestep");
  add_common(phase_cmd);
  for (auto& [name, v] : ranges) phase_cmd->add_option("--" + name, v);
  phase_cmd->add_option("--grid", grid);

  auto* energy_cmd = app.add_subcommand("energy", "energy trajectory of a random-reaction layer");
  add_common(energy_cmd);
  energy_cmd->add_option("--init", init)->check(CLI::IsMember({"uniform", "random", "gradient"}));
  energy_cmd->add_option("--norm", norm)->check(CLI::IsMember({"on", "off"}));
  energy_cmd->add_option("--steps", steps);

  auto* symmetry_cmd = app.add_subcommand("symmetry", "symmetry breaking from a near-constant field");
  add_common(symmetry_cmd);
  symmetry_cmd->add_option("--epsilon", epsilon);
  symmetry_cmd->add_option("--steps", steps);

  auto* resilience_cmd = app.add_subcommand("resilience", "corruption sweep under pure-diffusion evolve");
  add_common(resilience_cmd);
  resilience_cmd->add_option("--modes", modes, "comma-separated corruption modes");
  resilience_cmd->add_option("--ratios", ratios, "comma-separated ratios");

  auto* scaling_cmd = app.add_subcommand("scaling", "attention vs diffusion operation counts");
  add_common(scaling_cmd, false);
  scaling_cmd->add_option("--tokens", tokens, "comma-separated token counts");

  auto* gradcheck_cmd = app.add_subcommand("gradcheck", "finite-difference gradient check");
  add_common(gradcheck_cmd);
  gradcheck_cmd->add_option("--samples", samples);

  auto* gen_cmd = app.add_subcommand("gen-data", "write moving-disc sequences");
  add_common(gen_cmd);
  gen_cmd->add_option("--n-sequences", n_seq);
  gen_cmd->add_option("--frames", frames);

  auto* lyap_cmd = app.add_subcommand("lyapunov", "largest Lyapunov exponent of a layer");
  add_common(lyap_cmd);
  lyap_cmd->add_option("--steps", steps);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    fail_json("usage", e.what());
    return 2;
  }

  try {
    int code = 0;
    if (*train_cmd) cmd_train(common, steps, resume);
    else if (*rollout_cmd) cmd_rollout(common, checkpoint, horizon, n_seq);
    else if (*recovery_cmd) cmd_recovery(common, rollout_csv, threshold);
    else if (*phase_cmd) cmd_phase(common, ranges, grid);
    else if (*energy_cmd) cmd_energy(common, init, norm, steps);
    else if (*symmetry_cmd) cmd_symmetry(common, epsilon, steps);
    else if (*resilience_cmd) cmd_resilience(common, modes, ratios);
    else if (*scaling_cmd) cmd_scaling(common, tokens);
    else if (*gradcheck_cmd) code = cmd_gradcheck(common, samples);
    else if (*gen_cmd) cmd_gen_data(common, n_seq, frames);
    else if (*lyap_cmd) cmd_lyapunov(common, steps);
    return code;
  } catch (const ConfigError& e) {
    fail_json("config", e.what(), e.key());
    return 3;
  } catch (const io::IoError& e) {
    fail_json("io", e.what());
    return 4;
  } catch (const std::exception& e) {
    fail_json("runtime", e.what());
    return 1;
  }
}
