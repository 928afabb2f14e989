#include <gtest/gtest.h>

#include <cmath>

#include "fluidlab/dynamics.hpp"
#include "oracles.hpp"

using namespace fluidlab;

namespace {

LayerParams random_layer(std::size_t d, std::uint64_t seed) {
  Rng rng(seed);
  LayerParams p = init_layer(d, rng);
  // Spread every parameter away from its init so each term is exercised.
  visit_layer([&](const std::string&, FieldGrid& g) {
    for (double& v : g.values()) v += 0.3 * rng.normal();
  }, "", p);
  return p;
}

double softplus_ref(double x) { return std::log1p(std::exp(x)); }

FieldGrid reaction_oracle(const FieldGrid& u, const LayerParams& p) {
  const std::size_t d = u.channels(), n = u.plane();
  FieldGrid out(d, u.height(), u.width());
  for (std::size_t pos = 0; pos < n; ++pos) {
    std::vector<double> hidden(2 * d);
    for (std::size_t r = 0; r < 2 * d; ++r) {
      double s = p.reaction_b1[r];
      for (std::size_t k = 0; k < d; ++k) s += p.reaction_w1[r * d + k] * u[k * n + pos];
      hidden[r] = oracle::gelu(s);
    }
    for (std::size_t c = 0; c < d; ++c) {
      double s = p.reaction_b2[c];
      for (std::size_t r = 0; r < 2 * d; ++r) s += p.reaction_w2[c * 2 * d + r] * hidden[r];
      out[c * n + pos] = s;
    }
  }
  return out;
}

// h + sigmoid(G x) ⊙ tanh(V x) for a single column x.
std::vector<double> gated_oracle(const std::vector<double>& h, const std::vector<double>& x, const FieldGrid& g,
                                 const FieldGrid& v) {
  const std::size_t d = h.size();
  std::vector<double> out(d);
  for (std::size_t r = 0; r < d; ++r) {
    double gs = 0.0, vs = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
      gs += g[r * d + k] * x[k];
      vs += v[r * d + k] * x[k];
    }
    out[r] = h[r] + oracle::sigmoid(gs) * std::tanh(vs);
  }
  return out;
}

}  // namespace

TEST(Reaction, ZeroWeightsGiveZero) {
  const LayerParams p = zero_dynamics_layer(3);
  Rng rng(1);
  const FieldGrid out = reaction(rng.normal_grid(3, 4, 4), p);
  for (double v : out.values()) EXPECT_EQ(v, 0.0);
}

TEST(Reaction, SingleChannelGelu) {
  LayerParams p = zero_dynamics_layer(1);
  p.reaction_w1[0] = 1.0;  // w1 = [1; 0]
  p.reaction_w2[0] = 1.0;  // w2 = [1, 0]
  EXPECT_NEAR(reaction(FieldGrid(1, 1, 1, 1.0), p)[0], 0.841192, 1e-6);
}

TEST(Reaction, MatchesPerPositionOracle) {
  const LayerParams p = random_layer(2, 3);
  Rng rng(4);
  const FieldGrid u = rng.normal_grid(2, 3, 3);
  EXPECT_LT(oracle::max_abs_diff(reaction(u, p), reaction_oracle(u, p)), 1e-12);
}

TEST(GlobalMemory, ZeroMeanLeavesStateUnchanged) {
  const LayerParams p = random_layer(4, 5);
  const ChannelVector h{0.1, -0.2, 0.3, 0.4};
  EXPECT_EQ(update_global_memory(h, ChannelVector(4), p), h);
}

TEST(GlobalMemory, ZeroWeightsZeroState) {
  const LayerParams p = zero_dynamics_layer(3);
  const ChannelVector out = update_global_memory(ChannelVector(3), ChannelVector{1.0, -4.0, 2.0}, p);
  for (double v : out.values()) EXPECT_EQ(v, 0.0);
}

TEST(GlobalMemory, MatchesMatrixVectorOracle) {
  const LayerParams p = random_layer(4, 6);
  const ChannelVector h{0.5, -0.1, 0.0, 0.2}, ubar{1.0, -2.0, 0.3, 0.7};
  const ChannelVector out = update_global_memory(h, ubar, p);
  const auto ref = gated_oracle({h.values().begin(), h.values().end()}, {ubar.values().begin(), ubar.values().end()},
                                p.gmem_gate, p.gmem_val);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(out[i], ref[i], 1e-12);
}

TEST(LocalMemory, ZeroFieldOrZeroWeightsLeaveStateUnchanged) {
  Rng rng(7);
  const FieldGrid h = rng.normal_grid(3, 4, 4);
  EXPECT_LT(oracle::max_abs_diff(update_local_memory(h, FieldGrid(3, 16, 16), random_layer(3, 8)), h), 1e-15);
  EXPECT_LT(oracle::max_abs_diff(update_local_memory(h, rng.normal_grid(3, 16, 16), zero_dynamics_layer(3)), h),
            1e-15);
}

TEST(LocalMemory, MatchesPerCellOracle) {
  const LayerParams p = random_layer(3, 9);
  Rng rng(10);
  const FieldGrid h = rng.normal_grid(3, 4, 4), u = rng.normal_grid(3, 12, 8);
  const FieldGrid out = update_local_memory(h, u, p);
  const FieldGrid pooled = oracle::avg_pool(u, 4, 4);
  for (std::size_t cell = 0; cell < 16; ++cell) {
    std::vector<double> hc(3), xc(3);
    for (std::size_t c = 0; c < 3; ++c) {
      hc[c] = h[c * 16 + cell];
      xc[c] = pooled[c * 16 + cell];
    }
    const auto ref = gated_oracle(hc, xc, p.lmem_gate, p.lmem_val);
    for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(out[c * 16 + cell], ref[c], 1e-12);
  }
}

TEST(EffectiveDt, ClampedToRange) {
  LayerParams p = zero_dynamics_layer(1);
  p.dt_logit[0] = 5.0;
  EXPECT_DOUBLE_EQ(effective_dt(p), kDtMax);
  p.dt_logit[0] = -20.0;
  EXPECT_DOUBLE_EQ(effective_dt(p), kDtMin);
  p.dt_logit[0] = std::log(0.1);
  EXPECT_NEAR(effective_dt(p), 0.1, 1e-15);
}

TEST(PdeStep, ConstantFieldIsFixedPoint) {
  const LayerParams p = zero_dynamics_layer(2);
  const FieldGrid u(2, 5, 5, 1.7);
  EXPECT_LT(oracle::max_abs_diff(pde_step(u, p, ChannelVector(2), FieldGrid(2, 4, 4)), u), 1e-15);
}

TEST(PdeStep, ImpulseWithSingleDilation) {
  // Only the dilation-1 row diffuses (D = 0.25); the other rows are driven to
  // softplus ≈ 0 so the step is u + 0.025·stencil.
  LayerParams p = zero_dynamics_layer(1, 0.25, 0.1);
  p.diffusion_logits[1] = -800.0;
  p.diffusion_logits[2] = -800.0;
  FieldGrid u(1, 3, 3);
  u(0, 1, 1) = 1.0;
  const FieldGrid out = pde_step(u, p, ChannelVector(1), FieldGrid(1, 4, 4));
  const double stencil[9] = {0, 1, 0, 1, -4, 1, 0, 1, 0};
  for (std::size_t k = 0; k < 9; ++k) EXPECT_NEAR(out[k], u[k] + 0.025 * stencil[k], 1e-15);
}

TEST(PdeStep, MatchesComposedOracle) {
  const std::size_t d = 3;
  const LayerParams p = random_layer(d, 11);
  Rng rng(12);
  const FieldGrid u = rng.normal_grid(d, 6, 5), hl = rng.normal_grid(d, 4, 4);
  const ChannelVector hg{0.4, -0.3, 0.9};
  const FieldGrid out = pde_step(u, p, hg, hl);

  const double dt = std::clamp(std::exp(p.dt_logit[0]), 0.005, 0.35);
  const double ag = softplus_ref(p.alpha_g_logit[0]), al = softplus_ref(p.alpha_l_logit[0]);
  const FieldGrid react = reaction_oracle(u, p);
  const FieldGrid up = oracle::bilinear(hl, 6, 5);
  const long dils[3] = {1, 4, 16};
  FieldGrid laps[3] = {oracle::laplacian(u, dils[0]), oracle::laplacian(u, dils[1]), oracle::laplacian(u, dils[2])};
  for (std::size_t c = 0; c < d; ++c)
    for (std::size_t y = 0; y < 6; ++y)
      for (std::size_t x = 0; x < 5; ++x) {
        double rhs = react(c, y, x) + ag * hg[c] + al * up(c, y, x);
        for (std::size_t k = 0; k < 3; ++k) rhs += softplus_ref(p.diffusion_logits[k * d + c]) * laps[k](c, y, x);
        EXPECT_NEAR(out(c, y, x), u(c, y, x) + dt * rhs, 1e-12);
      }
}

TEST(PdeStep, HebbianMultiplierScalesDiffusionOnly) {
  LayerParams p = zero_dynamics_layer(1, 0.25, 0.1);
  Rng rng(13);
  const FieldGrid u = rng.normal_grid(1, 4, 4);
  const FieldGrid plain = pde_step(u, p, ChannelVector(1), FieldGrid(1, 4, 4));
  const FieldGrid twice(1, 4, 4, 2.0);
  const FieldGrid doubled = pde_step(u, p, ChannelVector(1), FieldGrid(1, 4, 4), &twice);
  for (std::size_t k = 0; k < u.size(); ++k) EXPECT_NEAR(doubled[k] - u[k], 2.0 * (plain[k] - u[k]), 1e-14);
}

TEST(PdeStep, SingleParameterGradientMatchesFiniteDifference) {
  const std::size_t d = 2;
  const LayerParams base = random_layer(d, 14);
  Rng rng(15);
  const FieldGrid u = rng.normal_grid(d, 5, 5), probe = rng.normal_grid(d, 5, 5);
  const ChannelVector hg{0.2, -0.1};
  const FieldGrid hl = rng.normal_grid(d, 4, 4);
  auto loss = [&](const LayerParams& p) { return oracle::dot(pde_step(u, p, hg, hl), probe); };

  LayerVars vars = to_vars(base, true);
  ad::Var out = pde_step(ad::Var::constant(u), vars, ad::Var::constant(hg.as_grid()), ad::Var::constant(hl));
  ad::backward(ad::sum(ad::mul_const(out, probe)));

  std::vector<std::pair<std::string, double>> checks;
  LayerParams copy = base;
  visit_layer([&](const std::string& name, FieldGrid& value, ad::Var& var) {
    const FieldGrid g = var.grad();
    const double h = 1e-6;
    const double keep = value[0];
    value[0] = keep + h;
    const double up = loss(copy);
    value[0] = keep - h;
    const double down = loss(copy);
    value[0] = keep;
    const double numeric = (up - down) / (2 * h);
    EXPECT_LT(std::abs(numeric - g[0]) / std::max(std::abs(numeric), 1e-8), 1e-6) << name;
  }, "", copy, vars);
}

TEST(ShouldStop, HandExamples) {
  const StopCriterion crit{};
  const FieldGrid a(1, 2, 2, std::vector<double>{0.25, -0.25, 0.25, 0.25});
  EXPECT_TRUE(should_stop(a, a, crit));
  FieldGrid b = a;
  b[0] += 0.1;  // diff L1 0.1 against prev L1 1.0
  EXPECT_FALSE(should_stop(a, b, crit));
  const FieldGrid z(1, 2, 2);
  EXPECT_TRUE(should_stop(z, z, crit));
}

TEST(ShouldStop, ThresholdIsStrict) {
  StopCriterion crit{};
  crit.eps_prime = 0.0;
  const FieldGrid prev(1, 1, 1, 1.0), curr(1, 1, 1, 1.08);
  EXPECT_FALSE(should_stop(prev, curr, crit));
}

TEST(IntegrateLayer, OneStepHasNoNormalization) {
  const LayerParams p = random_layer(3, 16);
  Rng rng(17);
  const FieldGrid u = rng.normal_grid(3, 8, 8);
  IntegrateOptions opt;
  opt.max_steps = 1;
  opt.normalize = true;
  auto [out, diag] = integrate_layer(u, p, opt);
  const ChannelVector hg = update_global_memory(ChannelVector(3), spatial_mean(u), p);
  const FieldGrid hl = update_local_memory(FieldGrid(3, 4, 4), u, p);
  EXPECT_LT(oracle::max_abs_diff(out, pde_step(u, p, hg, hl)), 1e-14);
  EXPECT_EQ(diag.steps_used, 1u);
}

TEST(IntegrateLayer, EvenStepsAreNormalized) {
  const LayerParams p = random_layer(4, 18);
  Rng rng(19);
  IntegrateOptions opt;
  opt.max_steps = 2;
  auto [out, diag] = integrate_layer(rng.normal_grid(4, 8, 8), p, opt);
  const std::size_t n = out.plane();
  for (std::size_t pos = 0; pos < n; ++pos) {
    double ms = 0.0;
    for (std::size_t c = 0; c < 4; ++c) ms += out[c * n + pos] * out[c * n + pos] / (p.norm_gains[c] * p.norm_gains[c]);
    EXPECT_NEAR(ms / 4.0, 1.0, 1e-4);
  }
}

TEST(IntegrateLayer, AdaptiveStopsOnConstantInput) {
  const LayerParams p = zero_dynamics_layer(4);
  IntegrateOptions opt;
  opt.adaptive = true;
  auto [out, diag] = integrate_layer(FieldGrid(4, 16, 16, 1.0), p, opt);
  EXPECT_LE(diag.steps_used, 3u);
  EXPECT_GE(diag.steps_used, opt.stop.patience);
}

TEST(IntegrateLayer, FixedModeRunsEveryStep) {
  const LayerParams p = zero_dynamics_layer(4);
  IntegrateOptions opt;
  opt.max_steps = 6;
  auto [out, diag] = integrate_layer(FieldGrid(4, 16, 16, 1.0), p, opt);
  EXPECT_EQ(diag.steps_used, 6u);
  EXPECT_EQ(diag.turbulence_per_step.size(), 6u);
  EXPECT_EQ(diag.energy_per_step.size(), 6u);
}

TEST(IntegrateLayer, OnStepSeesEveryTau) {
  IntegrateOptions opt;
  std::vector<std::size_t> seen;
  opt.on_step = [&](std::size_t tau, const FieldGrid&) { seen.push_back(tau); };
  integrate_layer(FieldGrid(2, 8, 8, 0.5), zero_dynamics_layer(2), opt);
  EXPECT_EQ(seen, (std::vector<std::size_t>{1, 2, 3, 4, 5, 6}));
}

TEST(IntegrateLayer, PureDiffusionConservesMassAndMaxNorm) {
  // D·dt summed over dilations is 0.075 ≤ 0.25, so each Euler step is a
  // convex combination of neighbours.
  const LayerParams p = zero_dynamics_layer(2, 0.25, 0.1);
  Rng rng(20);
  const FieldGrid u0 = rng.normal_grid(2, 16, 16);
  IntegrateOptions opt;
  opt.normalize = false;
  opt.max_steps = 20;
  double prev_max = 0.0;
  for (double v : u0.values()) prev_max = std::max(prev_max, std::abs(v));
  opt.on_step = [&](std::size_t, const FieldGrid& u) {
    double m = 0.0;
    for (double v : u.values()) m = std::max(m, std::abs(v));
    EXPECT_LE(m, prev_max + 1e-12);
    prev_max = m;
  };
  auto [out, diag] = integrate_layer(u0, p, opt);
  const ChannelVector m0 = spatial_mean(u0), m1 = spatial_mean(out);
  for (std::size_t c = 0; c < 2; ++c) EXPECT_NEAR(m0[c], m1[c], 1e-12);
  for (std::size_t t = 1; t < diag.energy_per_step.size(); ++t)
    EXPECT_LE(diag.energy_per_step[t], diag.energy_per_step[t - 1] + 1e-12);
}

TEST(IntegrateLayer, Deterministic) {
  const LayerParams p = random_layer(3, 21);
  Rng rng(22);
  const FieldGrid u = rng.normal_grid(3, 8, 8);
  IntegrateOptions opt;
  opt.adaptive = true;
  auto [a, da] = integrate_layer(u, p, opt);
  auto [b, db] = integrate_layer(u, p, opt);
  EXPECT_EQ(a, b);
  EXPECT_EQ(da.steps_used, db.steps_used);
}

TEST(IntegrateLayer, RejectsZeroPatience) {
  IntegrateOptions opt;
  opt.stop.patience = 0;
  EXPECT_THROW(integrate_layer(FieldGrid(1, 4, 4), zero_dynamics_layer(1), opt), std::invalid_argument);
}
