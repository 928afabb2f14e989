#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <limits>
#include <set>

#include "fluidlab/training.hpp"

using namespace fluidlab;

namespace {

ModelConfig tiny() {
  ModelConfig c;
  c.codec.d = 8;
  c.codec.decoder_mid = 16;
  c.codec.decoder_fine = 8;
  c.frame_h = c.frame_w = 8;
  c.loss.edge = 0.1;
  c.loss.freq = 0.1;
  return c;
}

TrainConfig tiny_train(std::size_t steps) {
  TrainConfig t;
  t.batch = 2;
  t.window = 2;
  t.steps = steps;
  t.seed = 5;
  t.optim.warmup = 2;
  t.optim.horizon = 10;
  t.optim.lr = 1e-3;
  t.threads = 1;
  return t;
}

Checkpoint snapshot(const ModelParams& p, const OptimState& s) { return {"{}", flatten(p), s.step, s.m, s.v}; }

}  // namespace

TEST(Training, SampleSeedsDifferAcrossWindowsAndSamples) {
  std::set<std::uint64_t> seen;
  for (std::size_t k = 0; k < 20; ++k)
    for (std::size_t b = 0; b < 8; ++b) seen.insert(sample_seed(3, k, b));
  EXPECT_EQ(seen.size(), 160u);
}

TEST(Training, SameSeedGivesIdenticalRuns) {
  const ModelConfig mc = tiny();
  const TrainConfig tc = tiny_train(3);
  ModelParams a = init_model(mc, 1), b = init_model(mc, 1);
  OptimState sa = OptimState::fresh(parameter_count(a), tc.optim), sb = sa;
  EXPECT_EQ(train(a, sa, mc, tc), train(b, sb, mc, tc));
  EXPECT_EQ(flatten(a), flatten(b));
}

TEST(Training, ThreadCountDoesNotChangeResults) {
  const ModelConfig mc = tiny();
  TrainConfig t1 = tiny_train(2), t2 = t1;
  t1.batch = t2.batch = 3;
  t2.threads = 2;
  ModelParams a = init_model(mc, 2), b = init_model(mc, 2);
  OptimState sa = OptimState::fresh(parameter_count(a), t1.optim), sb = sa;
  EXPECT_EQ(train(a, sa, mc, t1), train(b, sb, mc, t2));
  EXPECT_EQ(flatten(a), flatten(b));
}

TEST(Training, ResumeFromCheckpointMatchesStraightRun) {
  const ModelConfig mc = tiny();
  ModelParams straight = init_model(mc, 4);
  OptimState s_straight = OptimState::fresh(parameter_count(straight), tiny_train(4).optim);
  const auto all = train(straight, s_straight, mc, tiny_train(4));

  ModelParams first = init_model(mc, 4);
  OptimState s_first = OptimState::fresh(parameter_count(first), tiny_train(2).optim);
  const auto head = train(first, s_first, mc, tiny_train(2));

  const Checkpoint ck = decode_checkpoint(encode_checkpoint(snapshot(first, s_first)));
  ModelParams resumed = unflatten(init_model(mc, 99), ck.params);
  OptimState s_resumed{tiny_train(4).optim, ck.m, ck.v, ck.step};
  const auto tail = train(resumed, s_resumed, mc, tiny_train(4));

  ASSERT_EQ(head.size() + tail.size(), all.size());
  for (std::size_t i = 0; i < head.size(); ++i) EXPECT_EQ(head[i], all[i]);
  for (std::size_t i = 0; i < tail.size(); ++i) EXPECT_EQ(tail[i], all[head.size() + i]);
  EXPECT_EQ(flatten(resumed), flatten(straight));
  EXPECT_EQ(s_resumed.m, s_straight.m);
  EXPECT_EQ(s_resumed.v, s_straight.v);
}

TEST(Training, SingleTransitionWindowTrains) {
  const ModelConfig mc = tiny();
  TrainConfig tc = tiny_train(2);
  tc.window = 1;
  ModelParams p = init_model(mc, 6);
  const auto before = flatten(p);
  OptimState s = OptimState::fresh(before.size(), tc.optim);
  const auto losses = train(p, s, mc, tc);
  ASSERT_EQ(losses.size(), 2u);
  for (double l : losses) EXPECT_TRUE(std::isfinite(l));
  EXPECT_NE(flatten(p), before);
}

TEST(Training, CallbackCanStopEarly) {
  const ModelConfig mc = tiny();
  ModelParams p = init_model(mc, 7);
  OptimState s = OptimState::fresh(parameter_count(p), tiny_train(5).optim);
  std::size_t seen = 0;
  const auto losses = train(p, s, mc, tiny_train(5), [&](std::size_t, const WindowMetrics& m) {
    EXPECT_GT(m.grad_norm, 0.0);
    return ++seen < 2;
  });
  EXPECT_EQ(losses.size(), 2u);
  EXPECT_EQ(s.step, 2u);
}

TEST(Training, NonFiniteParameterReportsIndex) {
  const ModelConfig mc = tiny();
  ModelParams p = init_model(mc, 8);
  auto flat = flatten(p);
  flat[3] = std::numeric_limits<double>::quiet_NaN();
  p = unflatten(p, flat);
  OptimState s = OptimState::fresh(flat.size(), tiny_train(1).optim);
  try {
    train_window(p, s, mc, training_batch(mc, tiny_train(1), 0), 1);
    FAIL() << "expected a runtime_error";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("non-finite gradient at parameter index "), std::string::npos) << e.what();
  }
  EXPECT_EQ(s.step, 0u);
}

TEST(Checkpoint, RoundTripIsBitwise) {
  Checkpoint ck{R"({"seed":3})", {1.5, -0.0, 1e-300}, 17, {0.1, 0.2, 0.3}, {4.0, 5.0, 6.0}};
  const std::string bytes = encode_checkpoint(ck);
  EXPECT_EQ(bytes.substr(0, 4), "FWCK");
  EXPECT_EQ(bytes.size(), 4u + 4 + 8 + ck.metadata.size() + 8 + 3 * 8 + 8 + 6 * 8);
  const Checkpoint back = decode_checkpoint(bytes);
  EXPECT_EQ(back.metadata, ck.metadata);
  EXPECT_EQ(back.params, ck.params);
  EXPECT_TRUE(std::signbit(back.params[1]));
  EXPECT_EQ(back.step, 17u);
  EXPECT_EQ(back.m, ck.m);
  EXPECT_EQ(back.v, ck.v);

  const auto path = std::filesystem::temp_directory_path() / "fluidlab_ckpt_test.bin";
  save_checkpoint(path.string(), ck);
  EXPECT_EQ(load_checkpoint(path.string()).params, ck.params);
  std::filesystem::remove(path);
}

TEST(Checkpoint, RejectsMalformedInput) {
  const std::string good = encode_checkpoint({"{}", {1.0, 2.0}, 3, {0.0, 0.0}, {0.0, 0.0}});
  std::string bad_magic = good;
  bad_magic[0] = 'X';
  EXPECT_THROW(decode_checkpoint(bad_magic), io::IoError);
  std::string bad_version = good;
  bad_version[4] = 9;
  EXPECT_THROW(decode_checkpoint(bad_version), io::IoError);
  for (std::size_t cut : {std::size_t{3}, std::size_t{10}, good.size() - 1})
    EXPECT_THROW(decode_checkpoint(good.substr(0, cut)), io::IoError) << cut;
  EXPECT_THROW(decode_checkpoint(good + "x"), io::IoError);
  EXPECT_THROW(encode_checkpoint({"{}", {1.0}, 0, {}, {}}), std::invalid_argument);
  EXPECT_THROW(load_checkpoint("/nonexistent/dir/ck.bin"), io::IoError);
}

TEST(GradCheck, StratifiedIndicesCoverBlocks) {
  const ModelParams p = init_model(tiny(), 9);
  const auto layout = parameter_layout(p);
  const auto idx = stratified_indices(p, 120, 1);
  ASSERT_EQ(idx.size(), 120u);
  EXPECT_EQ(std::set<std::size_t>(idx.begin(), idx.end()).size(), 120u);
  std::set<std::string> blocks;
  for (std::size_t i : idx)
    for (const auto& b : layout)
      if (i >= b.offset && i < b.offset + b.size) blocks.insert(b.name);
  EXPECT_EQ(blocks.size(), std::min<std::size_t>(layout.size(), 120));
  EXPECT_EQ(idx, stratified_indices(p, 120, 1));
  EXPECT_EQ(stratified_indices(p, 1000000, 1).size(), parameter_count(p));
}

TEST(GradCheck, TinyModelAgreesWithFiniteDifferences) {
  const ModelConfig mc = tiny();
  const ModelParams p = init_model(mc, 0);
  const auto frames = generate_sequence(scene_for(mc, tiny_train(1), 11));
  const auto rep = check_gradients(p, mc, frames, stratified_indices(p, 120, 0));
  EXPECT_GE(rep.smooth_count(), 100u);
  EXPECT_LT(rep.max_rel_error, 1e-4);
  EXPECT_TRUE(rep.pass());
}
