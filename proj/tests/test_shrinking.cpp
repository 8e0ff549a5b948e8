#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "gradcheck.hpp"
#include "pcs/errors.hpp"
#include "pcs/ops.hpp"
#include "pcs/shrinking.hpp"

using namespace pcs;

namespace {
Tensor batch(std::size_t n, std::vector<float> row) {
  std::vector<float> v;
  for (std::size_t i = 0; i < n; ++i) v.insert(v.end(), row.begin(), row.end());
  const std::size_t c = row.size();
  return Tensor(Shape{n, c}, std::move(v));
}
}  // namespace

TEST(ShrinkCount, FloorOfFractionKeepsOneChannel) {
  ShrinkConfig cfg;
  EXPECT_EQ(shrink_count(cfg, 64), 32u);
  EXPECT_EQ(shrink_count(cfg, 5), 2u);
  cfg.k_fraction = 0.99f;
  EXPECT_EQ(shrink_count(cfg, 4), 3u);
  EXPECT_THROW(shrink_count(cfg, 0), ConfigError);
}

TEST(ShrinkConfig, RejectsOutOfRangeValues) {
  ShrinkConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.k_fraction = 1.0f;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = ShrinkConfig{};
  cfg.alpha = 0.0f;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = ShrinkConfig{};
  cfg.t_max = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = ShrinkConfig{};
  cfg.lambda_base = -1.0f;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Ema, SingleUpdateArithmetic) {
  auto state = SalienceState::init(1, 0.1f, 0);
  ema_update(state, batch(4, {1.0f}), Mode::train);
  EXPECT_FLOAT_EQ(state.running[0], 0.55f);
}

TEST(Ema, ConvergesGeometrically) {
  auto state = SalienceState::init(1, 0.1f, 0);
  const float target = 0.9f;
  float gap = std::abs(state.running[0] - target);
  for (int i = 0; i < 30; ++i) {
    ema_update(state, batch(2, {target}), Mode::train);
    const float next = std::abs(state.running[0] - target);
    EXPECT_NEAR(next, 0.9f * gap, 1e-5f);
    gap = next;
  }
}

TEST(Ema, AlphaOneCopiesBatchMean) {
  auto state = SalienceState::init(2, 1.0f, 0);
  Tensor s(Shape{2, 2}, std::vector<float>{0.2f, 0.6f, 0.4f, 1.0f});
  ema_update(state, s, Mode::train);
  EXPECT_FLOAT_EQ(state.running[0], 0.3f);
  EXPECT_FLOAT_EQ(state.running[1], 0.8f);
}

TEST(Ema, ZeroSalienceReachesExactZero) {
  auto state = SalienceState::init(1, 0.1f, 0);
  int steps = 0;
  while (state.running[0] != 0.0f && steps < 5000) {
    ema_update(state, batch(1, {0.0f}), Mode::train);
    ++steps;
  }
  EXPECT_EQ(state.running[0], 0.0f);
  EXPECT_LT(steps, 1000);
}

TEST(Ema, StaysInUnitIntervalAndRejectsEval) {
  std::mt19937 rng(1);
  auto state = SalienceState::init(5, 0.1f, 2);
  for (int i = 0; i < 50; ++i) {
    ema_update(state, pcs::testing::random_tensor({3, 5}, rng, 0.0f, 1.0f), Mode::train);
    for (float v : state.running) {
      EXPECT_GE(v, 0.0f);
      EXPECT_LE(v, 1.0f);
    }
  }
  EXPECT_THROW(ema_update(state, batch(1, {0, 0, 0, 0, 0}), Mode::eval), ConfigError);
  EXPECT_THROW(ema_update(state, batch(1, {0, 0}), Mode::train), ShapeError);
}

TEST(SelectTopK, SmallestRunningSalience) {
  auto state = SalienceState::init(3, 0.1f, 2);
  state.running = {0.3f, 0.8f, 0.05f};
  EXPECT_EQ(select_topk(state), (std::vector<std::size_t>{2, 0}));
  EXPECT_EQ(state.last_selection.size(), 2u);
}

TEST(SelectTopK, TiesGoToLowerIndexAndZeroKIsEmpty) {
  auto state = SalienceState::init(4, 0.1f, 2);
  EXPECT_EQ(select_topk(state), (std::vector<std::size_t>{0, 1}));
  auto none = SalienceState::init(4, 0.1f, 0);
  EXPECT_TRUE(select_topk(none).empty());
  EXPECT_THROW(SalienceState::init(4, 0.1f, 4), ConfigError);
}

TEST(ShrinkLoss, SumsSelectedEntries) {
  Tensor s(Shape{1, 3}, std::vector<float>{0.2f, 0.9f, 0.1f});
  const std::size_t sel[] = {2, 0};
  EXPECT_FLOAT_EQ(shrink_loss(s, sel).item(), 0.3f);
  EXPECT_EQ(shrink_loss(s, std::span<const std::size_t>{}).item(), 0.0f);
  const std::size_t bad[] = {3};
  EXPECT_THROW(shrink_loss(s, bad), ConfigError);
}

TEST(ShrinkLoss, AveragesOverBatch) {
  Tensor s(Shape{2, 2}, std::vector<float>{0.2f, 0.5f, 0.4f, 0.5f});
  const std::size_t sel[] = {0};
  EXPECT_FLOAT_EQ(shrink_loss(s, sel).item(), 0.3f);
}

TEST(LambdaSchedule, QuadraticRamp) {
  ShrinkConfig cfg;
  cfg.lambda_base = 6e-6f;
  cfg.t_max = 60;
  EXPECT_EQ(lambda_at(cfg, 0), 0.0f);
  EXPECT_FLOAT_EQ(lambda_at(cfg, 60), 6e-6f);
  EXPECT_FLOAT_EQ(lambda_at(cfg, 30), 6e-6f / 4.0f);
  EXPECT_FLOAT_EQ(lambda_at(cfg, 90), 6e-6f);
  for (std::size_t e = 1; e <= 60; ++e) EXPECT_GE(lambda_at(cfg, e), lambda_at(cfg, e - 1));
}

TEST(HybridObjective, Combination) {
  Tensor task = Tensor::scalar(0.7f);
  std::vector<Tensor> parts = {Tensor::scalar(0.1f), Tensor::scalar(0.2f)};
  EXPECT_EQ(hybrid_objective(task, parts, 0.0f).item(), 0.7f);
  EXPECT_FLOAT_EQ(hybrid_objective(task, parts, 2.0f).item(), 1.3f);
  EXPECT_THROW(hybrid_objective(task, parts, -1.0f), ConfigError);
}
