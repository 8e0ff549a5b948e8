#include <gtest/gtest.h>

#include <random>

#include "gradcheck.hpp"
#include "pcs/errors.hpp"
#include "pcs/ops.hpp"
#include "pcs/salience.hpp"
#include "pcs/shrinking.hpp"

using namespace pcs;
using pcs::testing::random_tensor;

TEST(SalienceGenerator, HiddenWidthHasFloor) {
  EXPECT_EQ(SalienceGenerator::hidden_width(64, 4), 16u);
  EXPECT_EQ(SalienceGenerator::hidden_width(8, 4), 4u);
  EXPECT_EQ(SalienceGenerator::hidden_width(3, 4), 4u);
  EXPECT_THROW(SalienceGenerator::hidden_width(8, 0), ConfigError);
}

TEST(SalienceGenerator, ZeroInputGivesOneHalf) {
  std::mt19937 rng(1);
  auto gen = SalienceGenerator::init(8, 6, rng);
  for (float b : gen.fc2.bias.data()) EXPECT_EQ(b, 0.0f);
  // fc1 bias passes through relu and fc2 weights, so silence it too.
  std::fill(gen.fc1.bias.mutable_data().begin(), gen.fc1.bias.mutable_data().end(), 0.0f);
  Tensor s = generate_salience(gen, Tensor(Shape{2, 8, 3, 3}, 0.0f));
  ASSERT_EQ(s.shape(), (Shape{2, 6}));
  for (float v : s.data()) EXPECT_EQ(v, 0.5f);
}

TEST(SalienceGenerator, OutputInUnitInterval) {
  std::mt19937 rng(2);
  auto gen = SalienceGenerator::init(4, 5, rng);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor x = random_tensor({3, 4, 2, 2}, rng, -50.0f, 50.0f);
    const Tensor s = generate_salience(gen, x);
    for (float v : s.data()) {
      EXPECT_GE(v, 0.0f);
      EXPECT_LE(v, 1.0f);
    }
  }
}

TEST(SalienceGenerator, SaturatedEntryIsZeroWithZeroGradient) {
  std::mt19937 rng(3);
  auto gen = SalienceGenerator::init(4, 3, rng);
  gen.fc2.bias.mutable_data()[1] = -100.0f;
  for (auto& t : parameters(gen)) t.set_requires_grad(true);
  Tensor x = random_tensor({2, 4, 3, 3}, rng, 0.0f, 1.0f);
  Tensor s = generate_salience(gen, x);
  EXPECT_EQ(s.at(1), 0.0f);
  EXPECT_EQ(s.at(4), 0.0f);
  backward(ops::sum(ops::scale(s, 3.0f)));
  const std::size_t hidden = gen.fc2.weight.dim(1);
  EXPECT_EQ(gen.fc2.bias.grad()[1], 0.0f);
  for (std::size_t k = 0; k < hidden; ++k) EXPECT_EQ(gen.fc2.weight.grad()[hidden + k], 0.0f);
  EXPECT_NE(gen.fc2.bias.grad()[0], 0.0f);
}

TEST(SalienceGenerator, RejectsWrongChannelCount) {
  std::mt19937 rng(4);
  auto gen = SalienceGenerator::init(4, 3, rng);
  EXPECT_THROW(generate_salience(gen, Tensor(Shape{1, 5, 2, 2})), ShapeError);
}

TEST(Reweigh, OnesAreIdentityZerosSilenceChannel) {
  std::mt19937 rng(5);
  Tensor x = random_tensor({2, 3, 2, 2}, rng);
  Tensor ones(Shape{2, 3}, 1.0f);
  Tensor y = reweigh(x, ones);
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(y.at(i), x.at(i));
  Tensor s(Shape{2, 3}, 1.0f);
  s.mutable_data()[1 * 3 + 2] = 0.0f;
  Tensor z = reweigh(x, s);
  for (std::size_t p = 0; p < 4; ++p) EXPECT_EQ(z.at((1 * 3 + 2) * 4 + p), 0.0f);
  EXPECT_EQ(z.at((0 * 3 + 2) * 4), x.at((0 * 3 + 2) * 4));
}

TEST(Reweigh, NextLayerIsLinearInSalience) {
  std::mt19937 rng(6);
  Tensor x = random_tensor({1, 3, 4, 4}, rng);
  Tensor w = random_tensor({2, 3, 3, 3}, rng);
  Tensor zero_b(Shape{2}, 0.0f);
  Tensor only(Shape{1, 3}, std::vector<float>{0.0f, 0.3f, 0.0f});
  Tensor twice(Shape{1, 3}, std::vector<float>{0.0f, 0.6f, 0.0f});
  Tensor a = ops::conv2d(reweigh(x, only), w, zero_b, {1, 1});
  Tensor b = ops::conv2d(reweigh(x, twice), w, zero_b, {1, 1});
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(b.at(i), 2.0f * a.at(i), 1e-5f);
}

TEST(Truncate, ThresholdForm) {
  Tensor s(Shape{1, 2}, std::vector<float>{0.2f, 0.05f});
  Tensor t = truncate(s, 0.1f);
  EXPECT_EQ(t.at(0), 0.2f);
  EXPECT_EQ(t.at(1), 0.0f);
  Tensor id = truncate(s, 0.0f);
  EXPECT_EQ(id.at(0), 0.2f);
  EXPECT_EQ(id.at(1), 0.05f);
  EXPECT_THROW(truncate(s, -1.0f), ConfigError);
}

TEST(Truncate, RankFormZeroesLowestPerRow) {
  Tensor s(Shape{2, 4}, std::vector<float>{0.9f, 0.1f, 0.5f, 0.3f, 0.2f, 0.2f, 0.8f, 0.7f});
  Tensor t = truncate_lowest(s, 0.5f);
  const std::vector<float> expect = {0.9f, 0.0f, 0.5f, 0.0f, 0.0f, 0.0f, 0.8f, 0.7f};
  for (std::size_t i = 0; i < expect.size(); ++i) EXPECT_EQ(t.at(i), expect[i]);
}

TEST(LowestIndices, OrdersByValueThenIndex) {
  const std::vector<float> v = {0.3f, 0.8f, 0.05f};
  EXPECT_EQ(lowest_indices(v, 2), (std::vector<std::size_t>{2, 0}));
  const std::vector<float> same = {0.5f, 0.5f, 0.5f};
  EXPECT_EQ(lowest_indices(same, 2), (std::vector<std::size_t>{0, 1}));
  EXPECT_TRUE(lowest_indices(v, 0).empty());
  EXPECT_THROW(lowest_indices(v, 4), ConfigError);
}
