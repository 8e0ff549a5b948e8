#include <gtest/gtest.h>

#include <random>

#include "gradient_cases.hpp"

using namespace pcs;
using pcs::testing::GradCase;
using pcs::testing::random_tensor;

class OpsGradients : public ::testing::TestWithParam<GradCase> {};

TEST_P(OpsGradients, MatchesCentralDifferences) {
  const auto outcome = pcs::testing::run_case(GetParam());
  EXPECT_TRUE(outcome.ok()) << outcome.failed << " of " << outcome.instances << " instances below "
                            << pcs::testing::kMinPassRate << " (lowest rate " << outcome.lowest_rate << ", worst error "
                            << outcome.worst << ")";
}

INSTANTIATE_TEST_SUITE_P(AllPrimitives, OpsGradients, ::testing::ValuesIn(pcs::testing::gradient_cases()),
                         [](const ::testing::TestParamInfo<GradCase>& info) { return info.param.name; });

TEST(HybridObjective, CaseSplitGradient) {
  // d/ds of task + lambda * R equals dL/ds plus lambda/N on selected entries.
  std::mt19937 rng(1800);
  for (int inst = 0; inst < pcs::testing::kGradInstances; ++inst) {
    Tensor s = random_tensor({3, 4}, rng, 0.0f, 1.0f);
    const std::vector<std::size_t> selection = {0, 2};
    const float lambda = 0.7f;
    Tensor task = ops::sum(ops::scale(s, 0.25f));
    std::vector<Tensor> parts{shrink_loss(s, selection)};
    backward(hybrid_objective(task, parts, lambda));
    auto g = s.grad();
    for (std::size_t n = 0; n < 3; ++n) {
      for (std::size_t c = 0; c < 4; ++c) {
        const bool selected = c == 0 || c == 2;
        EXPECT_FLOAT_EQ(g[n * 4 + c], 0.25f + (selected ? lambda / 3.0f : 0.0f));
      }
    }
  }
}

TEST(HardSigmoid, SaturatedEntriesPassNoGradient) {
  Tensor x(Shape{4}, std::vector<float>{-5.0f, -3.0f, 3.0f, 4.0f});
  x.set_requires_grad(true);
  backward(ops::sum(ops::hard_sigmoid(x)));
  for (float g : x.grad()) EXPECT_EQ(g, 0.0f);
}
