#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>
#include <nlohmann/json.hpp>
#include <random>

#include "gradcheck.hpp"
#include "pcs/compaction.hpp"
#include "pcs/costmodel.hpp"
#include "pcs/errors.hpp"
#include "pcs/model.hpp"

using namespace pcs;
using pcs::testing::random_tensor;

namespace {

/// Random BN statistics and running salience with exactly K zeros per PCS
/// layer, then frozen.
Model frozen_model(const NetGraph& graph, unsigned seed, bool batch_norm = true) {
  std::mt19937 rng(seed);
  ModelOptions options;
  options.batch_norm = batch_norm;
  Model model = Model::build(graph, options, rng);
  for (auto& layer : model.layers) {
    if (!layer.conv.bn) continue;
    auto& bn = *layer.conv.bn;
    const std::size_t c = bn.channels();
    bn.gamma = random_tensor({c}, rng, 0.5f, 1.5f);
    bn.beta = random_tensor({c}, rng, -0.2f, 0.2f);
    bn.running_mean = random_tensor({c}, rng, -0.3f, 0.3f);
    bn.running_var = random_tensor({c}, rng, 0.5f, 2.0f);
  }
  std::uniform_real_distribution<float> s(0.2f, 1.0f);
  for (auto i : model.pcs_layers()) {
    auto& state = *model.layers[i].state;
    std::vector<std::size_t> order(state.channels());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t j = 0; j < order.size(); ++j) state.running[order[j]] = j < state.k ? 0.0f : s(rng);
  }
  model.freeze();
  return model;
}

double max_rel_diff(const Tensor& a, const Tensor& b) {
  EXPECT_EQ(a.shape(), b.shape());
  double worst = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const double d = std::abs(static_cast<double>(a.at(i)) - b.at(i));
    worst = std::max(worst, d / std::max(1.0, std::abs(static_cast<double>(b.at(i)))));
  }
  return worst;
}

Tensor inputs(const NetGraph& g, std::size_t n, unsigned seed) {
  std::mt19937 rng(seed);
  Tensor x = random_tensor({n, g.input_channels, g.input_height, g.input_width}, rng, -1.0f, 1.0f);
  x.set_requires_grad(false);
  return x;
}

}  // namespace

TEST(MakeMask, ExactZeroComparison) {
  const std::vector<float> s = {0.0f, 0.3f, 0.0f};
  EXPECT_EQ(make_mask(s).keep, (std::vector<bool>{false, true, false}));
  const std::vector<float> positive = {0.1f, 1e-30f, 0.5f};
  EXPECT_EQ(make_mask(positive).kept_count(), 3u);
  EXPECT_EQ(make_mask(positive, 0.2f).kept_count(), 1u);
}

TEST(MakeMask, ErrorCases) {
  const std::vector<float> zeros = {0.0f, 0.0f};
  EXPECT_THROW(make_mask(zeros), ConfigError);
  const std::vector<float> negative = {0.5f, -0.1f};
  EXPECT_THROW(make_mask(negative), NumericError);
  const std::vector<float> nan = {0.5f, std::numeric_limits<float>::quiet_NaN()};
  EXPECT_THROW(make_mask(nan), NumericError);
}

TEST(PruneConv, GathersKeptFilters) {
  std::mt19937 rng(1);
  ConvBlock block = ConvBlock::init(3, 4, 3, 1, 1, true, Activation::relu, rng);
  block.bias = random_tensor({4}, rng);
  const std::size_t kept[] = {1, 3};
  ConvBlock pruned = prune_conv(block, ChannelMask::from_keep(4, kept), ChannelMask::all(3));
  ASSERT_EQ(pruned.weight.shape(), (Shape{2, 3, 3, 3}));
  for (std::size_t i = 0; i < 27; ++i) {
    EXPECT_EQ(pruned.weight.at(i), block.weight.at(27 + i));
    EXPECT_EQ(pruned.weight.at(27 + i), block.weight.at(81 + i));
  }
  EXPECT_EQ(pruned.bias.at(1), block.bias.at(3));
  EXPECT_EQ(pruned.bn->channels(), 2u);
}

TEST(PruneConv, AllTrueMasksAreIdentityAndWidthsAreChecked) {
  std::mt19937 rng(2);
  ConvBlock block = ConvBlock::init(3, 4, 3, 1, 1, false, Activation::relu, rng);
  ConvBlock same = prune_conv(block, ChannelMask::all(4), ChannelMask::all(3));
  EXPECT_EQ(std::memcmp(same.weight.data().data(), block.weight.data().data(), block.weight.numel() * 4), 0);
  EXPECT_THROW(prune_conv(block, ChannelMask::all(5), ChannelMask::all(3)), ShapeError);
  EXPECT_THROW(prune_conv(block, ChannelMask{std::vector<bool>(4, false)}, ChannelMask::all(3)), ConfigError);
}

TEST(PropagateMasks, ChainPassesKeepSetDownstream) {
  const NetGraph g = toy_cnn_graph(16, 4);
  const std::size_t kept[] = {0, 2};
  ChannelMask m = ChannelMask::from_keep(16, kept);
  const PrunePlan plan = propagate_masks(g, {{"conv0", m}});
  EXPECT_EQ(plan.at("conv0").out_keep, (std::vector<std::size_t>{0, 2}));
  EXPECT_EQ(plan.at("conv1").in_keep, (std::vector<std::size_t>{0, 2}));
  EXPECT_EQ(plan.at("conv1").out_keep.size(), 32u);
  EXPECT_DOUBLE_EQ(plan.at("conv0").width_ratio(), 2.0 / 16.0);
  EXPECT_THROW(propagate_masks(g, {{"nope", m}}), ConfigError);
  EXPECT_THROW(propagate_masks(g, {{"conv1", m}}), ConfigError);
}

TEST(PropagateMasks, ResidualGroupsScatterToFullWidth) {
  const NetGraph g = toy_resnet_graph(16, 4);
  Model model = frozen_model(g, 3);
  const PrunePlan plan = propagate_masks(g, model_masks(model));
  for (const auto& node : g.nodes) {
    const auto& lp = plan.at(node.name);
    if (node.kind == NodeKind::add) {
      EXPECT_EQ(lp.visible.size(), node.c_out) << node.name;
    }
    if (node.kind == NodeKind::conv && !node.group.empty()) {
      EXPECT_TRUE(lp.scattered) << node.name;
      EXPECT_EQ(lp.visible.size(), node.c_out) << node.name;
      EXPECT_LT(lp.out_keep.size(), node.c_out) << node.name;
    }
    if (node.kind == NodeKind::conv && node.group.empty()) {
      EXPECT_FALSE(lp.scattered) << node.name;
      EXPECT_EQ(lp.visible, lp.out_keep) << node.name;
    }
  }
}

TEST(PlanReport, JsonRoundTrip) {
  const NetGraph g = toy_resnet_graph(16, 4);
  Model model = frozen_model(g, 4);
  const PrunePlan plan = propagate_masks(g, model_masks(model));
  const std::string text = plan_report_json(g, plan);
  const auto j = nlohmann::json::parse(text);
  ASSERT_TRUE(j.contains("layers"));
  const PrunePlan back = plan_from_json(text);
  ASSERT_EQ(back.layers.size(), plan.layers.size());
  for (std::size_t i = 0; i < plan.layers.size(); ++i) {
    EXPECT_EQ(back.layers[i].name, plan.layers[i].name);
    EXPECT_EQ(back.layers[i].out_keep, plan.layers[i].out_keep);
    EXPECT_EQ(back.layers[i].in_keep, plan.layers[i].in_keep);
    EXPECT_EQ(back.layers[i].scattered, plan.layers[i].scattered);
  }
  EXPECT_THROW(plan_from_json("[1,2"), ConfigError);
}

class CompactionEquivalence : public ::testing::TestWithParam<const char*> {
 protected:
  NetGraph graph() const {
    return std::string(GetParam()) == "toy-cnn" ? toy_cnn_graph(16, 4) : toy_resnet_graph(16, 4);
  }
};

TEST_P(CompactionEquivalence, StaticScaleMatchesRunningScaleModel) {
  const NetGraph g = graph();
  Model model = frozen_model(g, 10);
  model.scale_source = ScaleSource::running;
  const PrunePlan plan = propagate_masks(g, model_masks(model));
  Model compact = compact_network(model, plan, CompactMode::static_scale);
  EXPECT_TRUE(compact.compacted);
  EXPECT_TRUE(compact.pcs_layers().empty());
  const Tensor x = inputs(g, 100, 11);
  EXPECT_LE(max_rel_diff(compact.forward(x, Mode::eval), model.forward(x, Mode::eval)), 1e-5);
}

TEST_P(CompactionEquivalence, DynamicScaleMatchesLiveScaleModel) {
  const NetGraph g = graph();
  Model model = frozen_model(g, 12);
  model.scale_source = ScaleSource::live;
  const PrunePlan plan = propagate_masks(g, model_masks(model));
  Model compact = compact_network(model, plan, CompactMode::dynamic_scale);
  EXPECT_FALSE(compact.pcs_layers().empty());
  const Tensor x = inputs(g, 100, 13);
  EXPECT_LE(max_rel_diff(compact.forward(x, Mode::eval), model.forward(x, Mode::eval)), 1e-5);
}

TEST_P(CompactionEquivalence, IntrospectedCostEqualsPlanCost) {
  const NetGraph g = graph();
  Model model = frozen_model(g, 14);
  const PrunePlan plan = propagate_masks(g, model_masks(model));
  const auto expected = network_totals(g, &plan);
  ASSERT_TRUE(expected.pruned_total.has_value());
  EXPECT_LT(expected.pruned_total->madds, expected.total.madds);
  for (auto mode : {CompactMode::static_scale, CompactMode::dynamic_scale}) {
    const auto measured = model_cost(compact_network(model, plan, mode));
    EXPECT_EQ(measured.total, *expected.pruned_total) << to_string(mode);
  }
}

TEST_P(CompactionEquivalence, CompactedCheckpointRoundTrips) {
  const NetGraph g = graph();
  Model model = frozen_model(g, 15);
  const PrunePlan plan = propagate_masks(g, model_masks(model));
  Model compact = compact_network(model, plan, CompactMode::static_scale);
  Model loaded = load_model(save_model(compact));
  const Tensor x = inputs(g, 8, 16);
  const Tensor a = compact.forward(x, Mode::eval), b = loaded.forward(x, Mode::eval);
  EXPECT_EQ(std::memcmp(a.data().data(), b.data().data(), a.numel() * 4), 0);
}

INSTANTIATE_TEST_SUITE_P(ToyGraphs, CompactionEquivalence, ::testing::Values("toy-cnn", "toy-resnet"),
                         [](const auto& info) { return std::string(info.param) == "toy-cnn" ? "Chain" : "Residual"; });

TEST(Compaction, NothingPrunedIsBitIdentical) {
  const NetGraph g = toy_cnn_graph(16, 4);
  std::mt19937 rng(20);
  ModelOptions options;
  options.batch_norm = false;
  Model model = Model::build(g, options, rng);
  for (auto i : model.pcs_layers()) {
    auto& state = *model.layers[i].state;
    std::fill(state.running.begin(), state.running.end(), 0.5f);
  }
  model.freeze();
  // Override the K-lowest mask: every channel survives.
  for (auto i : model.pcs_layers()) std::fill(model.layers[i].mask.begin(), model.layers[i].mask.end(), 1.0f);
  model.scale_source = ScaleSource::live;
  const PrunePlan plan = propagate_masks(g, model_masks(model));
  Model compact = compact_network(model, plan, CompactMode::dynamic_scale);
  const Tensor x = inputs(g, 16, 21);
  const Tensor a = compact.forward(x, Mode::eval), b = model.forward(x, Mode::eval);
  ASSERT_EQ(a.shape(), b.shape());
  EXPECT_EQ(std::memcmp(a.data().data(), b.data().data(), a.numel() * 4), 0);
  EXPECT_EQ(model_cost(compact).total, network_totals(g).total);
}

TEST(Compaction, PreconditionsAreEnforced) {
  const NetGraph g = toy_cnn_graph(16, 4);
  std::mt19937 rng(30);
  Model unfrozen = Model::build(g, {}, rng);
  EXPECT_THROW(compact_network(unfrozen, propagate_masks(g, {}), CompactMode::static_scale), ConfigError);

  Model model = frozen_model(g, 31);
  PrunePlan plan = propagate_masks(g, model_masks(model));
  // A plan whose keep-set disagrees with the frozen mask.
  PrunePlan other = propagate_masks(g, {});
  EXPECT_THROW(compact_network(model, other, CompactMode::static_scale), ConfigError);
  Model compact = compact_network(model, plan, CompactMode::static_scale);
  EXPECT_THROW(compact_network(compact, plan, CompactMode::static_scale), ConfigError);

  ModelOptions dyn;
  dyn.policy = Policy::input_dependent;
  std::mt19937 rng2(32);
  Model dependent = Model::build(g, dyn, rng2);
  dependent.freeze();
  EXPECT_THROW(compact_network(dependent, propagate_masks(g, {}), CompactMode::static_scale), ConfigError);
  EXPECT_THROW(compact_mode_from_string("sparse"), ConfigError);
  EXPECT_EQ(compact_mode_from_string("dynamic"), CompactMode::dynamic_scale);
}

TEST(StaticScheme, FrozenZeroSetIsInputIndependent) {
  const NetGraph g = toy_cnn_graph(16, 4);
  Model model = frozen_model(g, 40);
  ForwardTrace trace;
  model.forward(inputs(g, 100, 41), Mode::eval, &trace);
  for (std::size_t j = 0; j < trace.effective.size(); ++j) {
    const auto reference = zero_set(trace.effective[j], 0);
    std::size_t zeros = std::count(reference.begin(), reference.end(), true);
    EXPECT_EQ(zeros, model.layers[trace.layer[j]].state->k);
    for (std::size_t n = 1; n < 100; ++n) EXPECT_EQ(zero_set(trace.effective[j], n), reference);
  }
}
