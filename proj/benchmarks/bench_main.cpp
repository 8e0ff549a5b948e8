#include <benchmark/benchmark.h>

#include <random>

#include "pcs/compaction.hpp"
#include "pcs/costmodel.hpp"
#include "pcs/model.hpp"
#include "pcs/ops.hpp"
#include "pcs/salience.hpp"

using namespace pcs;

namespace {

Tensor uniform(Shape shape, std::mt19937& rng) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
  for (auto& v : t.mutable_data()) v = dist(rng);
  return t;
}

void BM_Conv2dForward(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  std::mt19937 rng(1);
  const Tensor x = uniform({8, c, 16, 16}, rng), w = uniform({c, c, 3, 3}, rng), b = uniform({c}, rng);
  for (auto _ : state) benchmark::DoNotOptimize(ops::conv2d(x, w, b, {1, 1}));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(8 * c * c * 9 * 16 * 16));
}
BENCHMARK(BM_Conv2dForward)->Arg(16)->Arg(32)->Arg(64);

void BM_Conv2dBackward(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  std::mt19937 rng(2);
  Tensor x = uniform({8, c, 16, 16}, rng), w = uniform({c, c, 3, 3}, rng), b = uniform({c}, rng);
  x.set_requires_grad(true);
  w.set_requires_grad(true);
  b.set_requires_grad(true);
  for (auto _ : state) {
    Tensor y = ops::sum(ops::conv2d(x, w, b, {1, 1}));
    backward(y);
    x.clear_grad();
    w.clear_grad();
    b.clear_grad();
  }
}
BENCHMARK(BM_Conv2dBackward)->Arg(16)->Arg(32);

void BM_SalienceGenerator(benchmark::State& state) {
  std::mt19937 rng(3);
  const auto gen = SalienceGenerator::init(64, 64, rng);
  const Tensor x = uniform({64, 64, 8, 8}, rng);
  for (auto _ : state) benchmark::DoNotOptimize(generate_salience(gen, x));
}
BENCHMARK(BM_SalienceGenerator);

void BM_NetworkTotals(benchmark::State& state) {
  const NetGraph g = builtin_graph(state.range(0) == 0 ? "resnet18" : "vgg16");
  for (auto _ : state) benchmark::DoNotOptimize(network_totals(g));
}
BENCHMARK(BM_NetworkTotals)->Arg(0)->Arg(1);

void BM_PropagateMasks(benchmark::State& state) {
  const NetGraph g = builtin_graph("resnet34");
  std::map<std::string, ChannelMask> masks;
  for (const auto& n : g.nodes) {
    if (n.kind != NodeKind::conv) continue;
    std::vector<bool> keep(n.c_out);
    for (std::size_t c = 0; c < n.c_out; ++c) keep[c] = c % 2 == 0;
    masks[n.name] = ChannelMask{keep};
  }
  for (auto _ : state) benchmark::DoNotOptimize(propagate_masks(g, masks));
}
BENCHMARK(BM_PropagateMasks);

void BM_ToyForward(benchmark::State& state) {
  std::mt19937 rng(4);
  ModelOptions options;
  Model model = Model::build(toy_cnn_graph(16, 4), options, rng);
  const Tensor x = uniform({32, 3, 16, 16}, rng);
  for (auto _ : state) benchmark::DoNotOptimize(model.forward(x, Mode::eval));
}
BENCHMARK(BM_ToyForward);

}  // namespace
BENCHMARK_MAIN();
