#include <cstddef>
#include <string>
#include <vector>

#include "pcs/costmodel.hpp"
#include "pcs/errors.hpp"

namespace pcs {

namespace {

std::size_t extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t padding) {
  return (in + 2 * padding - kernel) / stride + 1;
}

class Builder {
 public:
  Builder(std::string name, std::size_t channels, std::size_t size) {
    graph_.name = std::move(name);
    graph_.input_channels = channels;
    graph_.input_height = graph_.input_width = size;
  }

  struct Spec {
    std::size_t c_out, kernel, stride = 1, padding = 0;
    std::string group = {};
    bool relu = true;
    bool bias = false;
  };

  const GraphNode& conv(const std::string& name, const std::string& from, Spec spec) {
    return spatial(name, NodeKind::conv, from, spec);
  }

  const GraphNode& pool(const std::string& name, const std::string& from, std::size_t kernel, std::size_t stride,
                        std::size_t padding, std::string group = {}) {
    const auto c = channels_of(from);
    return spatial(name, NodeKind::pool, from, {c, kernel, stride, padding, std::move(group), false, false});
  }

  const GraphNode& add(const std::string& name, const std::string& a, const std::string& b, std::string group) {
    const auto& pa = graph_.at(a);
    GraphNode n;
    n.name = name;
    n.kind = NodeKind::add;
    n.c_in = n.c_out = pa.c_out;
    n.h_in = n.h_out = pa.h_out;
    n.w_in = n.w_out = pa.w_out;
    n.group = std::move(group);
    n.inputs = {a, b};
    n.relu = true;
    graph_.nodes.push_back(n);
    return graph_.nodes.back();
  }

  const GraphNode& linear(const std::string& name, const std::string& from, std::size_t c_out, bool head,
                          bool relu) {
    const auto& p = graph_.at(from);
    GraphNode n;
    n.name = name;
    n.kind = head ? NodeKind::head : NodeKind::linear;
    n.c_in = p.c_out * p.h_out * p.w_out;
    n.c_out = c_out;
    n.h_in = p.h_out;
    n.w_in = p.w_out;
    n.inputs = {from};
    n.bias = true;
    n.relu = relu;
    graph_.nodes.push_back(n);
    return graph_.nodes.back();
  }

  NetGraph finish() {
    graph_.validate();
    return std::move(graph_);
  }

 private:
  std::size_t channels_of(const std::string& from) const {
    return from.empty() ? graph_.input_channels : graph_.at(from).c_out;
  }

  const GraphNode& spatial(const std::string& name, NodeKind kind, const std::string& from, const Spec& spec) {
    GraphNode n;
    n.name = name;
    n.kind = kind;
    n.c_in = channels_of(from);
    n.c_out = spec.c_out;
    n.kernel = spec.kernel;
    n.stride = spec.stride;
    n.padding = spec.padding;
    n.h_in = from.empty() ? graph_.input_height : graph_.at(from).h_out;
    n.w_in = from.empty() ? graph_.input_width : graph_.at(from).w_out;
    n.h_out = extent(n.h_in, n.kernel, n.stride, n.padding);
    n.w_out = extent(n.w_in, n.kernel, n.stride, n.padding);
    n.group = spec.group;
    if (!from.empty()) n.inputs = {from};
    n.bias = spec.bias;
    n.relu = spec.relu;
    graph_.nodes.push_back(n);
    return graph_.nodes.back();
  }

  NetGraph graph_;
};

NetGraph resnet(const std::string& name, const std::vector<std::size_t>& blocks) {
  Builder b(name, 3, 224);
  b.conv("conv1", "", {64, 7, 2, 3, "stage1"});
  std::string prev = b.pool("maxpool", "conv1", 3, 2, 1, "stage1").name;
  std::size_t width = 64;
  for (std::size_t stage = 0; stage < blocks.size(); ++stage) {
    const std::size_t c = 64u << stage;
    const std::string group = "stage" + std::to_string(stage + 1);
    for (std::size_t i = 0; i < blocks[stage]; ++i) {
      const std::string p = "layer" + std::to_string(stage + 1) + "." + std::to_string(i) + ".";
      const std::size_t stride = (i == 0 && stage > 0) ? 2 : 1;
      b.conv(p + "conv1", prev, {c, 3, stride, 1});
      b.conv(p + "conv2", p + "conv1", {c, 3, 1, 1, group, false});
      std::string shortcut = prev;
      if (stride != 1 || width != c) {
        shortcut = b.conv(p + "downsample", prev, {c, 1, stride, 0, group, false}).name;
      }
      prev = b.add(p + "add", p + "conv2", shortcut, group).name;
      width = c;
    }
  }
  b.pool("avgpool", prev, 7, 1, 0);
  b.linear("fc", "avgpool", 1000, true, false);
  return b.finish();
}

NetGraph vgg16() {
  Builder b("vgg16", 3, 224);
  const std::vector<std::vector<std::size_t>> stages = {{64, 64}, {128, 128}, {256, 256, 256}, {512, 512, 512},
                                                        {512, 512, 512}};
  std::string prev;
  for (std::size_t s = 0; s < stages.size(); ++s) {
    for (std::size_t i = 0; i < stages[s].size(); ++i) {
      const std::string name = "conv" + std::to_string(s + 1) + "_" + std::to_string(i + 1);
      prev = b.conv(name, prev, {stages[s][i], 3, 1, 1, {}, true, true}).name;
    }
    prev = b.pool("pool" + std::to_string(s + 1), prev, 2, 2, 0).name;
  }
  b.linear("fc6", prev, 4096, false, true);
  b.linear("fc7", "fc6", 4096, false, true);
  b.linear("fc8", "fc7", 1000, true, false);
  return b.finish();
}

}  // namespace

NetGraph toy_cnn_graph(std::size_t image, std::size_t classes) {
  if (image < 4 || image % 4 != 0) throw ConfigError("toy-cnn: image size must be a positive multiple of 4");
  if (classes < 2) throw ConfigError("toy-cnn: needs at least two classes");
  Builder b("toy-cnn", 3, image);
  b.conv("conv0", "", {16, 3, 1, 1, {}, true, true});
  b.conv("conv1", "conv0", {32, 2, 2, 0, {}, true, true});
  b.conv("conv2", "conv1", {32, 3, 1, 1, {}, true, true});
  b.conv("conv3", "conv2", {64, 2, 2, 0, {}, true, true});
  b.conv("conv4", "conv3", {64, 3, 1, 1, {}, true, true});
  b.conv("conv5", "conv4", {64, 3, 1, 1, {}, true, true});
  b.pool("gap", "conv5", image / 4, 1, 0);
  b.linear("head", "gap", classes, true, false);
  return b.finish();
}

NetGraph toy_resnet_graph(std::size_t image, std::size_t classes) {
  if (image < 4 || image % 2 != 0) throw ConfigError("toy-resnet: image size must be even");
  if (classes < 2) throw ConfigError("toy-resnet: needs at least two classes");
  Builder b("toy-resnet", 3, image);
  b.conv("stem", "", {16, 3, 1, 1, "g1", true, true});
  b.conv("b1.conv1", "stem", {16, 3, 1, 1, {}, true, true});
  b.conv("b1.conv2", "b1.conv1", {16, 3, 1, 1, "g1", false, true});
  b.add("b1.add", "b1.conv2", "stem", "g1");
  b.conv("b2.conv1", "b1.add", {32, 2, 2, 0, {}, true, true});
  b.conv("b2.conv2", "b2.conv1", {32, 3, 1, 1, "g2", false, true});
  b.conv("b2.downsample", "b1.add", {32, 2, 2, 0, "g2", false, true});
  b.add("b2.add", "b2.conv2", "b2.downsample", "g2");
  b.pool("gap", "b2.add", image / 2, 1, 0);
  b.linear("head", "gap", classes, true, false);
  return b.finish();
}

std::vector<std::string> builtin_graph_names() { return {"resnet18", "resnet34", "vgg16", "toy-cnn"}; }

NetGraph builtin_graph(const std::string& name) {
  if (name == "resnet18") return resnet(name, {2, 2, 2, 2});
  if (name == "resnet34") return resnet(name, {3, 4, 6, 3});
  if (name == "vgg16") return vgg16();
  if (name == "toy-cnn") return toy_cnn_graph(32, 10);
  throw ConfigError("unknown builtin graph '" + name + "' (known: resnet18, resnet34, vgg16, toy-cnn)");
}

}  // namespace pcs
