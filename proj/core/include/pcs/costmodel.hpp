#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "pcs/netgraph.hpp"

namespace pcs {

using Count = std::uint64_t;

/// C_out * C_in * K * K * H_out * W_out, overflow-checked.
Count conv_madds(Count c_out, Count c_in, Count kernel, Count h_out, Count w_out);

/// Kernel footprint C_in * C_out * K^2 plus output feature maps
/// C_out * H_out * W_out. The input term is omitted because it is the
/// previous layer's output term.
Count layer_mac(Count c_out, Count c_in, Count kernel, Count h_out, Count w_out);

struct Cost {
  Count madds = 0;
  Count mac = 0;
  Count params = 0;

  Cost& operator+=(const Cost& other);
  friend bool operator==(const Cost&, const Cost&) = default;
};

struct NodeCost {
  std::string name;
  NodeKind kind = NodeKind::conv;
  Cost base;
  std::optional<Cost> pruned;
};

struct CostReport {
  std::string graph;
  std::vector<NodeCost> nodes;
  Cost total;
  std::optional<Cost> pruned_total;
};

/// Exact per-node and total costs. With a plan, pruned counterparts use the
/// kept channel counts; nodes in a residual group keep their full-width
/// output-feature-map term.
CostReport network_totals(const NetGraph& graph, const PrunePlan* plan = nullptr);

/// resnet18 | resnet34 | vgg16 (224x224) and toy-cnn (32x32).
NetGraph builtin_graph(const std::string& name);
std::vector<std::string> builtin_graph_names();

/// Six conv blocks of widths 16-32-32-64-64-64 (3x3 convs, 2x2 stride-2
/// downsampling), global average pooling and a linear head. `image` must be
/// divisible by 4.
NetGraph toy_cnn_graph(std::size_t image, std::size_t classes);

/// Two residual stages (16 and 32 channels) with a strided shortcut, for
/// exercising residual groups at toy scale.
NetGraph toy_resnet_graph(std::size_t image, std::size_t classes);

/// 1 decimal place in units of 1e9 / 1e6, e.g. "1.8G", "14.5M".
std::string format_giga(Count value);
std::string format_mega(Count value);

std::string cost_report_json(const CostReport& report);
std::string cost_report_table(const CostReport& report);

std::string graph_to_json(const NetGraph& graph);
/// Parses and validates; errors name the offending node.
NetGraph graph_from_json(const std::string& text);

}  // namespace pcs
