#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

namespace pcs {

enum class NodeKind { conv, linear, pool, add, head };

std::string to_string(NodeKind kind);
NodeKind node_kind_from_string(const std::string& name);

/// One layer of a network description. Spatial extents follow the floor
/// arithmetic of the published architecture tables:
///   out = (in + 2 * padding - kernel) / stride + 1
struct GraphNode {
  std::string name;
  NodeKind kind = NodeKind::conv;
  std::size_t c_in = 0;
  std::size_t c_out = 0;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t h_in = 1, w_in = 1;
  std::size_t h_out = 1, w_out = 1;
  std::string group;                 // residual group tag, empty if none
  std::vector<std::string> inputs;   // producers; empty means the network input
  bool bias = false;                 // conv only; linear layers always carry a bias
  bool relu = false;                 // activation after the node; ignored by the cost model
};

struct NetGraph {
  std::string name;
  std::size_t input_channels = 3;
  std::size_t input_height = 224;
  std::size_t input_width = 224;
  std::vector<GraphNode> nodes;

  /// Throws ConfigError naming the offending node on any inconsistency.
  void validate() const;
  std::optional<std::size_t> find(const std::string& node_name) const;
  const GraphNode& at(const std::string& node_name) const;
};

/// Per-node output/input channel decisions after cross-layer propagation.
struct LayerPlan {
  std::string name;
  std::size_t out_total = 0;
  std::size_t in_total = 0;
  std::vector<std::size_t> out_keep;  // sorted indices into [0, out_total)
  std::vector<std::size_t> in_keep;   // sorted indices into the producer's channels
  bool scattered = false;             // outputs are written back at full width
  std::vector<std::size_t> visible;   // channels consumers of this node receive

  double width_ratio() const {
    return out_total ? static_cast<double>(out_keep.size()) / static_cast<double>(out_total) : 1.0;
  }
};

struct PrunePlan {
  std::vector<LayerPlan> layers;  // one per graph node, same order

  const LayerPlan& at(const std::string& node_name) const;
  const LayerPlan* find(const std::string& node_name) const;
};

}  // namespace pcs
