#include "pcs/netgraph.hpp"

#include <unordered_set>

#include "pcs/errors.hpp"

namespace pcs {

std::string to_string(NodeKind kind) {
  switch (kind) {
    case NodeKind::conv: return "conv";
    case NodeKind::linear: return "linear";
    case NodeKind::pool: return "pool";
    case NodeKind::add: return "add";
    case NodeKind::head: return "classifier-head";
  }
  return "unknown";
}

NodeKind node_kind_from_string(const std::string& name) {
  if (name == "conv") return NodeKind::conv;
  if (name == "linear") return NodeKind::linear;
  if (name == "pool") return NodeKind::pool;
  if (name == "add") return NodeKind::add;
  if (name == "classifier-head" || name == "head") return NodeKind::head;
  throw ConfigError("unknown node kind '" + name + "'");
}

namespace {

std::size_t floor_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t padding) {
  if (in + 2 * padding < kernel) return 0;
  return (in + 2 * padding - kernel) / stride + 1;
}

[[noreturn]] void fail(const GraphNode& node, const std::string& what) {
  throw ConfigError("node '" + node.name + "': " + what);
}

}  // namespace

void NetGraph::validate() const {
  if (nodes.empty()) throw ConfigError("graph '" + name + "' has no nodes");
  std::unordered_set<std::string> seen;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const auto& node = nodes[i];
    if (node.name.empty()) throw ConfigError("node #" + std::to_string(i) + " has no name");
    if (!seen.insert(node.name).second) fail(node, "duplicate name");
    if (node.c_in == 0 || node.c_out == 0) fail(node, "channel counts must be positive");
    if (node.kernel == 0 || node.stride == 0) fail(node, "kernel and stride must be positive");

    std::vector<const GraphNode*> producers;
    for (const auto& in : node.inputs) {
      auto idx = find(in);
      if (!idx || *idx >= i) fail(node, "producer '" + in + "' is not defined before this node");
      producers.push_back(&nodes[*idx]);
    }

    const bool is_add = node.kind == NodeKind::add;
    if (is_add && producers.size() != 2) fail(node, "add needs exactly two producers");
    if (!is_add && producers.size() > 1) fail(node, "only add nodes may have several producers");

    std::size_t src_c = input_channels, src_h = input_height, src_w = input_width;
    if (!producers.empty()) {
      src_c = producers[0]->c_out;
      src_h = producers[0]->h_out;
      src_w = producers[0]->w_out;
    }

    switch (node.kind) {
      case NodeKind::conv:
      case NodeKind::pool: {
        if (node.c_in != src_c) {
          fail(node, "c_in " + std::to_string(node.c_in) + " does not match producer width " + std::to_string(src_c));
        }
        if (node.h_in != src_h || node.w_in != src_w) fail(node, "input spatial size does not match producer");
        const auto ho = floor_extent(node.h_in, node.kernel, node.stride, node.padding);
        const auto wo = floor_extent(node.w_in, node.kernel, node.stride, node.padding);
        if (ho == 0 || wo == 0 || ho != node.h_out || wo != node.w_out) {
          fail(node, "output spatial size " + std::to_string(node.h_out) + "x" + std::to_string(node.w_out) +
                         " inconsistent with kernel/stride/padding (expected " + std::to_string(ho) + "x" +
                         std::to_string(wo) + ")");
        }
        if (node.kind == NodeKind::pool && node.c_out != node.c_in) fail(node, "pool must preserve channels");
        if (node.kind == NodeKind::pool && !node.group.empty()) {
          if (producers.empty() || producers[0]->group != node.group) {
            fail(node, "grouped pool must consume a member of the same residual group");
          }
        }
        break;
      }
      case NodeKind::linear:
      case NodeKind::head:
        if (node.c_in != src_c * src_h * src_w) {
          fail(node, "c_in " + std::to_string(node.c_in) + " does not match flattened producer size " +
                         std::to_string(src_c * src_h * src_w));
        }
        if (node.h_out != 1 || node.w_out != 1) fail(node, "linear output must be 1x1");
        if (!node.group.empty()) fail(node, "linear layers cannot join a residual group");
        break;
      case NodeKind::add:
        if (producers[0]->c_out != producers[1]->c_out || producers[0]->h_out != producers[1]->h_out ||
            producers[0]->w_out != producers[1]->w_out) {
          fail(node, "add producers disagree in shape");
        }
        if (node.c_in != src_c || node.c_out != src_c || node.h_out != src_h || node.w_out != src_w) {
          fail(node, "add shape must equal its producers' shape");
        }
        if (node.group.empty()) fail(node, "add must carry a residual group tag");
        for (const auto* p : producers) {
          if (p->group != node.group) {
            fail(node, "producer '" + p->name + "' is not tagged with residual group '" + node.group + "'");
          }
        }
        break;
    }
  }

  // Residual group members share one full width.
  std::vector<std::pair<std::string, std::size_t>> widths;
  for (const auto& node : nodes) {
    if (node.group.empty()) continue;
    bool found = false;
    for (const auto& [g, w] : widths) {
      if (g == node.group) {
        found = true;
        if (w != node.c_out) fail(node, "residual group '" + node.group + "' has mixed widths");
      }
    }
    if (!found) widths.emplace_back(node.group, node.c_out);
  }
}

std::optional<std::size_t> NetGraph::find(const std::string& node_name) const {
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (nodes[i].name == node_name) return i;
  }
  return std::nullopt;
}

const GraphNode& NetGraph::at(const std::string& node_name) const {
  auto idx = find(node_name);
  if (!idx) throw ConfigError("graph '" + name + "' has no node '" + node_name + "'");
  return nodes[*idx];
}

const LayerPlan* PrunePlan::find(const std::string& node_name) const {
  for (const auto& layer : layers) {
    if (layer.name == node_name) return &layer;
  }
  return nullptr;
}

const LayerPlan& PrunePlan::at(const std::string& node_name) const {
  const auto* layer = find(node_name);
  if (!layer) throw ConfigError("plan has no layer '" + node_name + "'");
  return *layer;
}

}  // namespace pcs
