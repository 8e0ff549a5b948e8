#include "pcs/costmodel.hpp"

#include <cstdio>
#include <iomanip>
#include <sstream>

#include <nlohmann/json.hpp>

#include "pcs/errors.hpp"

namespace pcs {

namespace {

Count checked_mul(Count a, Count b) {
  Count out;
  if (__builtin_mul_overflow(a, b, &out)) throw NumericError("cost model: count overflows 64 bits");
  return out;
}

Count checked_add(Count a, Count b) {
  Count out;
  if (__builtin_add_overflow(a, b, &out)) throw NumericError("cost model: count overflows 64 bits");
  return out;
}

void require_positive(std::initializer_list<Count> values, const char* what) {
  for (auto v : values) {
    if (v == 0) throw ConfigError(std::string(what) + ": all extents must be positive");
  }
}

struct NodeShape {
  Count c_in, c_out, layout_out, in_spatial;
};

Cost node_cost(const GraphNode& node, const NodeShape& s) {
  Cost cost;
  const Count out_spatial = checked_mul(node.h_out, node.w_out);
  switch (node.kind) {
    case NodeKind::conv: {
      cost.madds = conv_madds(s.c_out, s.c_in, node.kernel, node.h_out, node.w_out);
      const Count kernel_terms = checked_mul(checked_mul(s.c_in, s.c_out), checked_mul(node.kernel, node.kernel));
      cost.mac = checked_add(kernel_terms, checked_mul(s.layout_out, out_spatial));
      cost.params = checked_add(kernel_terms, node.bias ? s.c_out : 0);
      break;
    }
    case NodeKind::linear:
    case NodeKind::head: {
      const Count features = checked_mul(s.c_in, s.in_spatial);
      cost.madds = conv_madds(s.c_out, features, 1, 1, 1);
      cost.mac = layer_mac(s.c_out, features, 1, 1, 1);
      cost.params = checked_add(checked_mul(features, s.c_out), s.c_out);
      break;
    }
    case NodeKind::pool:
      break;
    case NodeKind::add:
      // The sum is a fresh feature map that is written once.
      cost.mac = checked_mul(s.layout_out, out_spatial);
      break;
  }
  return cost;
}

}  // namespace

Count conv_madds(Count c_out, Count c_in, Count kernel, Count h_out, Count w_out) {
  require_positive({c_out, c_in, kernel, h_out, w_out}, "conv_madds");
  return checked_mul(checked_mul(checked_mul(c_out, c_in), checked_mul(kernel, kernel)),
                     checked_mul(h_out, w_out));
}

Count layer_mac(Count c_out, Count c_in, Count kernel, Count h_out, Count w_out) {
  require_positive({c_out, c_in, kernel, h_out, w_out}, "layer_mac");
  return checked_add(checked_mul(checked_mul(c_in, c_out), checked_mul(kernel, kernel)),
                     checked_mul(c_out, checked_mul(h_out, w_out)));
}

Cost& Cost::operator+=(const Cost& other) {
  madds = checked_add(madds, other.madds);
  mac = checked_add(mac, other.mac);
  params = checked_add(params, other.params);
  return *this;
}

CostReport network_totals(const NetGraph& graph, const PrunePlan* plan) {
  graph.validate();
  if (plan && plan->layers.size() != graph.nodes.size()) {
    throw ConfigError("plan has " + std::to_string(plan->layers.size()) + " layers but graph '" + graph.name +
                      "' has " + std::to_string(graph.nodes.size()) + " nodes");
  }
  CostReport report;
  report.graph = graph.name;
  if (plan) report.pruned_total = Cost{};
  for (std::size_t i = 0; i < graph.nodes.size(); ++i) {
    const auto& node = graph.nodes[i];
    Count in_spatial = graph.input_height * graph.input_width;
    if (!node.inputs.empty()) {
      const auto& p = graph.at(node.inputs.front());
      in_spatial = p.h_out * p.w_out;
    }
    const bool flattened = node.kind == NodeKind::linear || node.kind == NodeKind::head;
    const Count full_in = flattened ? node.c_in / in_spatial : node.c_in;

    NodeCost nc;
    nc.name = node.name;
    nc.kind = node.kind;
    nc.base = node_cost(node, {full_in, node.c_out, node.c_out, in_spatial});
    report.total += nc.base;

    if (plan) {
      const auto& lp = plan->layers[i];
      if (lp.name != node.name) {
        throw ConfigError("plan layer '" + lp.name + "' does not line up with graph node '" + node.name + "'");
      }
      if (lp.out_keep.empty() || lp.in_keep.empty()) {
        throw ConfigError("plan for node '" + node.name + "' keeps no channels");
      }
      if (lp.out_total != node.c_out || lp.in_total != full_in) {
        throw ConfigError("plan for node '" + node.name + "' disagrees with the graph's channel counts");
      }
      const Count kept_out = lp.out_keep.size();
      const Count layout = lp.scattered ? node.c_out : kept_out;
      nc.pruned = node_cost(node, {lp.in_keep.size(), kept_out, layout, in_spatial});
      *report.pruned_total += *nc.pruned;
    }
    report.nodes.push_back(std::move(nc));
  }
  return report;
}

std::string format_giga(Count value) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1fG", static_cast<double>(value) / 1e9);
  return buf;
}

std::string format_mega(Count value) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1fM", static_cast<double>(value) / 1e6);
  return buf;
}

namespace {

nlohmann::json cost_json(const Cost& c) {
  return {{"madds", c.madds}, {"mac", c.mac}, {"params", c.params}};
}

}  // namespace

std::string cost_report_json(const CostReport& report) {
  nlohmann::json j;
  j["graph"] = report.graph;
  j["total"] = cost_json(report.total);
  j["total"]["madds_readable"] = format_giga(report.total.madds);
  j["total"]["mac_readable"] = format_mega(report.total.mac);
  j["total"]["params_readable"] = format_mega(report.total.params);
  if (report.pruned_total) {
    const auto& p = *report.pruned_total;
    j["pruned_total"] = cost_json(p);
    j["pruned_total"]["madds_readable"] = format_giga(p.madds);
    j["pruned_total"]["mac_readable"] = format_mega(p.mac);
    j["pruned_total"]["params_readable"] = format_mega(p.params);
    j["delta"] = {{"madds", report.total.madds - p.madds},
                  {"mac", report.total.mac - p.mac},
                  {"params", report.total.params - p.params}};
  }
  auto& nodes = j["nodes"] = nlohmann::json::array();
  for (const auto& n : report.nodes) {
    nlohmann::json row = {{"name", n.name}, {"kind", to_string(n.kind)}, {"base", cost_json(n.base)}};
    if (n.pruned) row["pruned"] = cost_json(*n.pruned);
    nodes.push_back(std::move(row));
  }
  return j.dump(2);
}

std::string cost_report_table(const CostReport& report) {
  std::ostringstream os;
  const bool pruned = report.pruned_total.has_value();
  os << std::left << std::setw(28) << "node" << std::setw(16) << "kind" << std::right << std::setw(16) << "MAdds"
     << std::setw(14) << "MAC" << std::setw(14) << "params";
  if (pruned) os << std::setw(16) << "MAdds'" << std::setw(14) << "MAC'" << std::setw(14) << "params'";
  os << '\n';
  for (const auto& n : report.nodes) {
    os << std::left << std::setw(28) << n.name << std::setw(16) << to_string(n.kind) << std::right
       << std::setw(16) << n.base.madds << std::setw(14) << n.base.mac << std::setw(14) << n.base.params;
    if (n.pruned) os << std::setw(16) << n.pruned->madds << std::setw(14) << n.pruned->mac << std::setw(14) << n.pruned->params;
    os << '\n';
  }
  os << report.graph << ": MAdds " << format_giga(report.total.madds) << ", MAC " << format_mega(report.total.mac)
     << ", params " << format_mega(report.total.params) << '\n';
  if (pruned) {
    const auto& p = *report.pruned_total;
    os << "pruned: MAdds " << format_giga(p.madds) << ", MAC " << format_mega(p.mac) << ", params "
       << format_mega(p.params) << '\n';
  }
  return os.str();
}

std::string graph_to_json(const NetGraph& graph) {
  nlohmann::json j;
  j["name"] = graph.name;
  j["input"] = {{"channels", graph.input_channels}, {"height", graph.input_height}, {"width", graph.input_width}};
  auto& nodes = j["nodes"] = nlohmann::json::array();
  for (const auto& n : graph.nodes) {
    nodes.push_back({{"name", n.name},     {"kind", to_string(n.kind)}, {"c_in", n.c_in},
                     {"c_out", n.c_out},   {"kernel", n.kernel},        {"stride", n.stride},
                     {"padding", n.padding}, {"h_in", n.h_in},          {"w_in", n.w_in},
                     {"h_out", n.h_out},   {"w_out", n.w_out},          {"group", n.group},
                     {"inputs", n.inputs}, {"bias", n.bias},         {"relu", n.relu}});
  }
  return j.dump(2);
}

NetGraph graph_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("graph file is not valid JSON: ") + e.what());
  }
  NetGraph graph;
  graph.name = j.value("name", std::string("graph"));
  if (j.contains("input")) {
    const auto& in = j["input"];
    graph.input_channels = in.value("channels", std::size_t{3});
    graph.input_height = in.value("height", std::size_t{224});
    graph.input_width = in.value("width", graph.input_height);
  }
  if (!j.contains("nodes") || !j["nodes"].is_array()) throw ConfigError("graph file needs a 'nodes' array");
  std::size_t index = 0;
  for (const auto& jn : j["nodes"]) {
    GraphNode n;
    n.name = jn.value("name", "#" + std::to_string(index));
    try {
      n.kind = node_kind_from_string(jn.at("kind").get<std::string>());
      n.c_in = jn.at("c_in").get<std::size_t>();
      n.c_out = jn.at("c_out").get<std::size_t>();
      n.kernel = jn.value("kernel", std::size_t{1});
      n.stride = jn.value("stride", std::size_t{1});
      n.padding = jn.value("padding", std::size_t{0});
      n.h_in = jn.value("h_in", std::size_t{1});
      n.w_in = jn.value("w_in", n.h_in);
      n.h_out = jn.value("h_out", std::size_t{1});
      n.w_out = jn.value("w_out", n.h_out);
      n.group = jn.value("group", std::string());
      n.inputs = jn.value("inputs", std::vector<std::string>{});
      n.bias = jn.value("bias", false);
      n.relu = jn.value("relu", false);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("node '" + n.name + "': " + e.what());
    } catch (const ConfigError& e) {
      throw ConfigError("node '" + n.name + "': " + e.what());
    }
    graph.nodes.push_back(std::move(n));
    ++index;
  }
  graph.validate();
  return graph;
}

}  // namespace pcs
