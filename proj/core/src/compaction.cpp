#include "pcs/compaction.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "pcs/errors.hpp"

namespace pcs {

ChannelMask ChannelMask::from_keep(std::size_t channels, std::span<const std::size_t> kept) {
  ChannelMask mask{std::vector<bool>(channels, false)};
  for (auto c : kept) {
    if (c >= channels) throw ConfigError("channel " + std::to_string(c) + " out of range for width " + std::to_string(channels));
    mask.keep[c] = true;
  }
  return mask;
}

std::size_t ChannelMask::kept_count() const { return static_cast<std::size_t>(std::count(keep.begin(), keep.end(), true)); }

std::vector<std::size_t> ChannelMask::kept_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t c = 0; c < keep.size(); ++c) {
    if (keep[c]) out.push_back(c);
  }
  return out;
}

ChannelMask make_mask(std::span<const float> running, float eps) {
  if (eps < 0.0f) throw ConfigError("make_mask: eps must be >= 0");
  ChannelMask mask{std::vector<bool>(running.size())};
  for (std::size_t c = 0; c < running.size(); ++c) {
    if (!std::isfinite(running[c]) || running[c] < 0.0f) {
      throw NumericError("make_mask: running salience must be finite and non-negative");
    }
    mask.keep[c] = running[c] > eps;
  }
  if (mask.kept_count() == 0) throw ConfigError("make_mask: every channel has zero running salience");
  return mask;
}

namespace {

Tensor gather_rows(const Tensor& t, const std::vector<std::size_t>& rows, bool requires_grad) {
  const std::size_t row = t.numel() / t.dim(0);
  std::vector<float> out;
  out.reserve(rows.size() * row);
  auto d = t.data();
  for (auto r : rows) out.insert(out.end(), d.begin() + r * row, d.begin() + (r + 1) * row);
  Shape shape = t.shape();
  shape[0] = rows.size();
  Tensor g(shape, std::move(out));
  g.set_requires_grad(requires_grad);
  return g;
}

/// Gathers along axis 1 of a [A, B, ...] tensor.
Tensor gather_columns(const Tensor& t, const std::vector<std::size_t>& cols) {
  const std::size_t a = t.dim(0), b = t.dim(1), inner = t.numel() / (a * b);
  std::vector<float> out;
  out.reserve(a * cols.size() * inner);
  auto d = t.data();
  for (std::size_t i = 0; i < a; ++i) {
    for (auto c : cols) {
      const auto* src = d.data() + (i * b + c) * inner;
      out.insert(out.end(), src, src + inner);
    }
  }
  Shape shape = t.shape();
  shape[1] = cols.size();
  Tensor g(shape, std::move(out));
  g.set_requires_grad(t.requires_grad());
  return g;
}

Tensor copy_param(const Tensor& t) {
  Tensor c = t.clone();
  c.set_requires_grad(t.requires_grad());
  return c;
}

std::vector<std::size_t> iota(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

}  // namespace

ConvBlock prune_conv(const ConvBlock& block, const ChannelMask& out_mask, const ChannelMask& in_mask) {
  if (out_mask.size() != block.out_channels() || in_mask.size() != block.in_channels()) {
    throw ShapeError("prune_conv: masks of width " + std::to_string(out_mask.size()) + "/" +
                     std::to_string(in_mask.size()) + " do not match weight " + shape_str(block.weight.shape()));
  }
  const auto out_keep = out_mask.kept_indices();
  const auto in_keep = in_mask.kept_indices();
  if (out_keep.empty() || in_keep.empty()) throw ConfigError("prune_conv: a mask keeps no channel");
  ConvBlock pruned;
  pruned.weight = gather_columns(gather_rows(block.weight, out_keep, block.weight.requires_grad()), in_keep);
  pruned.bias = gather_rows(block.bias, out_keep, block.bias.requires_grad());
  if (block.bn) {
    BatchNorm bn = *block.bn;
    bn.gamma = gather_rows(block.bn->gamma, out_keep, block.bn->gamma.requires_grad());
    bn.beta = gather_rows(block.bn->beta, out_keep, block.bn->beta.requires_grad());
    bn.running_mean = gather_rows(block.bn->running_mean, out_keep, false);
    bn.running_var = gather_rows(block.bn->running_var, out_keep, false);
    pruned.bn = std::move(bn);
  }
  pruned.activation = block.activation;
  pruned.stride = block.stride;
  pruned.padding = block.padding;
  return pruned;
}

PrunePlan propagate_masks(const NetGraph& graph, const std::map<std::string, ChannelMask>& masks) {
  graph.validate();
  for (const auto& [name, mask] : masks) {
    auto idx = graph.find(name);
    if (!idx) throw ConfigError("mask given for unknown node '" + name + "'");
    const auto& node = graph.nodes[*idx];
    if (node.kind != NodeKind::conv) throw ConfigError("node '" + name + "': masks apply to conv nodes only");
    if (mask.size() != node.c_out) {
      throw ConfigError("node '" + name + "': mask width " + std::to_string(mask.size()) + " != c_out " +
                        std::to_string(node.c_out));
    }
    if (mask.kept_count() == 0) throw ConfigError("node '" + name + "': mask keeps no channel");
  }

  PrunePlan plan;
  for (const auto& node : graph.nodes) {
    std::vector<std::size_t> upstream = iota(graph.input_channels);
    std::size_t upstream_width = graph.input_channels;
    if (!node.inputs.empty()) {
      const auto& producer = plan.at(node.inputs.front());
      upstream = producer.visible;
      upstream_width = producer.out_total;
    }
    LayerPlan lp;
    lp.name = node.name;
    lp.out_total = node.c_out;
    lp.in_total = upstream_width;
    switch (node.kind) {
      case NodeKind::conv: {
        lp.in_keep = upstream;
        auto it = masks.find(node.name);
        lp.out_keep = it != masks.end() ? it->second.kept_indices() : iota(node.c_out);
        lp.scattered = !node.group.empty();
        lp.visible = lp.scattered ? iota(node.c_out) : lp.out_keep;
        break;
      }
      case NodeKind::pool:
        lp.in_keep = upstream;
        lp.out_keep = upstream;
        lp.visible = upstream;
        break;
      case NodeKind::linear:
      case NodeKind::head:
        lp.in_keep = upstream;
        lp.out_keep = iota(node.c_out);
        lp.visible = lp.out_keep;
        break;
      case NodeKind::add:
        lp.in_keep = iota(node.c_in);
        lp.out_keep = iota(node.c_out);
        lp.scattered = true;
        lp.visible = lp.out_keep;
        break;
    }
    plan.layers.push_back(std::move(lp));
  }
  return plan;
}

std::map<std::string, ChannelMask> model_masks(const Model& model) {
  std::map<std::string, ChannelMask> out;
  for (const auto& layer : model.layers) {
    if (!layer.is_pcs()) continue;
    if (layer.mask.empty()) throw ConfigError("layer '" + layer.node.name + "' has no frozen mask; freeze the model first");
    ChannelMask mask{std::vector<bool>(layer.mask.size())};
    for (std::size_t c = 0; c < mask.size(); ++c) mask.keep[c] = layer.mask[c] != 0.0f;
    out.emplace(layer.node.name, std::move(mask));
  }
  return out;
}

std::string to_string(CompactMode mode) { return mode == CompactMode::static_scale ? "static" : "dynamic"; }

CompactMode compact_mode_from_string(const std::string& name) {
  if (name == "static") return CompactMode::static_scale;
  if (name == "dynamic") return CompactMode::dynamic_scale;
  throw ConfigError("unknown compaction mode '" + name + "' (expected static or dynamic)");
}

Model compact_network(const Model& model, const PrunePlan& plan, CompactMode mode) {
  if (model.compacted) throw ConfigError("compact_network: model is already compacted");
  if (model.policy == Policy::input_dependent && !model.pcs_layers().empty()) {
    throw ConfigError("compact_network: input-dependent selection has no static channel set");
  }
  if (!model.frozen && !model.pcs_layers().empty()) throw ConfigError("compact_network: freeze the selection first");
  if (plan.layers.size() != model.layers.size()) throw ConfigError("compact_network: plan and model differ in layer count");

  Model out;
  out.graph = model.graph;
  out.policy = model.policy;
  out.k_fraction = model.k_fraction;
  out.frozen = model.frozen;
  out.compacted = true;
  out.scale_source = mode == CompactMode::static_scale ? ScaleSource::running : ScaleSource::live;

  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const auto& src = model.layers[i];
    const auto& lp = plan.layers[i];
    const auto& node = src.node;
    if (lp.name != node.name) throw ConfigError("compact_network: plan layer '" + lp.name + "' != model layer '" + node.name + "'");
    ModelLayer dst;
    dst.node = node;
    switch (node.kind) {
      case NodeKind::conv: {
        if (lp.out_total != node.c_out || lp.in_total != node.c_in) {
          throw ConfigError("node '" + node.name + "': plan widths do not match the model");
        }
        if (src.is_pcs()) {
          std::vector<std::size_t> kept;
          for (std::size_t c = 0; c < src.mask.size(); ++c) {
            if (src.mask[c] != 0.0f) kept.push_back(c);
          }
          if (kept != lp.out_keep) throw ConfigError("node '" + node.name + "': plan keep-set differs from the frozen mask");
        }
        ConvBlock folded = src.conv.bn ? fold_batchnorm(src.conv) : src.conv;
        ConvBlock pruned = prune_conv(folded, ChannelMask::from_keep(node.c_out, lp.out_keep),
                                      ChannelMask::from_keep(node.c_in, lp.in_keep));
        if (src.is_pcs() && mode == CompactMode::static_scale) {
          const std::size_t filter = pruned.weight.numel() / pruned.out_channels();
          auto w = pruned.weight.mutable_data();
          auto b = pruned.bias.mutable_data();
          for (std::size_t o = 0; o < lp.out_keep.size(); ++o) {
            const float s = src.state->running[lp.out_keep[o]];
            for (std::size_t k = 0; k < filter; ++k) w[o * filter + k] *= s;
            b[o] *= s;
          }
        } else if (src.is_pcs()) {
          SalienceGenerator gen;
          gen.reduction = src.gen->reduction;
          gen.fc1 = {gather_columns(src.gen->fc1.weight, lp.in_keep), copy_param(src.gen->fc1.bias)};
          gen.fc2 = {gather_rows(src.gen->fc2.weight, lp.out_keep, true), gather_rows(src.gen->fc2.bias, lp.out_keep, true)};
          dst.gen = std::move(gen);
        }
        dst.conv = std::move(pruned);
        if (lp.scattered && lp.out_keep.size() != node.c_out) dst.scatter = lp.out_keep;
        break;
      }
      case NodeKind::linear:
      case NodeKind::head:
        dst.fc = {gather_columns(src.fc.weight, lp.in_keep), copy_param(src.fc.bias)};
        break;
      case NodeKind::pool:
      case NodeKind::add:
        break;
    }
    out.layers.push_back(std::move(dst));
  }
  return out;
}

CostReport model_cost(const Model& model) {
  CostReport report;
  report.graph = model.graph.name;
  for (const auto& layer : model.layers) {
    const auto& node = layer.node;
    NodeCost nc;
    nc.name = node.name;
    nc.kind = node.kind;
    Cost& c = nc.base;
    const Count spatial = node.h_out * node.w_out;
    switch (node.kind) {
      case NodeKind::conv: {
        const auto& w = layer.conv.weight;
        const Count layout = layer.scatter.empty() ? w.dim(0) : node.c_out;
        c.madds = conv_madds(w.dim(0), w.dim(1), w.dim(2), node.h_out, node.w_out);
        c.mac = w.numel() + layout * spatial;
        c.params = w.numel() + (node.bias ? layer.conv.bias.numel() : 0);
        break;
      }
      case NodeKind::linear:
      case NodeKind::head:
        c.madds = layer.fc.weight.numel();
        c.mac = layer.fc.weight.numel() + layer.fc.bias.numel();
        c.params = c.mac;
        break;
      case NodeKind::add:
        c.mac = node.c_out * spatial;
        break;
      case NodeKind::pool:
        break;
    }
    report.total += c;
    report.nodes.push_back(std::move(nc));
  }
  return report;
}

std::string plan_report_json(const NetGraph& graph, const PrunePlan& plan) {
  nlohmann::json j;
  j["graph"] = graph.name;
  auto& layers = j["layers"] = nlohmann::json::array();
  for (std::size_t i = 0; i < plan.layers.size(); ++i) {
    const auto& lp = plan.layers[i];
    const auto* node = i < graph.nodes.size() ? &graph.nodes[i] : nullptr;
    layers.push_back({{"name", lp.name},
                      {"kind", node ? to_string(node->kind) : std::string("unknown")},
                      {"out_kept", lp.out_keep.size()},
                      {"out_total", lp.out_total},
                      {"in_kept", lp.in_keep.size()},
                      {"in_total", lp.in_total},
                      {"width_ratio", lp.width_ratio()},
                      {"scattered", lp.scattered},
                      {"out_keep", lp.out_keep},
                      {"in_keep", lp.in_keep},
                      {"visible", lp.visible}});
  }
  return j.dump(2);
}

PrunePlan plan_from_json(const std::string& text) {
  PrunePlan plan;
  try {
    const auto j = nlohmann::json::parse(text);
    for (const auto& lj : j.at("layers")) {
      LayerPlan lp;
      lp.name = lj.at("name").get<std::string>();
      lp.out_total = lj.at("out_total").get<std::size_t>();
      lp.in_total = lj.at("in_total").get<std::size_t>();
      lp.out_keep = lj.at("out_keep").get<std::vector<std::size_t>>();
      lp.in_keep = lj.at("in_keep").get<std::vector<std::size_t>>();
      lp.scattered = lj.value("scattered", false);
      lp.visible = lj.value("visible", lp.out_keep);
      plan.layers.push_back(std::move(lp));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("plan file is malformed: ") + e.what());
  }
  return plan;
}

}  // namespace pcs
