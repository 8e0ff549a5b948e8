#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "pcs/costmodel.hpp"
#include "pcs/layers.hpp"
#include "pcs/model.hpp"
#include "pcs/netgraph.hpp"

namespace pcs {

struct ChannelMask {
  std::vector<bool> keep;

  static ChannelMask all(std::size_t channels) { return {std::vector<bool>(channels, true)}; }
  static ChannelMask from_keep(std::size_t channels, std::span<const std::size_t> kept);
  std::size_t size() const { return keep.size(); }
  std::size_t kept_count() const;
  std::vector<std::size_t> kept_indices() const;
};

/// keep[c] = |s-bar[c]| > eps. The default eps of 0 is an exact comparison;
/// zeros only come from hard-sigmoid saturation. Throws ConfigError if no
/// channel survives.
ChannelMask make_mask(std::span<const float> running, float eps = 0.0f);

/// Gathers kept output filters (rows) and kept input channels (columns).
/// Unfolded batch norm is gathered per output channel. Values are copied,
/// never recomputed.
ConvBlock prune_conv(const ConvBlock& block, const ChannelMask& out_mask, const ChannelMask& in_mask);

/// Walks the graph in order and derives every layer's input keep-set from
/// its producer. Conv nodes without an entry keep all outputs. Members of a
/// residual group scatter their outputs back to full width, so add nodes
/// and their consumers see every channel.
PrunePlan propagate_masks(const NetGraph& graph, const std::map<std::string, ChannelMask>& masks);

/// Frozen keep masks of the model's PCS layers, keyed by node name.
std::map<std::string, ChannelMask> model_masks(const Model& model);

enum class CompactMode { static_scale, dynamic_scale };

std::string to_string(CompactMode mode);
CompactMode compact_mode_from_string(const std::string& name);

/// Folds batch norm and removes pruned filters.
///
/// static_scale drops the salience generators and multiplies each kept
/// filter by its running salience; the result matches the frozen model
/// evaluated with ScaleSource::running. dynamic_scale keeps the generators,
/// gathered to the kept channels, and matches ScaleSource::live.
Model compact_network(const Model& model, const PrunePlan& plan, CompactMode mode);

/// Costs recomputed from the model's actual tensor shapes.
CostReport model_cost(const Model& model);

/// Per-layer kept/total channels, keep-sets and width ratio.
std::string plan_report_json(const NetGraph& graph, const PrunePlan& plan);
PrunePlan plan_from_json(const std::string& text);

}  // namespace pcs
