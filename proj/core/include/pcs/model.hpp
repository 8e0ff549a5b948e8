#pragma once

#include <cstddef>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "pcs/checkpoint.hpp"
#include "pcs/layers.hpp"
#include "pcs/netgraph.hpp"
#include "pcs/salience.hpp"
#include "pcs/shrinking.hpp"

namespace pcs {

/// How salience is turned into channel decisions during training.
enum class Policy { baseline, pcs, truncation, input_dependent };

std::string to_string(Policy policy);
Policy policy_from_string(const std::string& name);

/// Scale applied by a frozen PCS layer: the live generator output s(x) * m,
/// or the constant running salience s-bar * m.
enum class ScaleSource { live, running };

std::string to_string(ScaleSource source);
ScaleSource scale_source_from_string(const std::string& name);

struct ModelLayer {
  GraphNode node;                         // uncompacted description
  ConvBlock conv;                         // conv nodes
  std::optional<SalienceGenerator> gen;   // PCS conv layers
  std::optional<SalienceState> state;     // running salience of a PCS layer
  Linear fc;                              // linear and head nodes
  std::vector<float> mask;                // frozen keep mask (1/0), empty until freeze
  std::vector<std::size_t> scatter;       // output positions within node.c_out after compaction

  bool is_pcs() const { return gen.has_value(); }
};

struct ModelOptions {
  Policy policy = Policy::pcs;
  bool batch_norm = true;
  std::size_t reduction = SalienceGenerator::kDefaultReduction;
  float k_fraction = 0.5f;
  float alpha = 0.1f;
};

/// Per-forward record of the salience of every PCS layer, in layer order.
struct ForwardTrace {
  std::vector<std::size_t> layer;  // model layer index
  std::vector<Tensor> salience;    // live generator output s(x)
  std::vector<Tensor> effective;   // scale actually applied to the feature maps
  std::vector<Tensor> input;       // feature map the generator saw
};

struct Model {
  NetGraph graph;
  std::vector<ModelLayer> layers;  // parallel to graph.nodes
  Policy policy = Policy::pcs;
  float k_fraction = 0.5f;
  bool frozen = false;
  bool compacted = false;
  ScaleSource scale_source = ScaleSource::running;

  /// Conv nodes get batch norm and, unless the policy is baseline, a
  /// salience generator. Only global average pooling is supported.
  static Model build(const NetGraph& graph, const ModelOptions& options, std::mt19937& rng);

  Tensor forward(const Tensor& x, Mode mode, ForwardTrace* trace = nullptr);

  std::vector<std::size_t> pcs_layers() const;
  std::vector<Tensor> weight_parameters() const;     // conv, BN affine, linear
  std::vector<Tensor> generator_parameters() const;  // salience generators

  /// Fixes the selection: PCS layers keep the channels with nonzero s-bar,
  /// truncation layers drop the K channels of lowest s-bar. Input-dependent
  /// layers keep choosing per input.
  void freeze();
};

/// [N,C] effective salience zero pattern of one sample at one PCS layer.
std::vector<bool> zero_set(const Tensor& effective, std::size_t sample);

Checkpoint save_model(const Model& model);
Model load_model(const Checkpoint& ckpt);

}  // namespace pcs
