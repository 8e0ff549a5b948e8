#include "pcs/model.hpp"

#include <cstdio>

#include <nlohmann/json.hpp>

#include "pcs/compaction.hpp"
#include "pcs/costmodel.hpp"
#include "pcs/errors.hpp"
#include "pcs/ops.hpp"

namespace pcs {

std::string to_string(Policy policy) {
  switch (policy) {
    case Policy::baseline: return "baseline";
    case Policy::pcs: return "pcs";
    case Policy::truncation: return "truncation";
    case Policy::input_dependent: return "input-dependent";
  }
  return "unknown";
}

Policy policy_from_string(const std::string& name) {
  if (name == "baseline") return Policy::baseline;
  if (name == "pcs") return Policy::pcs;
  if (name == "truncation") return Policy::truncation;
  if (name == "input-dependent") return Policy::input_dependent;
  throw ConfigError("unknown mode '" + name + "' (expected pcs, truncation, input-dependent or baseline)");
}

std::string to_string(ScaleSource source) { return source == ScaleSource::live ? "live" : "running"; }

ScaleSource scale_source_from_string(const std::string& name) {
  if (name == "live") return ScaleSource::live;
  if (name == "running") return ScaleSource::running;
  throw ConfigError("unknown scale source '" + name + "'");
}

namespace {

void check_supported(const GraphNode& node) {
  if (node.kind == NodeKind::pool && (node.h_out != 1 || node.w_out != 1 || node.kernel != node.h_in ||
                                      node.h_in != node.w_in || node.padding != 0)) {
    throw ConfigError("node '" + node.name + "': only global average pooling is supported by the model");
  }
  if ((node.kind == NodeKind::linear || node.kind == NodeKind::head) && (node.h_in != 1 || node.w_in != 1)) {
    throw ConfigError("node '" + node.name + "': linear layers must follow a global pooling or linear node");
  }
}

std::size_t producer_index(const NetGraph& graph, const GraphNode& node, std::size_t which) {
  return *graph.find(node.inputs.at(which));
}

Tensor effective_salience(const Model& model, const ModelLayer& layer, const Tensor& s) {
  if (model.compacted) return s;
  if (!model.frozen) {
    return model.policy == Policy::truncation ? truncate_lowest(s, model.k_fraction) : s;
  }
  if (model.policy == Policy::input_dependent) return truncate_lowest(s, model.k_fraction);
  if (layer.mask.size() != s.dim(1)) {
    throw ConfigError("layer '" + layer.node.name + "' is frozen without a mask");
  }
  if (model.scale_source == ScaleSource::live) return ops::column_mul(s, layer.mask);
  const std::size_t n = s.dim(0), c = s.dim(1);
  std::vector<float> scale(n * c);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < c; ++j) scale[i * c + j] = layer.state->running[j] * layer.mask[j];
  }
  return Tensor(Shape{n, c}, std::move(scale));
}

}  // namespace

Model Model::build(const NetGraph& graph, const ModelOptions& options, std::mt19937& rng) {
  graph.validate();
  if (graph.nodes.back().kind != NodeKind::head) throw ConfigError("graph '" + graph.name + "' must end in a head");
  ShrinkConfig shrink;
  shrink.k_fraction = options.k_fraction;
  shrink.alpha = options.alpha;
  shrink.validate();

  Model model;
  model.graph = graph;
  model.policy = options.policy;
  model.k_fraction = options.k_fraction;
  for (const auto& node : graph.nodes) {
    check_supported(node);
    ModelLayer layer;
    layer.node = node;
    switch (node.kind) {
      case NodeKind::conv:
        layer.conv = ConvBlock::init(node.c_in, node.c_out, node.kernel, node.stride, node.padding, options.batch_norm,
                                     node.relu ? Activation::relu : Activation::none, rng);
        if (options.policy != Policy::baseline) {
          layer.gen = SalienceGenerator::init(node.c_in, node.c_out, rng, options.reduction);
          layer.state = SalienceState::init(node.c_out, options.alpha, shrink_count(shrink, node.c_out));
        }
        break;
      case NodeKind::linear:
      case NodeKind::head:
        layer.fc = Linear::init(node.c_in, node.c_out, rng);
        break;
      case NodeKind::pool:
      case NodeKind::add:
        break;
    }
    model.layers.push_back(std::move(layer));
  }
  return model;
}

Tensor Model::forward(const Tensor& x, Mode mode, ForwardTrace* trace) {
  if (x.ndim() != 4 || x.dim(1) != graph.input_channels || x.dim(2) != graph.input_height ||
      x.dim(3) != graph.input_width) {
    throw ShapeError("model '" + graph.name + "' expects [N," + std::to_string(graph.input_channels) + "," +
                     std::to_string(graph.input_height) + "," + std::to_string(graph.input_width) + "] input, got " +
                     shape_str(x.shape()));
  }
  std::vector<Tensor> acts(layers.size());
  for (std::size_t i = 0; i < layers.size(); ++i) {
    auto& layer = layers[i];
    const auto& node = layer.node;
    const Tensor& in = node.inputs.empty() ? x : acts[producer_index(graph, node, 0)];
    Tensor y;
    switch (node.kind) {
      case NodeKind::conv:
        y = conv_block_forward(layer.conv, in, mode);
        if (layer.gen) {
          Tensor s = generate_salience(*layer.gen, in);
          Tensor eff = effective_salience(*this, layer, s);
          y = reweigh(y, eff);
          if (trace) {
            trace->layer.push_back(i);
            trace->salience.push_back(s);
            trace->effective.push_back(eff);
            trace->input.push_back(in);
          }
        }
        if (!layer.scatter.empty()) y = ops::scatter_channels(y, layer.scatter, node.c_out);
        break;
      case NodeKind::pool:
        y = ops::gap(in);
        break;
      case NodeKind::add:
        y = residual_add(in, acts[producer_index(graph, node, 1)]);
        if (node.relu) y = ops::relu(y);
        break;
      case NodeKind::linear:
      case NodeKind::head:
        y = linear_forward(layer.fc, in);
        if (node.relu) y = ops::relu(y);
        break;
    }
    acts[i] = std::move(y);
  }
  return acts.back();
}

std::vector<std::size_t> Model::pcs_layers() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].is_pcs()) out.push_back(i);
  }
  return out;
}

std::vector<Tensor> Model::weight_parameters() const {
  std::vector<Tensor> out;
  for (const auto& layer : layers) {
    if (layer.node.kind == NodeKind::conv) {
      for (auto& p : parameters(layer.conv)) out.push_back(p);
    } else if (layer.node.kind == NodeKind::linear || layer.node.kind == NodeKind::head) {
      out.push_back(layer.fc.weight);
      out.push_back(layer.fc.bias);
    }
  }
  return out;
}

std::vector<Tensor> Model::generator_parameters() const {
  std::vector<Tensor> out;
  for (const auto& layer : layers) {
    if (layer.gen) {
      for (auto& p : parameters(*layer.gen)) out.push_back(p);
    }
  }
  return out;
}

void Model::freeze() {
  if (compacted) throw ConfigError("freeze: model is already compacted");
  for (auto& layer : layers) {
    if (!layer.is_pcs()) continue;
    const auto& running = layer.state->running;
    layer.mask.assign(running.size(), 1.0f);
    if (policy == Policy::pcs) {
      const auto mask = make_mask(running);
      for (std::size_t c = 0; c < mask.size(); ++c) layer.mask[c] = mask.keep[c] ? 1.0f : 0.0f;
    } else if (policy == Policy::truncation) {
      for (auto c : lowest_indices(running, layer.state->k)) layer.mask[c] = 0.0f;
    }
    layer.state->last_selection = lowest_indices(running, layer.state->k);
  }
  frozen = true;
}

std::vector<bool> zero_set(const Tensor& effective, std::size_t sample) {
  if (effective.ndim() != 2 || sample >= effective.dim(0)) {
    throw ShapeError("zero_set: sample out of range for " + shape_str(effective.shape()));
  }
  const std::size_t c = effective.dim(1);
  auto row = effective.data().subspan(sample * c, c);
  std::vector<bool> out(c);
  for (std::size_t j = 0; j < c; ++j) out[j] = row[j] == 0.0f;
  return out;
}

namespace {

std::string prefix(std::size_t index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "L%02zu.", index);
  return buf;
}

Tensor trainable(Tensor t) {
  t.set_requires_grad(true);
  return t;
}

}  // namespace

Checkpoint save_model(const Model& model) {
  Checkpoint ckpt;
  nlohmann::json meta;
  meta["kind"] = "pcs-model";
  meta["graph"] = nlohmann::json::parse(graph_to_json(model.graph));
  meta["policy"] = to_string(model.policy);
  meta["k_fraction"] = model.k_fraction;
  meta["frozen"] = model.frozen;
  meta["compacted"] = model.compacted;
  meta["scale_source"] = to_string(model.scale_source);
  auto& layers = meta["layers"] = nlohmann::json::array();
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const auto& layer = model.layers[i];
    const std::string p = prefix(i);
    nlohmann::json lj = {{"name", layer.node.name}};
    if (layer.node.kind == NodeKind::conv) {
      ckpt.add(p + "conv.weight", layer.conv.weight);
      ckpt.add(p + "conv.bias", layer.conv.bias);
      lj["bn"] = layer.conv.bn.has_value();
      if (layer.conv.bn) {
        const auto& bn = *layer.conv.bn;
        lj["bn_eps"] = bn.eps;
        lj["bn_momentum"] = bn.momentum;
        ckpt.add(p + "bn.gamma", bn.gamma);
        ckpt.add(p + "bn.beta", bn.beta);
        ckpt.add(p + "bn.running_mean", bn.running_mean);
        ckpt.add(p + "bn.running_var", bn.running_var);
      }
      lj["gen"] = layer.gen.has_value();
      if (layer.gen) {
        lj["reduction"] = layer.gen->reduction;
        ckpt.add(p + "gen.fc1.weight", layer.gen->fc1.weight);
        ckpt.add(p + "gen.fc1.bias", layer.gen->fc1.bias);
        ckpt.add(p + "gen.fc2.weight", layer.gen->fc2.weight);
        ckpt.add(p + "gen.fc2.bias", layer.gen->fc2.bias);
      }
      if (layer.state) {
        const auto& st = *layer.state;
        lj["state"] = {{"alpha", st.alpha}, {"k", st.k}, {"selection", st.last_selection}};
        ckpt.add(p + "state.running", Tensor(Shape{st.running.size()}, st.running));
      }
      if (!layer.mask.empty()) ckpt.add(p + "mask", Tensor(Shape{layer.mask.size()}, layer.mask));
      if (!layer.scatter.empty()) lj["scatter"] = layer.scatter;
    } else if (layer.node.kind == NodeKind::linear || layer.node.kind == NodeKind::head) {
      ckpt.add(p + "fc.weight", layer.fc.weight);
      ckpt.add(p + "fc.bias", layer.fc.bias);
    }
    layers.push_back(std::move(lj));
  }
  ckpt.meta = meta.dump(1);
  return ckpt;
}

Model load_model(const Checkpoint& ckpt) {
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(ckpt.meta);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("checkpoint meta is not valid JSON: ") + e.what());
  }
  if (meta.value("kind", std::string()) != "pcs-model") throw ConfigError("checkpoint does not hold a pcs model");
  Model model;
  try {
    model.graph = graph_from_json(meta.at("graph").dump());
    model.policy = policy_from_string(meta.at("policy").get<std::string>());
    model.k_fraction = meta.at("k_fraction").get<float>();
    model.frozen = meta.at("frozen").get<bool>();
    model.compacted = meta.at("compacted").get<bool>();
    model.scale_source = scale_source_from_string(meta.at("scale_source").get<std::string>());
    const auto& layers = meta.at("layers");
    if (layers.size() != model.graph.nodes.size()) throw ConfigError("checkpoint layer count does not match graph");
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const auto& lj = layers[i];
      const std::string p = prefix(i);
      ModelLayer layer;
      layer.node = model.graph.nodes[i];
      check_supported(layer.node);
      if (layer.node.kind == NodeKind::conv) {
        auto& conv = layer.conv;
        conv.weight = trainable(ckpt.get(p + "conv.weight"));
        conv.bias = trainable(ckpt.get(p + "conv.bias"));
        conv.activation = layer.node.relu ? Activation::relu : Activation::none;
        conv.stride = layer.node.stride;
        conv.padding = layer.node.padding;
        if (lj.at("bn").get<bool>()) {
          BatchNorm bn;
          bn.gamma = trainable(ckpt.get(p + "bn.gamma"));
          bn.beta = trainable(ckpt.get(p + "bn.beta"));
          bn.running_mean = ckpt.get(p + "bn.running_mean");
          bn.running_var = ckpt.get(p + "bn.running_var");
          bn.eps = lj.at("bn_eps").get<float>();
          bn.momentum = lj.at("bn_momentum").get<float>();
          conv.bn = std::move(bn);
        }
        if (lj.at("gen").get<bool>()) {
          SalienceGenerator gen;
          gen.reduction = lj.at("reduction").get<std::size_t>();
          gen.fc1 = {trainable(ckpt.get(p + "gen.fc1.weight")), trainable(ckpt.get(p + "gen.fc1.bias"))};
          gen.fc2 = {trainable(ckpt.get(p + "gen.fc2.weight")), trainable(ckpt.get(p + "gen.fc2.bias"))};
          layer.gen = std::move(gen);
        }
        if (lj.contains("state")) {
          SalienceState st;
          const auto running = ckpt.get(p + "state.running").data();
          st.running.assign(running.begin(), running.end());
          st.alpha = lj["state"].at("alpha").get<float>();
          st.k = lj["state"].at("k").get<std::size_t>();
          st.last_selection = lj["state"].at("selection").get<std::vector<std::size_t>>();
          layer.state = std::move(st);
        }
        if (ckpt.contains(p + "mask")) {
          const auto mask = ckpt.get(p + "mask").data();
          layer.mask.assign(mask.begin(), mask.end());
        }
        layer.scatter = lj.value("scatter", std::vector<std::size_t>{});
      } else if (layer.node.kind == NodeKind::linear || layer.node.kind == NodeKind::head) {
        layer.fc = {trainable(ckpt.get(p + "fc.weight")), trainable(ckpt.get(p + "fc.bias"))};
      }
      model.layers.push_back(std::move(layer));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("checkpoint meta is malformed: ") + e.what());
  }
  return model;
}

}  // namespace pcs
