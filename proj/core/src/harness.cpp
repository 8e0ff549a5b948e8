#include "pcs/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "pcs/costmodel.hpp"
#include "pcs/errors.hpp"
#include "pcs/ops.hpp"
#include "pcs/optim.hpp"

namespace pcs {

void DatasetSpec::validate() const {
  if (classes < 2) throw ConfigError("dataset: classes must be >= 2");
  if (train_samples == 0 || val_samples == 0) throw ConfigError("dataset: sample counts must be positive");
  if (train_samples % classes || val_samples % classes) {
    throw ConfigError("dataset: sample counts must be multiples of the class count");
  }
  if (image_size == 0 || channels == 0) throw ConfigError("dataset: image extents must be positive");
  if (!(noise >= 0.0f) || !std::isfinite(noise)) throw ConfigError("dataset: noise must be finite and >= 0");
}

Tensor Dataset::images_at(std::span<const std::size_t> indices) const {
  const std::size_t per = channels * size * size;
  std::vector<float> out(indices.size() * per);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    std::copy_n(images.begin() + static_cast<std::ptrdiff_t>(indices[i] * per), per, out.begin() + static_cast<std::ptrdiff_t>(i * per));
  }
  return Tensor(Shape{indices.size(), channels, size, size}, std::move(out));
}

std::vector<int> Dataset::labels_at(std::span<const std::size_t> indices) const {
  std::vector<int> out(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) out[i] = labels[indices[i]];
  return out;
}

namespace {

Dataset make_split(const DatasetSpec& spec, const std::vector<std::vector<float>>& templates, std::size_t count,
                   std::mt19937_64& rng) {
  std::normal_distribution<float> noise(0.0f, 1.0f);
  Dataset d;
  d.channels = spec.channels;
  d.size = spec.image_size;
  const std::size_t per = spec.channels * spec.image_size * spec.image_size;
  d.images.resize(count * per);
  d.labels.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t label = i % spec.classes;
    d.labels[i] = static_cast<int>(label);
    for (std::size_t k = 0; k < per; ++k) d.images[i * per + k] = templates[label][k] + spec.noise * noise(rng);
  }
  return d;
}

}  // namespace

SyntheticData synth_dataset(const DatasetSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> normal(0.0f, 1.0f);
  const std::size_t per = spec.channels * spec.image_size * spec.image_size;
  std::vector<std::vector<float>> templates(spec.classes, std::vector<float>(per));
  for (auto& t : templates) {
    for (auto& v : t) v = normal(rng);
  }
  SyntheticData data;
  data.train = make_split(spec, templates, spec.train_samples, rng);
  data.val = make_split(spec, templates, spec.val_samples, rng);
  return data;
}

RunConfig RunConfig::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  RunConfig c;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto& key = it.key();
    const auto& v = it.value();
    try {
      if (key == "seed") c.seed = v.get<std::uint64_t>();
      else if (key == "arch") c.arch = v.get<std::string>();
      else if (key == "classes") c.data.classes = v.get<std::size_t>();
      else if (key == "train_samples") c.data.train_samples = v.get<std::size_t>();
      else if (key == "val_samples") c.data.val_samples = v.get<std::size_t>();
      else if (key == "image_size") c.data.image_size = v.get<std::size_t>();
      else if (key == "noise") c.data.noise = v.get<float>();
      else if (key == "lambda_base") c.shrink.lambda_base = v.get<float>();
      else if (key == "t_max") c.shrink.t_max = v.get<std::size_t>();
      else if (key == "fine_tune_epochs") c.shrink.fine_tune_epochs = v.get<std::size_t>();
      else if (key == "k_fraction") c.shrink.k_fraction = v.get<float>();
      else if (key == "alpha") c.shrink.alpha = v.get<float>();
      else if (key == "mode") c.mode = policy_from_string(v.get<std::string>());
      else if (key == "batch_size") c.batch_size = v.get<std::size_t>();
      else if (key == "lr") c.lr = v.get<float>();
      else if (key == "lr_decay") c.lr_decay = v.get<float>();
      else if (key == "lr_milestones") c.lr_milestones = v.get<std::vector<std::size_t>>();
      else if (key == "momentum") c.momentum = v.get<float>();
      else if (key == "weight_decay") c.weight_decay = v.get<float>();
      else if (key == "batch_norm") c.batch_norm = v.get<bool>();
      else if (key == "reduction") c.reduction = v.get<std::size_t>();
      else if (key == "task_loss") c.task_loss = v.get<bool>();
      else if (key == "train_generators_only") c.train_generators_only = v.get<bool>();
      else throw ConfigError("unknown config key '" + key + "'");
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("config key '" + key + "': " + e.what());
    }
  }
  c.validate();
  return c;
}

std::string RunConfig::to_json() const {
  nlohmann::json j = {{"seed", seed},
                      {"arch", arch},
                      {"classes", data.classes},
                      {"train_samples", data.train_samples},
                      {"val_samples", data.val_samples},
                      {"image_size", data.image_size},
                      {"noise", data.noise},
                      {"lambda_base", shrink.lambda_base},
                      {"t_max", shrink.t_max},
                      {"fine_tune_epochs", shrink.fine_tune_epochs},
                      {"k_fraction", shrink.k_fraction},
                      {"alpha", shrink.alpha},
                      {"mode", to_string(mode)},
                      {"batch_size", batch_size},
                      {"lr", lr},
                      {"lr_decay", lr_decay},
                      {"lr_milestones", lr_milestones},
                      {"momentum", momentum},
                      {"weight_decay", weight_decay},
                      {"batch_norm", batch_norm},
                      {"reduction", reduction},
                      {"task_loss", task_loss},
                      {"train_generators_only", train_generators_only}};
  return j.dump(2);
}

void RunConfig::validate() const {
  data.validate();
  shrink.validate();
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(lr > 0.0f)) throw ConfigError("lr must be positive");
  if (!(momentum >= 0.0f && momentum < 1.0f)) throw ConfigError("momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0f)) throw ConfigError("weight_decay must be >= 0");
  if (!(lr_decay > 0.0f)) throw ConfigError("lr_decay must be positive");
  if (arch != "toy-cnn" && arch != "toy-resnet") throw ConfigError("arch must be toy-cnn or toy-resnet, got '" + arch + "'");
  if (data.channels != 3) throw ConfigError("toy architectures take 3-channel images");
  if (train_generators_only && mode == Policy::baseline) throw ConfigError("baseline mode has no generators to train");
  architecture(*this);
}

float RunConfig::lr_at(std::size_t epoch) const {
  std::vector<std::size_t> milestones = lr_milestones;
  if (milestones.empty()) {
    const std::size_t total = total_epochs();
    milestones = {total / 2, total * 3 / 4};
  }
  float rate = lr;
  for (auto m : milestones) {
    if (m > 0 && epoch >= m) rate *= lr_decay;
  }
  return rate;
}

std::string run_config_help() {
  const RunConfig d;
  std::ostringstream os;
  os << "config keys (JSON object, defaults in brackets):\n"
     << "  seed [" << d.seed << "]  arch [toy-cnn | toy-resnet]  mode [pcs | truncation | input-dependent | baseline]\n"
     << "  classes [" << d.data.classes << "]  train_samples [" << d.data.train_samples << "]  val_samples ["
     << d.data.val_samples << "]  image_size [" << d.data.image_size << "]  noise [" << d.data.noise << "]\n"
     << "  lambda_base [" << d.shrink.lambda_base << "]  t_max [" << d.shrink.t_max << "]  fine_tune_epochs ["
     << d.shrink.fine_tune_epochs << "]  k_fraction [" << d.shrink.k_fraction << "]  alpha [" << d.shrink.alpha << "]\n"
     << "  batch_size [" << d.batch_size << "]  lr [" << d.lr << "]  lr_decay [" << d.lr_decay
     << "]  lr_milestones [50% and 75% of all epochs]\n"
     << "  momentum [" << d.momentum << "]  weight_decay [" << d.weight_decay << ", generators exempt]  batch_norm [true]"
     << "  reduction [" << d.reduction << "]\n"
     << "  task_loss [true]  train_generators_only [false]\n";
  return os.str();
}

NetGraph architecture(const RunConfig& cfg) {
  if (cfg.arch == "toy-cnn") return toy_cnn_graph(cfg.data.image_size, cfg.data.classes);
  if (cfg.arch == "toy-resnet") return toy_resnet_graph(cfg.data.image_size, cfg.data.classes);
  throw ConfigError("unknown architecture '" + cfg.arch + "'");
}

namespace {

std::vector<float> batch_mean(const Tensor& s) {
  const std::size_t n = s.dim(0), c = s.dim(1);
  std::vector<float> out(c, 0.0f);
  auto d = s.data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < c; ++j) out[j] += d[i * c + j];
  }
  for (auto& v : out) v /= static_cast<float>(n);
  return out;
}

std::size_t count_zeros(const std::vector<float>& v) {
  return static_cast<std::size_t>(std::count(v.begin(), v.end(), 0.0f));
}

std::vector<std::size_t> layer_zeros(const Model& model) {
  std::vector<std::size_t> out;
  for (auto i : model.pcs_layers()) out.push_back(count_zeros(model.layers[i].state->running));
  return out;
}

std::size_t correct(const Tensor& logits, const std::vector<int>& labels, std::vector<int>* predictions) {
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  auto d = logits.data();
  std::size_t hits = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = d.subspan(i * k, k);
    const int pred = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
    if (predictions) predictions->push_back(pred);
    hits += pred == labels[i];
  }
  return hits;
}

[[noreturn]] void abort_non_finite(const Model& model, std::size_t epoch, std::size_t step, double task, double shrink) {
  std::ostringstream os;
  os << "non-finite loss at epoch " << epoch << " step " << step << " (task " << task << ", shrink " << shrink << ");";
  for (auto i : model.pcs_layers()) {
    const auto& r = model.layers[i].state->running;
    os << ' ' << model.layers[i].node.name << " s-bar [" << *std::min_element(r.begin(), r.end()) << ", "
       << *std::max_element(r.begin(), r.end()) << "]";
  }
  throw NumericError(os.str());
}

}  // namespace

EvalResult evaluate(Model& model, const Dataset& data, std::size_t batch_size) {
  NoGradGuard guard;
  EvalResult result;
  double loss = 0.0;
  std::size_t hits = 0;
  for (std::size_t start = 0; start < data.count(); start += batch_size) {
    const std::size_t end = std::min(start + batch_size, data.count());
    std::vector<std::size_t> idx(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const auto labels = data.labels_at(idx);
    Tensor logits = model.forward(data.images_at(idx), Mode::eval);
    loss += static_cast<double>(ops::softmax_cross_entropy(logits, labels).item()) * static_cast<double>(idx.size());
    hits += correct(logits, labels, &result.predictions);
  }
  result.loss = loss / static_cast<double>(data.count());
  result.accuracy = static_cast<double>(hits) / static_cast<double>(data.count());
  return result;
}

double mask_agreement(Model& model, const Dataset& data, std::size_t samples) {
  samples = std::min(samples, data.count());
  if (samples == 0) throw ConfigError("mask_agreement: no samples");
  NoGradGuard guard;
  std::vector<std::size_t> idx(samples);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  ForwardTrace trace;
  model.forward(data.images_at(idx), Mode::eval, &trace);
  if (trace.effective.empty()) return 1.0;
  std::map<std::vector<bool>, std::size_t> patterns;
  for (std::size_t n = 0; n < samples; ++n) {
    std::vector<bool> joint;
    for (const auto& eff : trace.effective) {
      const auto z = zero_set(eff, n);
      joint.insert(joint.end(), z.begin(), z.end());
    }
    ++patterns[joint];
  }
  std::size_t best = 0;
  for (const auto& [pattern, count] : patterns) best = std::max(best, count);
  return static_cast<double>(best) / static_cast<double>(samples);
}

double variance(const std::vector<double>& values) {
  if (values.empty()) return 0.0;
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  double acc = 0.0;
  for (double v : values) acc += (v - mean) * (v - mean);
  return acc / static_cast<double>(values.size());
}

TrainResult train(const RunConfig& cfg, const TrainHooks& hooks) {
  cfg.validate();
  const auto data = synth_dataset(cfg.data, cfg.seed);
  std::mt19937 init_rng(static_cast<std::mt19937::result_type>(cfg.seed));
  ModelOptions options;
  options.policy = cfg.mode;
  options.batch_norm = cfg.batch_norm;
  options.reduction = cfg.reduction;
  options.k_fraction = cfg.shrink.k_fraction;
  options.alpha = cfg.shrink.alpha;

  TrainResult result;
  result.model = Model::build(architecture(cfg), options, init_rng);
  Model& model = result.model;
  const auto pcs = model.pcs_layers();
  for (auto i : pcs) result.pcs_layer_names.push_back(model.layers[i].node.name);

  Sgd sgd;
  if (cfg.train_generators_only) {
    std::vector<Tensor> fc2;
    for (auto i : pcs) {
      fc2.push_back(model.layers[i].gen->fc2.weight);
      fc2.push_back(model.layers[i].gen->fc2.bias);
    }
    sgd.add_group(std::move(fc2), 0.0f);
  } else {
    sgd.add_group(model.weight_parameters(), cfg.weight_decay);
    sgd.add_group(model.generator_parameters(), 0.0f);
  }

  std::mt19937_64 order_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(data.train.count());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t global_step = 0;

  for (std::size_t epoch = 0; epoch < cfg.total_epochs(); ++epoch) {
    const bool shrinking = epoch < cfg.shrink.t_max;
    if (!shrinking && !model.frozen) model.freeze();
    const float lambda = lambda_at(cfg.shrink, epoch);
    const float lr = cfg.lr_at(epoch);
    std::shuffle(order.begin(), order.end(), order_rng);

    double task_sum = 0.0, shrink_sum = 0.0;
    std::size_t steps = 0, hits = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(start + cfg.batch_size, order.size());
      std::span<const std::size_t> idx(order.data() + start, end - start);
      const auto labels = data.train.labels_at(idx);

      ForwardTrace trace;
      Tensor logits = model.forward(data.train.images_at(idx), Mode::train, &trace);
      Tensor task = ops::softmax_cross_entropy(logits, labels);
      hits += correct(logits, labels, nullptr);

      std::vector<Tensor> shrinks;
      float shrink_value = 0.0f;
      for (std::size_t j = 0; j < pcs.size(); ++j) {
        auto& state = *model.layers[pcs[j]].state;
        const Tensor& s = trace.salience[j];
        if (shrinking) ema_update(state, s, Mode::train);
        if (cfg.mode == Policy::input_dependent) {
          state.last_selection = lowest_indices(batch_mean(s), state.k);
        } else if (shrinking) {
          select_topk(state);
        }
        Tensor loss = shrink_loss(s, state.last_selection);
        shrink_value += loss.item();
        if (cfg.mode == Policy::pcs || cfg.mode == Policy::input_dependent) shrinks.push_back(loss);
      }

      Tensor objective = hybrid_objective(cfg.task_loss ? task : Tensor::scalar(0.0f), shrinks, lambda);
      const double task_value = task.item();
      if (!std::isfinite(task_value) || !std::isfinite(shrink_value) || !std::isfinite(objective.item())) {
        abort_non_finite(model, epoch, global_step, task_value, shrink_value);
      }
      StepInfo info{epoch, global_step, shrinking, lambda, &model, &trace, task_value, shrink_value};
      if (objective.requires_grad()) {
        backward(objective);
        if (hooks.after_backward) hooks.after_backward(info);
        sgd.step(lr, cfg.momentum);
      } else {
        sgd.zero_grad();
      }
      if (hooks.after_step) hooks.after_step(info);

      if (shrinking) result.shrink_step_losses.push_back(task_value);
      task_sum += task_value;
      shrink_sum += shrink_value;
      ++steps;
      ++global_step;
    }

    MetricsRow row;
    row.epoch = epoch;
    row.split = "train";
    row.task_loss = task_sum / static_cast<double>(steps);
    row.shrink_loss = shrink_sum / static_cast<double>(steps);
    row.accuracy = static_cast<double>(hits) / static_cast<double>(data.train.count());
    row.lambda = lambda;
    row.zeros = layer_zeros(model);
    result.metrics.push_back(row);

    {
      NoGradGuard guard;
      MetricsRow val;
      val.epoch = epoch;
      val.split = "val";
      val.lambda = lambda;
      val.zeros = row.zeros;
      double loss = 0.0, shrink = 0.0;
      std::size_t val_hits = 0;
      for (std::size_t start = 0; start < data.val.count(); start += 256) {
        const std::size_t end = std::min(start + 256, data.val.count());
        std::vector<std::size_t> idx(end - start);
        std::iota(idx.begin(), idx.end(), start);
        const auto labels = data.val.labels_at(idx);
        ForwardTrace trace;
        Tensor logits = model.forward(data.val.images_at(idx), Mode::eval, &trace);
        const double weight = static_cast<double>(idx.size());
        loss += static_cast<double>(ops::softmax_cross_entropy(logits, labels).item()) * weight;
        for (std::size_t j = 0; j < pcs.size(); ++j) {
          shrink += static_cast<double>(shrink_loss(trace.salience[j], model.layers[pcs[j]].state->last_selection).item()) * weight;
        }
        val_hits += correct(logits, labels, nullptr);
      }
      val.task_loss = loss / static_cast<double>(data.val.count());
      val.shrink_loss = shrink / static_cast<double>(data.val.count());
      val.accuracy = static_cast<double>(val_hits) / static_cast<double>(data.val.count());
      result.metrics.push_back(val);
    }

    std::vector<std::vector<std::size_t>> selections;
    for (auto i : pcs) {
      const auto& state = *model.layers[i].state;
      result.salience.push_back({epoch, model.layers[i].node.name, lambda, state.running, state.last_selection,
                                 count_zeros(state.running)});
      selections.push_back(state.last_selection);
    }
    if (shrinking) result.epoch_selections.push_back(std::move(selections));
  }
  if (!model.frozen) model.freeze();
  return result;
}

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace

std::string metrics_csv(const TrainResult& result) {
  std::ostringstream os;
  os << "epoch,split,task_loss,shrink_loss,accuracy,lambda";
  for (const auto& name : result.pcs_layer_names) os << ",zeros_" << name;
  os << '\n';
  for (const auto& row : result.metrics) {
    os << row.epoch << ',' << row.split << ',' << fmt(row.task_loss) << ',' << fmt(row.shrink_loss) << ','
       << fmt(row.accuracy) << ',' << fmt(row.lambda);
    for (auto z : row.zeros) os << ',' << z;
    os << '\n';
  }
  return os.str();
}

std::string salience_csv(const TrainResult& result) {
  std::ostringstream os;
  os << "epoch,layer,lambda,zeros,selection,running_salience\n";
  for (const auto& snap : result.salience) {
    os << snap.epoch << ',' << snap.layer << ',' << fmt(snap.lambda) << ',' << snap.zeros << ',';
    for (std::size_t i = 0; i < snap.selection.size(); ++i) os << (i ? " " : "") << snap.selection[i];
    os << ',';
    for (std::size_t i = 0; i < snap.running.size(); ++i) os << (i ? " " : "") << fmt(snap.running[i]);
    os << '\n';
  }
  return os.str();
}

AblationReport run_mode_ablation(const RunConfig& cfg) {
  cfg.validate();
  const auto data = synth_dataset(cfg.data, cfg.seed);
  AblationReport report;
  const std::vector<std::pair<std::string, Policy>> runs = {{"pcs", Policy::pcs},
                                                            {"truncation", Policy::truncation},
                                                            {"input-dependent", Policy::input_dependent},
                                                            {"control", Policy::pcs}};
  for (const auto& [name, policy] : runs) {
    RunConfig run = cfg;
    run.mode = policy;
    if (name == "control") run.shrink.lambda_base = 0.0f;
    auto trained = train(run);
    ModeReport mr;
    mr.mode = name;
    mr.val_accuracy = evaluate(trained.model, data.val).accuracy;
    mr.loss_variance = variance(trained.shrink_step_losses);
    mr.mask_agreement = mask_agreement(trained.model, data.val, 100);
    mr.zeros = layer_zeros(trained.model);
    const auto totals = network_totals(trained.model.graph);
    mr.base_madds = totals.total.madds;
    if (policy != Policy::input_dependent) {
      const auto plan = propagate_masks(trained.model.graph, model_masks(trained.model));
      mr.pruned_madds = network_totals(trained.model.graph, &plan).pruned_total->madds;
    }
    report.modes.push_back(std::move(mr));
  }
  return report;
}

std::string ablation_json(const AblationReport& report) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& m : report.modes) {
    nlohmann::json row = {{"mode", m.mode},
                          {"val_accuracy", m.val_accuracy},
                          {"loss_variance", m.loss_variance},
                          {"mask_agreement", m.mask_agreement},
                          {"base_madds", m.base_madds},
                          {"zeros_per_layer", m.zeros}};
    row["pruned_madds"] = m.pruned_madds ? nlohmann::json(*m.pruned_madds) : nlohmann::json(nullptr);
    j.push_back(std::move(row));
  }
  return nlohmann::json{{"modes", j}}.dump(2);
}

std::string ablation_table(const AblationReport& report) {
  std::ostringstream os;
  char line[256];
  std::snprintf(line, sizeof line, "%-16s %10s %14s %10s %14s\n", "mode", "val_acc", "loss_var", "agree", "pruned_madds");
  os << line;
  for (const auto& m : report.modes) {
    const std::string madds = m.pruned_madds ? std::to_string(*m.pruned_madds) : "-";
    std::snprintf(line, sizeof line, "%-16s %10.4f %14.6g %10.2f %14s\n", m.mode.c_str(), m.val_accuracy, m.loss_variance,
                  m.mask_agreement, madds.c_str());
    os << line;
  }
  return os.str();
}

}  // namespace pcs
