#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "pcs/compaction.hpp"
#include "pcs/model.hpp"
#include "pcs/shrinking.hpp"
#include "pcs/tensor.hpp"

namespace pcs {

struct DatasetSpec {
  std::size_t classes = 4;
  std::size_t train_samples = 512;
  std::size_t val_samples = 256;
  std::size_t image_size = 16;
  std::size_t channels = 3;
  float noise = 1.0f;

  void validate() const;
};

struct Dataset {
  std::size_t channels = 0, size = 0;
  std::vector<float> images;  // [count, channels, size, size]
  std::vector<int> labels;

  std::size_t count() const { return labels.size(); }
  Tensor images_at(std::span<const std::size_t> indices) const;
  std::vector<int> labels_at(std::span<const std::size_t> indices) const;
};

struct SyntheticData {
  Dataset train;
  Dataset val;
};

/// Each class owns a fixed random template; every sample is its template
/// plus independent Gaussian noise of standard deviation spec.noise. Labels
/// cycle through the classes, so each class gets exactly samples/classes.
SyntheticData synth_dataset(const DatasetSpec& spec, std::uint64_t seed);

struct RunConfig {
  std::uint64_t seed = 1;
  std::string arch = "toy-cnn";  // toy-cnn | toy-resnet
  DatasetSpec data;
  ShrinkConfig shrink;
  Policy mode = Policy::pcs;
  std::size_t batch_size = 64;
  float lr = 0.05f;
  float lr_decay = 0.1f;
  std::vector<std::size_t> lr_milestones;  // empty: 50% and 75% of all epochs
  float momentum = 0.9f;
  float weight_decay = 5e-4f;
  bool batch_norm = true;
  std::size_t reduction = SalienceGenerator::kDefaultReduction;
  bool task_loss = true;         // false gives the pure-shrinking diagnostic
  bool train_generators_only = false;  // restrict updates to generator fc2 layers

  static RunConfig from_json(const std::string& text);
  std::string to_json() const;
  void validate() const;
  std::size_t total_epochs() const { return shrink.t_max + shrink.fine_tune_epochs; }
  float lr_at(std::size_t epoch) const;
};

/// Documented defaults for `--help`.
std::string run_config_help();

NetGraph architecture(const RunConfig& cfg);

struct MetricsRow {
  std::size_t epoch = 0;
  std::string split;
  double task_loss = 0.0;
  double shrink_loss = 0.0;
  double accuracy = 0.0;
  float lambda = 0.0f;
  std::vector<std::size_t> zeros;  // exact zeros of s-bar per PCS layer
};

struct SalienceSnapshot {
  std::size_t epoch = 0;
  std::string layer;
  float lambda = 0.0f;
  std::vector<float> running;
  std::vector<std::size_t> selection;
  std::size_t zeros = 0;
};

struct StepInfo {
  std::size_t epoch = 0;
  std::size_t step = 0;  // global step counter
  bool shrinking = true;
  float lambda = 0.0f;
  Model* model = nullptr;
  const ForwardTrace* trace = nullptr;
  double task_loss = 0.0;
  double shrink_loss = 0.0;
};

struct TrainHooks {
  std::function<void(const StepInfo&)> after_backward;  // gradients populated
  std::function<void(const StepInfo&)> after_step;      // parameters updated
};

struct TrainResult {
  Model model;
  std::vector<std::string> pcs_layer_names;
  std::vector<MetricsRow> metrics;
  std::vector<SalienceSnapshot> salience;
  std::vector<double> shrink_step_losses;  // task loss of every shrinking-phase step
  /// Selection of every PCS layer at the end of each shrinking epoch.
  std::vector<std::vector<std::vector<std::size_t>>> epoch_selections;
};

TrainResult train(const RunConfig& cfg, const TrainHooks& hooks = {});

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
  std::vector<int> predictions;
};

EvalResult evaluate(Model& model, const Dataset& data, std::size_t batch_size = 256);

/// Fraction of the first `samples` inputs whose joint zero pattern across
/// all PCS layers equals the most common pattern.
double mask_agreement(Model& model, const Dataset& data, std::size_t samples = 100);

/// Population variance.
double variance(const std::vector<double>& values);

std::string metrics_csv(const TrainResult& result);
std::string salience_csv(const TrainResult& result);

struct ModeReport {
  std::string mode;
  double val_accuracy = 0.0;
  double loss_variance = 0.0;
  double mask_agreement = 0.0;
  std::optional<Count> pruned_madds;
  Count base_madds = 0;
  std::vector<std::size_t> zeros;
};

struct AblationReport {
  std::vector<ModeReport> modes;  // pcs, truncation, input-dependent, control (lambda 0)
};

AblationReport run_mode_ablation(const RunConfig& cfg);
std::string ablation_json(const AblationReport& report);
std::string ablation_table(const AblationReport& report);

}  // namespace pcs
