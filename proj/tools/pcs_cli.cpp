#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "pcs/checkpoint.hpp"
#include "pcs/compaction.hpp"
#include "pcs/costmodel.hpp"
#include "pcs/errors.hpp"
#include "pcs/harness.hpp"
#include "pcs/model.hpp"

namespace {

constexpr int kUsageError = 2;

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw pcs::ConfigError("cannot open '" + path + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw pcs::ConfigError("cannot open '" + path + "' for writing");
  out << text;
  if (!out) throw pcs::ConfigError("failed writing '" + path + "'");
}

pcs::NetGraph load_graph(const std::string& spec) {
  for (const auto& name : pcs::builtin_graph_names()) {
    if (spec == name) return pcs::builtin_graph(name);
  }
  return pcs::graph_from_json(read_text(spec));
}

struct TrainArgs {
  std::string config, metrics, checkpoint, salience;
};

int run_train(const TrainArgs& a) {
  const auto cfg = pcs::RunConfig::from_json(read_text(a.config));
  const auto result = pcs::train(cfg);
  const std::string csv = pcs::metrics_csv(result);
  if (a.metrics.empty()) {
    std::cout << csv;
  } else {
    write_text(a.metrics, csv);
  }
  if (!a.salience.empty()) write_text(a.salience, pcs::salience_csv(result));
  if (!a.checkpoint.empty()) pcs::write_checkpoint(a.checkpoint, pcs::save_model(result.model));
  const auto& last = result.metrics.back();
  std::fprintf(stderr, "trained %zu epochs: val accuracy %.4f\n", last.epoch + 1, last.accuracy);
  return 0;
}

struct CompactArgs {
  std::string checkpoint, out, plan, graph, mode = "static";
};

int run_compact(const CompactArgs& a) {
  const pcs::Model model = pcs::load_model(pcs::read_checkpoint(a.checkpoint));
  const auto plan = pcs::propagate_masks(model.graph, pcs::model_masks(model));
  const pcs::Model compact = pcs::compact_network(model, plan, pcs::compact_mode_from_string(a.mode));
  pcs::write_checkpoint(a.out, pcs::save_model(compact));
  if (!a.plan.empty()) write_text(a.plan, pcs::plan_report_json(model.graph, plan));
  if (!a.graph.empty()) write_text(a.graph, pcs::graph_to_json(model.graph));
  const auto report = pcs::network_totals(model.graph, &plan);
  std::printf("compacted %s (%s scale): MAdds %llu -> %llu, params %llu -> %llu\n", model.graph.name.c_str(),
              a.mode.c_str(), static_cast<unsigned long long>(report.total.madds),
              static_cast<unsigned long long>(report.pruned_total->madds),
              static_cast<unsigned long long>(report.total.params),
              static_cast<unsigned long long>(report.pruned_total->params));
  return 0;
}

struct CostArgs {
  std::string graph, plan;
  bool json = false;
};

int run_cost(const CostArgs& a) {
  const pcs::NetGraph graph = load_graph(a.graph);
  pcs::CostReport report;
  if (a.plan.empty()) {
    report = pcs::network_totals(graph);
  } else {
    const pcs::PrunePlan plan = pcs::plan_from_json(read_text(a.plan));
    report = pcs::network_totals(graph, &plan);
  }
  std::cout << (a.json ? pcs::cost_report_json(report) + "\n" : pcs::cost_report_table(report));
  return 0;
}

struct EvalArgs {
  std::string checkpoint, dataset, split = "val", predictions;
  bool json = false;
};

int run_eval(const EvalArgs& a) {
  pcs::Model model = pcs::load_model(pcs::read_checkpoint(a.checkpoint));
  const auto cfg = pcs::RunConfig::from_json(read_text(a.dataset));
  const auto data = pcs::synth_dataset(cfg.data, cfg.seed);
  const pcs::Dataset& set = a.split == "train" ? data.train : data.val;
  const auto result = pcs::evaluate(model, set);
  if (!a.predictions.empty()) {
    std::ostringstream os;
    os << "index,label,prediction\n";
    for (std::size_t i = 0; i < result.predictions.size(); ++i) {
      os << i << ',' << set.labels[i] << ',' << result.predictions[i] << '\n';
    }
    write_text(a.predictions, os.str());
  }
  if (a.json) {
    std::printf("{\"split\": \"%s\", \"samples\": %zu, \"accuracy\": %.9g, \"loss\": %.9g}\n", a.split.c_str(),
                set.count(), result.accuracy, result.loss);
  } else {
    std::printf("%s: %zu samples, accuracy %.4f, loss %.6f\n", a.split.c_str(), set.count(), result.accuracy,
                result.loss);
  }
  return 0;
}

struct AblateArgs {
  std::string config, out;
};

int run_ablate(const AblateArgs& a) {
  const auto cfg = pcs::RunConfig::from_json(read_text(a.config));
  const auto report = pcs::run_mode_ablation(cfg);
  if (!a.out.empty()) write_text(a.out, pcs::ablation_json(report) + "\n");
  std::cout << pcs::ablation_table(report);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Progressive channel shrinking: training, compaction and cost analysis"};
  app.require_subcommand(1);

  TrainArgs train_args;
  auto* train = app.add_subcommand("train", "Train a toy network from a JSON run config");
  train->add_option("config", train_args.config, "Run config (JSON)")->required()->check(CLI::ExistingFile);
  train->add_option("--metrics", train_args.metrics, "Write the metrics CSV here instead of stdout");
  train->add_option("--checkpoint", train_args.checkpoint, "Write the trained model checkpoint");
  train->add_option("--salience", train_args.salience, "Write per-epoch running salience CSV");
  train->footer(pcs::run_config_help());

  CompactArgs compact_args;
  auto* compact = app.add_subcommand("compact", "Remove pruned channels from a frozen checkpoint");
  compact->add_option("checkpoint", compact_args.checkpoint, "Frozen model checkpoint")->required()->check(CLI::ExistingFile);
  compact->add_option("--out", compact_args.out, "Compacted checkpoint path")->required();
  compact->add_option("--plan", compact_args.plan, "Write the plan report (JSON)");
  compact->add_option("--graph", compact_args.graph, "Write the uncompacted graph (JSON)");
  compact->add_option("--mode", compact_args.mode, "Salience handling: static bakes s-bar in, dynamic keeps generators")
      ->check(CLI::IsMember({"static", "dynamic"}));

  CostArgs cost_args;
  auto* cost = app.add_subcommand("cost", "MAdds, MAC and parameter counts of a graph");
  cost->add_option("graph", cost_args.graph,
                   "Graph JSON file or builtin name (resnet18, resnet34, vgg16, toy-cnn)")->required();
  cost->add_option("--plan", cost_args.plan, "Plan report (JSON) giving kept channels")->check(CLI::ExistingFile);
  cost->add_flag("--json", cost_args.json, "Print the report as JSON");

  EvalArgs eval_args;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a synthetic dataset");
  eval->add_option("checkpoint", eval_args.checkpoint, "Model checkpoint")->required()->check(CLI::ExistingFile);
  eval->add_option("dataset", eval_args.dataset, "Dataset spec: a run config (JSON); seed and data keys are used")
      ->required()
      ->check(CLI::ExistingFile);
  eval->add_option("--split", eval_args.split, "Dataset split")->check(CLI::IsMember({"train", "val"}));
  eval->add_option("--predictions", eval_args.predictions, "Write per-sample predictions (CSV)");
  eval->add_flag("--json", eval_args.json, "Print the result as JSON");

  AblateArgs ablate_args;
  auto* ablate = app.add_subcommand("ablate", "Compare pcs, truncation, input-dependent and a lambda=0 control");
  ablate->add_option("config", ablate_args.config, "Run config (JSON)")->required()->check(CLI::ExistingFile);
  ablate->add_option("--out", ablate_args.out, "Write the report (JSON)");

  if (argc > 1 && argv[1][0] != '-') {
    const std::string name = argv[1];
    const auto subs = app.get_subcommands({});
    if (std::none_of(subs.begin(), subs.end(), [&](const CLI::App* sub) { return sub->get_name() == name; })) {
      std::cerr << "error: unknown subcommand '" << name << "'\n\n" << app.help();
      return kUsageError;
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::string usage = app.help();
    for (const auto* sub : app.get_subcommands()) usage = sub->help();
    std::cerr << "error: " << e.what() << "\n\n" << usage;
    return kUsageError;
  }

  try {
    if (*train) return run_train(train_args);
    if (*compact) return run_compact(compact_args);
    if (*cost) return run_cost(cost_args);
    if (*eval) return run_eval(eval_args);
    if (*ablate) return run_ablate(ablate_args);
  } catch (const std::exception& e) {
    std::string reason = e.what();
    for (auto& ch : reason) {
      if (ch == '\n') ch = ' ';
    }
    std::cerr << "error: " << reason << "\n";
    return 1;
  }
  return kUsageError;
}
