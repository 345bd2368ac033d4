// Command-line front end: data generation, training, tuning, evaluation,
// sweeps and the full multi-seed pipeline.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "uanll/errors.hpp"
#include "uanll/harness.hpp"

using namespace uanll;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_dir = ".";
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "JSON experiment config");
  cmd->add_option("--set", c.overrides, "override a config key, key=value (repeatable)");
  cmd->add_option("--out-dir", c.out_dir, "output directory");
}

ExperimentConfig resolve(const Common& c) {
  ExperimentConfig cfg = c.config_path.empty() ? ExperimentConfig{} : load_config(c.config_path);
  for (const auto& o : c.overrides) apply_override(cfg, o);
  cfg.validate();
  return cfg;
}

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

std::string sidecar_path(const std::string& model) { return model + ".json"; }

TwoHeadMlp load_model_with_sidecar(const std::string& path, const ExperimentConfig& cfg) {
  Activation act = cfg.activation;
  if (std::ifstream side(sidecar_path(path)); side) {
    act = activation_from_string(json::parse(side).at("activation").get<std::string>());
  }
  return load_checkpoint(path, act);
}

std::vector<double> parse_values(const std::string& text) {
  std::vector<double> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    try {
      out.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw ConfigError("bad sweep value '" + item + "'");
    }
  }
  return out;
}

int cmd_gen_data(const Common& c, const std::string& out) {
  const ExperimentConfig cfg = resolve(c);
  const Dataset ds = load_source(cfg);
  const fs::path path = out.empty() ? fs::path(c.out_dir) / "data.udat" : fs::path(out);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  save_dataset(ds, path.string());
  std::printf("wrote %zu images (%zu classes) to %s\n", ds.size(), ds.num_classes, path.c_str());
  return 0;
}

int cmd_train(const Common& c, std::uint64_t seed) {
  const ExperimentConfig cfg = resolve(c);
  const Dataset source = load_source(cfg);
  const PreparedData data = prepare_data(cfg, source, seed);
  const TrainResult r = train_for_seed(cfg, data, seed);
  const fs::path dir(c.out_dir);
  fs::create_directories(dir);
  const std::string model = (dir / "model.ucls").string();
  save_checkpoint(r.model, model);
  const json side{{"activation", to_string(cfg.activation)},
                  {"best_epoch", r.log.best_epoch},
                  {"seed", seed},
                  {"norm_means", data.stats.means},
                  {"norm_stds", data.stats.stds},
                  {"config", config_to_json(cfg)}};
  write_file(sidecar_path(model), side.dump(2) + "\n");
  write_file(dir / "trainlog.csv", train_log_csv(r.log));
  const auto& best = r.log.epochs[r.log.best_epoch - 1];
  std::printf("best epoch %zu: val_loss %.6f val_acc %.4f\n", r.log.best_epoch, best.val_loss,
              best.val_accuracy);
  return 0;
}

int cmd_tune(const Common& c, std::uint64_t seed, const std::string& model_path) {
  const ExperimentConfig cfg = resolve(c);
  const TwoHeadMlp model = load_model_with_sidecar(model_path, cfg);
  const PreparedData data = prepare_data(cfg, load_source(cfg), seed);
  const TuneResult r = tune_for_seed(cfg, model, data, seed);
  const fs::path dir(c.out_dir);
  write_file(dir / "tuning_trace.csv", tuning_trace_csv(r.trace));
  const json out{{"sc", r.sc},
                 {"t", r.t},
                 {"best_accuracy", r.best_accuracy},
                 {"winning_weighting", to_string(r.winning_weighting)}};
  write_file(dir / "tuned.json", out.dump(2) + "\n");
  std::printf("sc %.6f t %.6f val accuracy %.4f (%s)\n", r.sc, r.t, r.best_accuracy,
              to_string(r.winning_weighting).c_str());
  return 0;
}

int cmd_eval(const Common& c, std::uint64_t seed, const std::string& model_path) {
  const ExperimentConfig cfg = resolve(c);
  const TwoHeadMlp model = load_model_with_sidecar(model_path, cfg);
  const PreparedData data = prepare_data(cfg, load_source(cfg), seed);
  std::vector<MultiViewSet> views;
  SeedReport sr;
  sr.seed = seed;
  sr.methods = evaluate_methods(cfg, model, data.splits.test,
                                {cfg.views, cfg.sc_test, cfg.default_threshold}, seed,
                                cfg.dump_views ? &views : nullptr);
  if (cfg.dump_views) sr.views_csv = views_to_csv(views);
  RunReport report;
  report.seeds.push_back(std::move(sr));
  report.aggregates = aggregate_seeds(report.seeds);
  write_run_outputs(report, cfg, c.out_dir);
  std::cout << report_to_csv(report);
  return 0;
}

int cmd_sweep(const Common& c, const std::string& axis_name, const std::string& values) {
  const ExperimentConfig cfg = resolve(c);
  const SweepAxis axis = sweep_axis_from_string(axis_name);
  const auto rows = sweep(cfg, axis, parse_values(values));
  const std::string csv = sweep_to_csv(axis, rows);
  write_file(fs::path(c.out_dir) / ("sweep_" + to_string(axis) + ".csv"), csv);
  std::cout << csv;
  return 0;
}

int cmd_run(const Common& c) {
  const ExperimentConfig cfg = resolve(c);
  const RunReport report = run_experiment(cfg);
  write_run_outputs(report, cfg, c.out_dir);
  std::printf("%-12s %10s %8s %10s %8s\n", "method", "acc_mean", "acc_std", "ece_mean", "fallback");
  for (const auto& a : report.aggregates) {
    std::printf("%-12s %10.4f %8.4f %10.4f %8.4f\n", a.method.c_str(), a.accuracy_mean,
                a.accuracy_std, a.ece_mean, a.fallback_mean);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Uncertainty-aware classification with multi-view inference"};
  app.require_subcommand(1);

  Common common;
  std::uint64_t seed = 42;
  std::string model_path;
  std::string data_out;
  std::string axis;
  std::string values;

  auto* gen = app.add_subcommand("gen-data", "generate or ingest the source dataset and save it");
  add_common(gen, common);
  gen->add_option("--data", data_out, "output dataset file (default <out-dir>/data.udat)");

  auto* train = app.add_subcommand("train", "train one model and write a checkpoint");
  add_common(train, common);
  train->add_option("--seed", seed, "pipeline seed");

  auto* tune = app.add_subcommand("tune", "search crop scale and threshold on validation data");
  add_common(tune, common);
  tune->add_option("--seed", seed, "pipeline seed");
  tune->add_option("--model", model_path, "checkpoint file")->required();

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  add_common(eval, common);
  eval->add_option("--seed", seed, "pipeline seed");
  eval->add_option("--model", model_path, "checkpoint file")->required();

  auto* sw = app.add_subcommand("sweep", "accuracy against views, crop scale or threshold");
  add_common(sw, common);
  sw->add_option("--axis", axis, "views, sc or threshold")->required();
  sw->add_option("--values", values, "comma separated values")->required();

  auto* run = app.add_subcommand("run", "full pipeline over every seed");
  add_common(run, common);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) return cmd_gen_data(common, data_out);
    if (*train) return cmd_train(common, seed);
    if (*tune) return cmd_tune(common, seed, model_path);
    if (*eval) return cmd_eval(common, seed, model_path);
    if (*sw) return cmd_sweep(common, axis, values);
    if (*run) return cmd_run(common);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
