#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "uanll/data.hpp"
#include "uanll/metrics.hpp"
#include "uanll/multiview.hpp"
#include "uanll/ndmath.hpp"
#include "uanll/pso.hpp"
#include "uanll/trainer.hpp"

namespace uanll {

inline const std::string kSingleView = "single-view";

/// Declarative description of one experiment. Serialized as a flat JSON
/// object; see README for the key list.
struct ExperimentConfig {
  // data source: "synthetic", "cifar10" (binary batch files) or "file" (UDAT container)
  std::string data_source = "synthetic";
  std::vector<std::string> cifar10_paths;
  std::string data_path;
  std::size_t num_classes = 4;
  std::size_t per_class = 850;
  std::size_t side = 16;
  double pixel_noise = 0.3;
  std::uint64_t data_seed = 1;
  SplitSizes split{2000, 400, 1000};

  std::vector<std::pair<std::size_t, std::size_t>> noise_pairs;  // empty: adjacent pairs
  double noise_rate = 0.4;
  FlipDirection noise_direction = FlipDirection::Both;

  std::optional<ChannelStats> normalization;  // empty: train-split statistics

  std::vector<std::size_t> hidden_dims{128, 64};
  Activation activation = Activation::Tanh;
  TrainConfig train;

  std::size_t views = 50;
  double sc_test = 0.4;
  double default_threshold = 0.5;

  bool tune = false;
  SwarmConfig swarm{20, 30, 0.729, 1.49445, 1.49445, {{0.1, 1.0}, {0.01, 0.99}}, 0};

  std::vector<std::string> methods{kSingleView, "MVM", "MVWCo-S", "MVWCe-S", "MVWCo-H", "MVWCe-H"};
  std::vector<std::uint64_t> seeds{42, 0, 17, 9, 3};
  std::size_t ece_bins = 32;
  bool dump_views = false;

  void validate() const;
};

ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const ExperimentConfig& cfg);
ExperimentConfig load_config(const std::string& path);
/// Applies "key=value" overrides; the value is parsed as JSON, falling back
/// to a plain string.
void apply_override(ExperimentConfig& cfg, const std::string& assignment);

/// A failure inside the pipeline, tagged with the stage and seed.
class ExperimentError : public std::runtime_error {
 public:
  ExperimentError(std::string stage, std::uint64_t seed, const std::string& what)
      : std::runtime_error("stage '" + stage + "', seed " + std::to_string(seed) + ": " + what),
        stage_(std::move(stage)),
        seed_(seed) {}
  const std::string& stage() const { return stage_; }
  std::uint64_t seed() const { return seed_; }

 private:
  std::string stage_;
  std::uint64_t seed_;
};

/// Source dataset before splitting (synthetic, CIFAR-10 or cached file).
Dataset load_source(const ExperimentConfig& cfg);

/// Normalized splits for one seed: noise on train and val, clean test.
struct PreparedData {
  DatasetSplits splits;
  ChannelStats stats;
};

PreparedData prepare_data(const ExperimentConfig& cfg, const Dataset& source, std::uint64_t seed);

TwoHeadMlp initial_model(const ExperimentConfig& cfg, std::size_t input_dim,
                         std::size_t num_classes, std::uint64_t seed);

TrainResult train_for_seed(const ExperimentConfig& cfg, const PreparedData& data,
                           std::uint64_t seed);

TuneResult tune_for_seed(const ExperimentConfig& cfg, const TwoHeadMlp& model,
                         const PreparedData& data, std::uint64_t seed);

struct MethodResult {
  MetricsReport metrics;
  double fallback_rate = 0.0;
};

struct EvalSettings {
  std::size_t views = 1;
  double sc = 1.0;
  double threshold = 0.5;
};

/// Evaluates every configured method on `test`. Single-view uses the
/// un-augmented image and max(h) as confidence; multi-view methods share one
/// set of n views per sample and use the winner's weight share as confidence.
std::vector<MethodResult> evaluate_methods(const ExperimentConfig& cfg, const TwoHeadMlp& model,
                                           const Dataset& test, const EvalSettings& settings,
                                           std::uint64_t seed,
                                           std::vector<MultiViewSet>* views_out = nullptr);

struct SeedReport {
  std::uint64_t seed = 0;
  std::vector<MethodResult> methods;
  std::optional<TuneResult> tuning;
  TrainLog train_log;
  std::string views_csv;  // filled when dump_views is set
};

struct MethodAggregate {
  std::string method;
  double accuracy_mean = 0.0;
  double accuracy_std = 0.0;
  double ece_mean = 0.0;
  double ece_std = 0.0;
  double fallback_mean = 0.0;
};

struct RunReport {
  std::vector<SeedReport> seeds;
  std::vector<MethodAggregate> aggregates;
};

/// Mean and population standard deviation.
std::pair<double, double> mean_std(std::span<const double> values);

std::vector<MethodAggregate> aggregate_seeds(std::span<const SeedReport> seeds);

/// Full pipeline for every seed: data, noise, training, optional tuning,
/// multi-view evaluation.
RunReport run_experiment(const ExperimentConfig& cfg);

nlohmann::json report_to_json(const RunReport& report, const ExperimentConfig& cfg);
std::string report_to_csv(const RunReport& report);

/// Writes report.json, report.csv, trainlog_seed<S>.csv, and, when present,
/// tuning_trace_seed<S>.csv and views_seed<S>.csv into `dir`.
void write_run_outputs(const RunReport& report, const ExperimentConfig& cfg,
                       const std::string& dir);

enum class SweepAxis { Views, CropScale, Threshold };
SweepAxis sweep_axis_from_string(const std::string& name);
std::string to_string(SweepAxis axis);

struct SweepRow {
  std::uint64_t seed = 0;
  double value = 0.0;
  std::string method;
  double accuracy = 0.0;
  double fallback_rate = 0.0;
};

/// Trains once per seed, then evaluates every method at each axis value
/// with everything else held at its configured value.
std::vector<SweepRow> sweep(const ExperimentConfig& cfg, SweepAxis axis,
                            const std::vector<double>& values);

std::string sweep_to_csv(SweepAxis axis, std::span<const SweepRow> rows);

}  // namespace uanll
