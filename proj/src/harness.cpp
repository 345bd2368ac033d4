#include "uanll/harness.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "uanll/detail/text.hpp"
#include "uanll/errors.hpp"

namespace uanll {

namespace {

using nlohmann::json;

// Sub-stream tags for the per-seed pipeline.
enum StreamTag : std::uint64_t {
  kSplitStream = 1,
  kTrainNoiseStream,
  kValNoiseStream,
  kInitStream,
  kTrainStream,
  kSwarmStream,
  kTuneAugmentStream,
  kTestAugmentStream,
};

std::uint64_t stream(std::uint64_t seed, StreamTag tag) { return derive_seed(seed, tag); }

std::string direction_name(FlipDirection d) { return d == FlipDirection::Both ? "both" : "forward"; }

FlipDirection direction_from_string(const std::string& s) {
  if (s == "both") return FlipDirection::Both;
  if (s == "forward") return FlipDirection::Forward;
  throw ConfigError("noise_direction must be 'both' or 'forward'");
}

std::pair<double, double> bounds_pair(const json& v) {
  const auto b = v.get<std::vector<double>>();
  if (b.size() != 2) throw ConfigError("bounds must be [lo, hi]");
  return {b[0], b[1]};
}

template <typename Fn>
auto with_stage(const char* stage, std::uint64_t seed, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const ExperimentError&) {
    throw;
  } catch (const std::exception& e) {
    throw ExperimentError(stage, seed, e.what());
  }
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

}  // namespace

void ExperimentConfig::validate() const {
  if (data_source != "synthetic" && data_source != "cifar10" && data_source != "file") {
    throw ConfigError("data_source must be synthetic, cifar10 or file");
  }
  if (data_source == "cifar10" && cifar10_paths.empty()) throw ConfigError("cifar10_paths is empty");
  if (data_source == "file" && data_path.empty()) throw ConfigError("data_path is empty");
  if (methods.empty()) throw ConfigError("at least one method is required");
  for (const auto& m : methods) {
    if (m != kSingleView) aggregation_from_string(m);
  }
  if (seeds.empty()) throw ConfigError("at least one seed is required");
  if (!(noise_rate >= 0.0 && noise_rate <= 1.0)) throw ConfigError("noise_rate must lie in [0, 1]");
  if (views < 1) throw ConfigError("views must be at least 1");
  if (!(sc_test > 0.0 && sc_test <= 1.0)) throw ConfigError("sc_test must lie in (0, 1]");
  if (!(default_threshold > 0.0 && default_threshold < 1.0)) {
    throw ConfigError("default_threshold must lie in (0, 1)");
  }
  if (ece_bins < 1) throw ConfigError("ece_bins must be at least 1");
  if (split.train == 0 || split.val == 0 || split.test == 0) {
    throw ConfigError("every split needs at least one sample");
  }
  train.validate();
  if (tune) swarm.validate();
}

ExperimentConfig config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  ExperimentConfig cfg;
  std::optional<std::vector<double>> means;
  std::optional<std::vector<double>> stds;
  const std::map<std::string, std::function<void(const json&)>> fields{
      {"data_source", [&](const json& v) { cfg.data_source = v.get<std::string>(); }},
      {"cifar10_paths", [&](const json& v) { cfg.cifar10_paths = v.get<std::vector<std::string>>(); }},
      {"data_path", [&](const json& v) { cfg.data_path = v.get<std::string>(); }},
      {"num_classes", [&](const json& v) { cfg.num_classes = v.get<std::size_t>(); }},
      {"per_class", [&](const json& v) { cfg.per_class = v.get<std::size_t>(); }},
      {"side", [&](const json& v) { cfg.side = v.get<std::size_t>(); }},
      {"pixel_noise", [&](const json& v) { cfg.pixel_noise = v.get<double>(); }},
      {"data_seed", [&](const json& v) { cfg.data_seed = v.get<std::uint64_t>(); }},
      {"split_sizes",
       [&](const json& v) {
         const auto s = v.get<std::vector<std::size_t>>();
         if (s.size() != 3) throw ConfigError("split_sizes must be [train, val, test]");
         cfg.split = {s[0], s[1], s[2]};
       }},
      {"noise_pairs",
       [&](const json& v) {
         cfg.noise_pairs = v.get<std::vector<std::pair<std::size_t, std::size_t>>>();
       }},
      {"noise_rate", [&](const json& v) { cfg.noise_rate = v.get<double>(); }},
      {"noise_direction",
       [&](const json& v) { cfg.noise_direction = direction_from_string(v.get<std::string>()); }},
      {"norm_means", [&](const json& v) { means = v.get<std::vector<double>>(); }},
      {"norm_stds", [&](const json& v) { stds = v.get<std::vector<double>>(); }},
      {"hidden_dims", [&](const json& v) { cfg.hidden_dims = v.get<std::vector<std::size_t>>(); }},
      {"activation",
       [&](const json& v) { cfg.activation = activation_from_string(v.get<std::string>()); }},
      {"epochs", [&](const json& v) { cfg.train.epochs = v.get<std::size_t>(); }},
      {"batch_size", [&](const json& v) { cfg.train.batch_size = v.get<std::size_t>(); }},
      {"lr0", [&](const json& v) { cfg.train.lr0 = v.get<double>(); }},
      {"decay_start_epoch", [&](const json& v) { cfg.train.decay_start_epoch = v.get<std::size_t>(); }},
      {"beta1", [&](const json& v) { cfg.train.beta1 = v.get<double>(); }},
      {"beta2", [&](const json& v) { cfg.train.beta2 = v.get<double>(); }},
      {"eps_adam", [&](const json& v) { cfg.train.eps_adam = v.get<double>(); }},
      {"weight_decay", [&](const json& v) { cfg.train.weight_decay = v.get<double>(); }},
      {"decoupled_weight_decay",
       [&](const json& v) { cfg.train.decoupled_weight_decay = v.get<bool>(); }},
      {"loss_kind",
       [&](const json& v) { cfg.train.loss_kind = loss_kind_from_string(v.get<std::string>()); }},
      {"smooth_rate", [&](const json& v) { cfg.train.smooth_rate = v.get<double>(); }},
      {"aug_scale", [&](const json& v) { cfg.train.aug_scale = v.get<double>(); }},
      {"views", [&](const json& v) { cfg.views = v.get<std::size_t>(); }},
      {"sc_test", [&](const json& v) { cfg.sc_test = v.get<double>(); }},
      {"default_threshold", [&](const json& v) { cfg.default_threshold = v.get<double>(); }},
      {"tune", [&](const json& v) { cfg.tune = v.get<bool>(); }},
      {"pso_particles", [&](const json& v) { cfg.swarm.particles = v.get<std::size_t>(); }},
      {"pso_iterations", [&](const json& v) { cfg.swarm.iterations = v.get<std::size_t>(); }},
      {"pso_inertia", [&](const json& v) { cfg.swarm.inertia = v.get<double>(); }},
      {"pso_c1", [&](const json& v) { cfg.swarm.cognitive = v.get<double>(); }},
      {"pso_c2", [&](const json& v) { cfg.swarm.social = v.get<double>(); }},
      {"tune_sc_bounds", [&](const json& v) { cfg.swarm.bounds[0] = bounds_pair(v); }},
      {"tune_t_bounds", [&](const json& v) { cfg.swarm.bounds[1] = bounds_pair(v); }},
      {"methods", [&](const json& v) { cfg.methods = v.get<std::vector<std::string>>(); }},
      {"seeds", [&](const json& v) { cfg.seeds = v.get<std::vector<std::uint64_t>>(); }},
      {"ece_bins", [&](const json& v) { cfg.ece_bins = v.get<std::size_t>(); }},
      {"dump_views", [&](const json& v) { cfg.dump_views = v.get<bool>(); }},
  };
  for (const auto& [key, value] : j.items()) {
    const auto it = fields.find(key);
    if (it == fields.end()) throw ConfigError("unknown config key '" + key + "'");
    try {
      it->second(value);
    } catch (const json::exception& e) {
      throw ConfigError("config key '" + key + "': " + e.what());
    }
  }
  if (means.has_value() != stds.has_value()) {
    throw ConfigError("norm_means and norm_stds must be given together");
  }
  if (means) cfg.normalization = ChannelStats{*means, *stds};
  cfg.validate();
  return cfg;
}

json config_to_json(const ExperimentConfig& cfg) {
  json j{
      {"data_source", cfg.data_source},
      {"cifar10_paths", cfg.cifar10_paths},
      {"data_path", cfg.data_path},
      {"num_classes", cfg.num_classes},
      {"per_class", cfg.per_class},
      {"side", cfg.side},
      {"pixel_noise", cfg.pixel_noise},
      {"data_seed", cfg.data_seed},
      {"split_sizes", {cfg.split.train, cfg.split.val, cfg.split.test}},
      {"noise_pairs", cfg.noise_pairs},
      {"noise_rate", cfg.noise_rate},
      {"noise_direction", direction_name(cfg.noise_direction)},
      {"hidden_dims", cfg.hidden_dims},
      {"activation", to_string(cfg.activation)},
      {"epochs", cfg.train.epochs},
      {"batch_size", cfg.train.batch_size},
      {"lr0", cfg.train.lr0},
      {"decay_start_epoch", cfg.train.decay_start_epoch},
      {"beta1", cfg.train.beta1},
      {"beta2", cfg.train.beta2},
      {"eps_adam", cfg.train.eps_adam},
      {"weight_decay", cfg.train.weight_decay},
      {"decoupled_weight_decay", cfg.train.decoupled_weight_decay},
      {"loss_kind", to_string(cfg.train.loss_kind)},
      {"smooth_rate", cfg.train.smooth_rate},
      {"aug_scale", cfg.train.aug_scale},
      {"views", cfg.views},
      {"sc_test", cfg.sc_test},
      {"default_threshold", cfg.default_threshold},
      {"tune", cfg.tune},
      {"pso_particles", cfg.swarm.particles},
      {"pso_iterations", cfg.swarm.iterations},
      {"pso_inertia", cfg.swarm.inertia},
      {"pso_c1", cfg.swarm.cognitive},
      {"pso_c2", cfg.swarm.social},
      {"tune_sc_bounds", {cfg.swarm.bounds[0].first, cfg.swarm.bounds[0].second}},
      {"tune_t_bounds", {cfg.swarm.bounds[1].first, cfg.swarm.bounds[1].second}},
      {"methods", cfg.methods},
      {"seeds", cfg.seeds},
      {"ece_bins", cfg.ece_bins},
      {"dump_views", cfg.dump_views},
  };
  if (cfg.normalization) {
    j["norm_means"] = cfg.normalization->means;
    j["norm_stds"] = cfg.normalization->stds;
  }
  return j;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  try {
    return config_from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path + " is not valid JSON: " + e.what());
  }
}

void apply_override(ExperimentConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  json j = config_to_json(cfg);
  j[key] = std::move(value);
  cfg = config_from_json(j);
}

Dataset load_source(const ExperimentConfig& cfg) {
  if (cfg.data_source == "synthetic") {
    return gen_synthetic_shapes(cfg.num_classes, cfg.per_class, cfg.side, cfg.pixel_noise,
                                cfg.data_seed);
  }
  if (cfg.data_source == "cifar10") return load_cifar10_files(cfg.cifar10_paths);
  return load_dataset(cfg.data_path);
}

PreparedData prepare_data(const ExperimentConfig& cfg, const Dataset& source, std::uint64_t seed) {
  return with_stage("data", seed, [&] {
    PreparedData out;
    DatasetSplits raw = split_dataset(source, cfg.split, stream(seed, kSplitStream));
    const auto pairs = cfg.noise_pairs.empty() ? adjacent_pairs(source.num_classes) : cfg.noise_pairs;
    raw.train = inject_asymmetric_noise(
        raw.train, {pairs, cfg.noise_rate, stream(seed, kTrainNoiseStream), cfg.noise_direction});
    raw.val = inject_asymmetric_noise(
        raw.val, {pairs, cfg.noise_rate, stream(seed, kValNoiseStream), cfg.noise_direction});
    out.stats = cfg.normalization ? *cfg.normalization : channel_stats(raw.train);
    for (double& s : out.stats.stds) {
      if (s == 0.0 && !cfg.normalization) s = 1.0;  // constant channel
    }
    out.splits.train = normalize(raw.train, out.stats);
    out.splits.val = normalize(raw.val, out.stats);
    out.splits.test = normalize(raw.test, out.stats);
    return out;
  });
}

TwoHeadMlp initial_model(const ExperimentConfig& cfg, std::size_t input_dim,
                         std::size_t num_classes, std::uint64_t seed) {
  std::vector<std::size_t> dims{input_dim};
  dims.insert(dims.end(), cfg.hidden_dims.begin(), cfg.hidden_dims.end());
  Rng rng(stream(seed, kInitStream));
  return init_glorot(dims, num_classes, cfg.activation, rng);
}

TrainResult train_for_seed(const ExperimentConfig& cfg, const PreparedData& data,
                           std::uint64_t seed) {
  return with_stage("train", seed, [&] {
    const auto& train = data.splits.train;
    TrainConfig tc = cfg.train;
    tc.seed = stream(seed, kTrainStream);
    const TwoHeadMlp init = initial_model(cfg, train.images.front().pixels.size(), train.num_classes, seed);
    return train_model(train, data.splits.val, init, tc);
  });
}

TuneResult tune_for_seed(const ExperimentConfig& cfg, const TwoHeadMlp& model,
                         const PreparedData& data, std::uint64_t seed) {
  return with_stage("tune", seed, [&] {
    SwarmConfig sc = cfg.swarm;
    sc.seed = stream(seed, kSwarmStream);
    return tune_inference(model, data.splits.val, cfg.views, sc, stream(seed, kTuneAugmentStream));
  });
}

std::vector<MethodResult> evaluate_methods(const ExperimentConfig& cfg, const TwoHeadMlp& model,
                                           const Dataset& test, const EvalSettings& settings,
                                           std::uint64_t seed,
                                           std::vector<MultiViewSet>* views_out) {
  const auto labels = test.true_labels();
  std::vector<MethodResult> out;
  std::vector<MultiViewSet> views;
  bool have_views = false;
  for (const auto& name : cfg.methods) {
    std::vector<std::size_t> preds(test.size());
    std::vector<double> conf(test.size());
    double fallbacks = 0.0;
    if (name == kSingleView) {
      for (std::size_t i = 0; i < test.size(); ++i) {
        const ViewPrediction v = make_view(predict(model, test.images[i].pixels));
        preds[i] = v.pred_class;
        conf[i] = v.confidence;
      }
    } else {
      if (!have_views) {
        views = predict_views_batch(model, test, settings.views, settings.sc,
                                    stream(seed, kTestAugmentStream));
        have_views = true;
      }
      const AggregationKind kind = aggregation_from_string(name);
      const AggregationMethod method = is_hard(kind) ? AggregationMethod::hard(kind, settings.threshold)
                                                     : AggregationMethod{kind, std::nullopt};
      const auto results = aggregate_batch(views, method, test.num_classes);
      for (std::size_t i = 0; i < results.size(); ++i) {
        preds[i] = results[i].label;
        conf[i] = results[i].confidence;
        fallbacks += results[i].fell_back ? 1.0 : 0.0;
      }
    }
    MethodResult r;
    r.metrics = evaluate_predictions(name, preds, labels, conf, cfg.ece_bins);
    r.fallback_rate = fallbacks / static_cast<double>(test.size());
    out.push_back(std::move(r));
  }
  if (views_out) *views_out = std::move(views);
  return out;
}

std::pair<double, double> mean_std(std::span<const double> values) {
  if (values.empty()) return {0.0, 0.0};
  double sum = 0.0;
  for (double v : values) sum += v;
  const double mean = sum / static_cast<double>(values.size());
  double sq = 0.0;
  for (double v : values) sq += (v - mean) * (v - mean);
  return {mean, std::sqrt(sq / static_cast<double>(values.size()))};
}

std::vector<MethodAggregate> aggregate_seeds(std::span<const SeedReport> seeds) {
  std::vector<MethodAggregate> out;
  if (seeds.empty()) return out;
  for (std::size_t m = 0; m < seeds.front().methods.size(); ++m) {
    std::vector<double> acc;
    std::vector<double> ece_values;
    std::vector<double> fallback;
    for (const auto& s : seeds) {
      acc.push_back(s.methods[m].metrics.accuracy);
      ece_values.push_back(s.methods[m].metrics.ece);
      fallback.push_back(s.methods[m].fallback_rate);
    }
    MethodAggregate a;
    a.method = seeds.front().methods[m].metrics.method;
    std::tie(a.accuracy_mean, a.accuracy_std) = mean_std(acc);
    std::tie(a.ece_mean, a.ece_std) = mean_std(ece_values);
    a.fallback_mean = mean_std(fallback).first;
    out.push_back(std::move(a));
  }
  return out;
}

RunReport run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  const Dataset source = with_stage("load", cfg.seeds.front(), [&] { return load_source(cfg); });
  RunReport report;
  for (const std::uint64_t seed : cfg.seeds) {
    const PreparedData data = prepare_data(cfg, source, seed);
    TrainResult trained = train_for_seed(cfg, data, seed);
    SeedReport sr;
    sr.seed = seed;
    sr.train_log = std::move(trained.log);
    EvalSettings settings{cfg.views, cfg.sc_test, cfg.default_threshold};
    if (cfg.tune) {
      sr.tuning = tune_for_seed(cfg, trained.model, data, seed);
      settings.sc = sr.tuning->sc;
      settings.threshold = sr.tuning->t;
    }
    std::vector<MultiViewSet> views;
    sr.methods = with_stage("eval", seed, [&] {
      return evaluate_methods(cfg, trained.model, data.splits.test, settings, seed,
                              cfg.dump_views ? &views : nullptr);
    });
    if (cfg.dump_views) sr.views_csv = views_to_csv(views);
    report.seeds.push_back(std::move(sr));
  }
  report.aggregates = aggregate_seeds(report.seeds);
  return report;
}

json report_to_json(const RunReport& report, const ExperimentConfig& cfg) {
  json seeds = json::array();
  for (const auto& s : report.seeds) {
    json methods = json::array();
    for (const auto& m : s.methods) {
      json entry = to_json(m.metrics);
      entry["fallback_rate"] = m.fallback_rate;
      methods.push_back(std::move(entry));
    }
    json seed_entry{{"seed", s.seed}, {"best_epoch", s.train_log.best_epoch}, {"methods", methods}};
    if (s.tuning) {
      seed_entry["tuned"] = {{"sc", s.tuning->sc},
                             {"t", s.tuning->t},
                             {"best_accuracy", s.tuning->best_accuracy},
                             {"winning_weighting", to_string(s.tuning->winning_weighting)}};
    }
    seeds.push_back(std::move(seed_entry));
  }
  json aggregates = json::array();
  for (const auto& a : report.aggregates) {
    aggregates.push_back({{"method", a.method},
                          {"accuracy_mean", a.accuracy_mean},
                          {"accuracy_std", a.accuracy_std},
                          {"ece_mean", a.ece_mean},
                          {"ece_std", a.ece_std},
                          {"fallback_rate_mean", a.fallback_mean}});
  }
  return {{"header",
           {{"std", "population standard deviation (divide by number of seeds)"},
            {"ece_bins", cfg.ece_bins},
            {"multiview_confidence", "winning accumulated weight / total weight"}}},
          {"config", config_to_json(cfg)},
          {"seeds", seeds},
          {"aggregate", aggregates}};
}

std::string report_to_csv(const RunReport& report) {
  std::ostringstream out;
  out << "seed,method,accuracy,ece,fallback_rate\n";
  for (const auto& s : report.seeds) {
    for (const auto& m : s.methods) {
      out << s.seed << ',' << m.metrics.method << ',' << detail::fmt_double(m.metrics.accuracy)
          << ',' << detail::fmt_double(m.metrics.ece) << ',' << detail::fmt_double(m.fallback_rate)
          << '\n';
    }
  }
  for (const auto& a : report.aggregates) {
    out << "mean," << a.method << ',' << detail::fmt_double(a.accuracy_mean) << ','
        << detail::fmt_double(a.ece_mean) << ',' << detail::fmt_double(a.fallback_mean) << '\n';
  }
  for (const auto& a : report.aggregates) {
    out << "std," << a.method << ',' << detail::fmt_double(a.accuracy_std) << ','
        << detail::fmt_double(a.ece_std) << ",\n";
  }
  return out.str();
}

void write_run_outputs(const RunReport& report, const ExperimentConfig& cfg,
                       const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const fs::path root(dir);
  write_text(root / "report.json", report_to_json(report, cfg).dump(2) + "\n");
  write_text(root / "report.csv", report_to_csv(report));
  for (const auto& s : report.seeds) {
    const std::string tag = "_seed" + std::to_string(s.seed) + ".csv";
    if (!s.train_log.epochs.empty()) write_text(root / ("trainlog" + tag), train_log_csv(s.train_log));
    if (s.tuning) write_text(root / ("tuning_trace" + tag), tuning_trace_csv(s.tuning->trace));
    if (!s.views_csv.empty()) write_text(root / ("views" + tag), s.views_csv);
  }
}

SweepAxis sweep_axis_from_string(const std::string& name) {
  if (name == "views") return SweepAxis::Views;
  if (name == "sc") return SweepAxis::CropScale;
  if (name == "threshold") return SweepAxis::Threshold;
  throw ConfigError("sweep axis must be views, sc or threshold");
}

std::string to_string(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::Views: return "views";
    case SweepAxis::CropScale: return "sc";
    case SweepAxis::Threshold: return "threshold";
  }
  return "?";
}

std::vector<SweepRow> sweep(const ExperimentConfig& cfg, SweepAxis axis,
                            const std::vector<double>& values) {
  cfg.validate();
  if (values.empty()) throw ConfigError("sweep needs at least one value");
  for (double v : values) {
    const bool ok = axis == SweepAxis::Views       ? v >= 1.0 && v == std::floor(v)
                    : axis == SweepAxis::CropScale ? v > 0.0 && v <= 1.0
                                                   : v > 0.0 && v < 1.0;
    if (!ok) throw ConfigError("sweep value " + detail::fmt_double(v) + " is out of range");
  }
  const Dataset source = with_stage("load", cfg.seeds.front(), [&] { return load_source(cfg); });
  std::vector<SweepRow> rows;
  for (const std::uint64_t seed : cfg.seeds) {
    const PreparedData data = prepare_data(cfg, source, seed);
    const TrainResult trained = train_for_seed(cfg, data, seed);
    for (double v : values) {
      EvalSettings settings{cfg.views, cfg.sc_test, cfg.default_threshold};
      if (axis == SweepAxis::Views) settings.views = static_cast<std::size_t>(v);
      if (axis == SweepAxis::CropScale) settings.sc = v;
      if (axis == SweepAxis::Threshold) settings.threshold = v;
      const auto results = with_stage("eval", seed, [&] {
        return evaluate_methods(cfg, trained.model, data.splits.test, settings, seed);
      });
      for (const auto& r : results) {
        rows.push_back({seed, v, r.metrics.method, r.metrics.accuracy, r.fallback_rate});
      }
    }
  }
  return rows;
}

std::string sweep_to_csv(SweepAxis axis, std::span<const SweepRow> rows) {
  std::ostringstream out;
  out << "seed," << to_string(axis) << ",method,accuracy,fallback_rate\n";
  for (const auto& r : rows) {
    out << r.seed << ',' << detail::fmt_double(r.value) << ',' << r.method << ','
        << detail::fmt_double(r.accuracy) << ',' << detail::fmt_double(r.fallback_rate) << '\n';
  }
  return out.str();
}

}  // namespace uanll
