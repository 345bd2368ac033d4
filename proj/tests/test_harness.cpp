#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "uanll/errors.hpp"
#include "uanll/harness.hpp"

using namespace uanll;
namespace fs = std::filesystem;

namespace {

ExperimentConfig tiny() {
  ExperimentConfig cfg;
  cfg.per_class = 30;
  cfg.side = 8;
  cfg.split = {60, 20, 40};
  cfg.hidden_dims = {16};
  cfg.train.epochs = 3;
  cfg.train.decay_start_epoch = 1;
  cfg.train.batch_size = 16;
  cfg.train.smooth_rate = 0.4;
  cfg.train.aug_scale = 0.5;
  cfg.views = 5;
  cfg.seeds = {42, 0};
  cfg.swarm.particles = 4;
  cfg.swarm.iterations = 3;
  return cfg;
}

}  // namespace

TEST_CASE("config json round trip") {
  ExperimentConfig cfg = tiny();
  cfg.normalization = ChannelStats{{0.5}, {0.25}};
  cfg.noise_pairs = {{0, 1}};
  cfg.noise_direction = FlipDirection::Forward;
  const nlohmann::json j = config_to_json(cfg);
  const ExperimentConfig back = config_from_json(j);
  CHECK(config_to_json(back) == j);
  CHECK(back.normalization->stds[0] == 0.25);
  CHECK(back.noise_direction == FlipDirection::Forward);
}

TEST_CASE("config errors") {
  CHECK_THROWS_AS(config_from_json(nlohmann::json{{"epochz", 3}}), ConfigError);
  CHECK_THROWS_AS(config_from_json(nlohmann::json{{"epochs", "three"}}), ConfigError);
  CHECK_THROWS_AS(config_from_json(nlohmann::json{{"methods", nlohmann::json::array()}}), ConfigError);
  CHECK_THROWS_AS(config_from_json(nlohmann::json{{"methods", {"MVQ"}}}), ConfigError);
  CHECK_THROWS_AS(config_from_json(nlohmann::json{{"seeds", nlohmann::json::array()}}), ConfigError);
  CHECK_THROWS_AS(config_from_json(nlohmann::json{{"norm_means", {0.1}}}), ConfigError);
  CHECK_THROWS_AS(config_from_json(nlohmann::json{{"split_sizes", {1, 2}}}), ConfigError);
  CHECK_THROWS_AS(config_from_json(nlohmann::json::array()), ConfigError);
  CHECK_THROWS_AS(load_config("/nonexistent/config.json"), ConfigError);
}

TEST_CASE("overrides") {
  ExperimentConfig cfg = tiny();
  apply_override(cfg, "epochs=7");
  CHECK(cfg.train.epochs == 7);
  apply_override(cfg, "loss_kind=ce");
  CHECK(cfg.train.loss_kind == LossKind::CrossEntropy);
  apply_override(cfg, "seeds=[1,2,3]");
  CHECK(cfg.seeds == std::vector<std::uint64_t>{1, 2, 3});
  apply_override(cfg, "activation=\"relu\"");
  CHECK(cfg.activation == Activation::Relu);
  CHECK_THROWS_AS(apply_override(cfg, "epochs"), ConfigError);
  CHECK_THROWS_AS(apply_override(cfg, "bogus=1"), ConfigError);
}

TEST_CASE("config file loading") {
  const auto path = fs::temp_directory_path() / "uanll_harness_cfg.json";
  std::ofstream(path) << R"({"epochs": 4, "decay_start_epoch": 2, "views": 3, "seeds": [5]})";
  const ExperimentConfig cfg = load_config(path.string());
  CHECK(cfg.train.epochs == 4);
  CHECK(cfg.views == 3);
  std::ofstream(path) << "{ not json";
  CHECK_THROWS_AS(load_config(path.string()), ConfigError);
  fs::remove(path);
}

TEST_CASE("prepared data follows the noise protocol") {
  const ExperimentConfig cfg = tiny();
  const Dataset source = load_source(cfg);
  const PreparedData d = prepare_data(cfg, source, 42);
  CHECK(d.splits.train.size() == 60);
  CHECK(d.splits.val.size() == 20);
  CHECK(d.splits.test.size() == 40);
  CHECK(d.splits.train.clean_labels.has_value());
  CHECK(d.splits.val.clean_labels.has_value());
  CHECK_FALSE(d.splits.test.clean_labels.has_value());
  const ChannelStats after = channel_stats(d.splits.train);
  CHECK(std::abs(after.means[0]) < 1e-12);
}

TEST_CASE("single-method run and determinism") {
  ExperimentConfig cfg = tiny();
  cfg.noise_rate = 0.0;
  cfg.methods = {kSingleView};
  cfg.seeds = {42};
  const RunReport a = run_experiment(cfg);
  REQUIRE(a.seeds.size() == 1);
  REQUIRE(a.seeds[0].methods.size() == 1);
  CHECK(a.aggregates.size() == 1);
  CHECK(a.aggregates[0].accuracy_std == 0.0);
  const RunReport b = run_experiment(cfg);
  CHECK(report_to_csv(a) == report_to_csv(b));
  CHECK(report_to_json(a, cfg) == report_to_json(b, cfg));
}

TEST_CASE("full pipeline with tuning writes outputs") {
  ExperimentConfig cfg = tiny();
  cfg.tune = true;
  cfg.dump_views = true;
  const RunReport r = run_experiment(cfg);
  REQUIRE(r.seeds.size() == 2);
  for (const auto& s : r.seeds) {
    REQUIRE(s.tuning.has_value());
    CHECK(s.methods.size() == cfg.methods.size());
    CHECK_FALSE(s.views_csv.empty());
  }
  // aggregates recomputed from the per-seed rows
  for (std::size_t m = 0; m < r.aggregates.size(); ++m) {
    std::vector<double> acc;
    for (const auto& s : r.seeds) acc.push_back(s.methods[m].metrics.accuracy);
    const double mean = (acc[0] + acc[1]) / 2.0;
    const double sd = std::sqrt(((acc[0] - mean) * (acc[0] - mean) + (acc[1] - mean) * (acc[1] - mean)) / 2.0);
    CHECK(std::abs(r.aggregates[m].accuracy_mean - mean) < 1e-12);
    CHECK(std::abs(r.aggregates[m].accuracy_std - sd) < 1e-12);
  }

  const auto dir = fs::temp_directory_path() / "uanll_harness_out";
  fs::remove_all(dir);
  write_run_outputs(r, cfg, dir.string());
  for (const char* f : {"report.json", "report.csv", "trainlog_seed42.csv", "tuning_trace_seed0.csv",
                        "views_seed42.csv"}) {
    CHECK(fs::exists(dir / f));
  }
  std::ifstream csv(dir / "report.csv");
  std::string header;
  std::getline(csv, header);
  CHECK(header == "seed,method,accuracy,ece,fallback_rate");
  fs::remove_all(dir);
}

TEST_CASE("stage errors name the stage and seed") {
  ExperimentConfig cfg = tiny();
  cfg.data_source = "file";
  cfg.data_path = "/nonexistent/data.udat";
  try {
    run_experiment(cfg);
    FAIL("expected an experiment error");
  } catch (const ExperimentError& e) {
    CHECK(e.stage() == "load");
    CHECK(e.seed() == 42);
  }
  cfg = tiny();
  cfg.split = {1000, 20, 40};
  try {
    run_experiment(cfg);
    FAIL("expected an experiment error");
  } catch (const ExperimentError& e) {
    CHECK(e.stage() == "data");
  }
}

TEST_CASE("sweeps") {
  ExperimentConfig cfg = tiny();
  cfg.seeds = {42};
  cfg.methods = {kSingleView, "MVM", "MVWCo-H"};

  SUBCASE("one full-frame view equals single-view") {
    cfg.views = 1;
    const auto rows = sweep(cfg, SweepAxis::CropScale, {1.0});
    REQUIRE(rows.size() == 3);
    CHECK(rows[1].accuracy == rows[0].accuracy);
  }
  SUBCASE("thresholds near one fall back to the mode") {
    const auto rows = sweep(cfg, SweepAxis::Threshold, {0.5, 0.999999});
    REQUIRE(rows.size() == 6);
    CHECK(rows[5].method == "MVWCo-H");
    CHECK(rows[5].fallback_rate == 1.0);
    CHECK(rows[5].accuracy == rows[4].accuracy);
    const std::string csv = sweep_to_csv(SweepAxis::Threshold, rows);
    CHECK(csv.rfind("seed,threshold,method,accuracy,fallback_rate\n", 0) == 0);
  }
  SUBCASE("bad values") {
    CHECK_THROWS_AS(sweep(cfg, SweepAxis::Views, {}), ConfigError);
    CHECK_THROWS_AS(sweep(cfg, SweepAxis::Views, {2.5}), ConfigError);
    CHECK_THROWS_AS(sweep(cfg, SweepAxis::Threshold, {1.0}), ConfigError);
    CHECK_THROWS_AS(sweep(cfg, SweepAxis::CropScale, {0.0}), ConfigError);
    CHECK_THROWS_AS(sweep_axis_from_string("depth"), ConfigError);
  }
}

TEST_CASE("mean and population std") {
  const std::vector<double> v{1.0, 2.0, 3.0, 4.0};
  const auto [m, s] = mean_std(v);
  CHECK(m == 2.5);
  CHECK(std::abs(s - std::sqrt(1.25)) < 1e-15);
}
