#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "uanll/data.hpp"
#include "uanll/multiview.hpp"
#include "uanll/ndmath.hpp"

namespace uanll {

struct SwarmConfig {
  std::size_t particles = 20;
  std::size_t iterations = 30;
  double inertia = 0.729;
  double cognitive = 1.49445;
  double social = 1.49445;
  std::vector<std::pair<double, double>> bounds;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SwarmState {
  std::vector<std::vector<double>> positions;
  std::vector<std::vector<double>> velocities;
  std::vector<std::vector<double>> best_positions;
  std::vector<double> best_values;
  std::vector<double> global_best_position;
  double global_best_value = 0.0;
  std::size_t iteration = 0;
};

struct PsoResult {
  std::vector<double> position;
  double value = 0.0;
  std::vector<double> history;  // global best after each iteration
};

using Objective = std::function<double(std::span<const double>)>;
/// Called after each iteration's evaluations and best updates.
using SwarmObserver = std::function<void(const SwarmState&)>;

/// Minimizes a black-box objective with a global-best particle swarm.
/// Velocities start at zero, positions uniform within bounds; a position
/// that leaves its bounds is clamped and that velocity component zeroed.
/// Non-finite objective values count as +infinity.
PsoResult pso_minimize(const Objective& objective, const SwarmConfig& cfg,
                       const SwarmObserver& observer = {});

enum class Weighting { Confidence, Certainty };
std::string to_string(Weighting w);

struct TuningTraceRow {
  std::size_t iteration = 0;
  double gbest_value = 0.0;
  double sc = 0.0;
  double t = 0.0;
  Weighting weighting = Weighting::Confidence;
};

struct TuneResult {
  double sc = 1.0;
  double t = 0.5;
  double best_accuracy = 0.0;
  Weighting winning_weighting = Weighting::Confidence;
  std::vector<double> history;
  std::vector<TuningTraceRow> trace;
};

/// Accuracy of hard confidence- and certainty-weighted aggregation of
/// `views` at threshold t, in that order.
std::pair<double, double> hard_accuracies(std::span<const MultiViewSet> views,
                                          std::span<const std::size_t> labels, double t,
                                          std::size_t num_classes);

/// Searches crop scale sc and hard-weight threshold t that maximize
/// validation accuracy. cfg.bounds must be {(sc_lo, sc_hi), (t_lo, t_hi)}
/// inside (0, 1] x (0, 1). Views are cropped with `augment_seed` for every
/// particle, so the criterion is a deterministic function of (sc, t).
TuneResult tune_inference(const TwoHeadMlp& model, const Dataset& val_set, std::size_t n,
                          const SwarmConfig& cfg, std::uint64_t augment_seed);

std::string tuning_trace_csv(std::span<const TuningTraceRow> rows);

}  // namespace uanll
