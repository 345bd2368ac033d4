#include "uanll/pso.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <deque>
#include <limits>
#include <map>
#include <sstream>

#include "uanll/detail/text.hpp"
#include "uanll/errors.hpp"
#include "uanll/metrics.hpp"

namespace uanll {

void SwarmConfig::validate() const {
  if (particles < 2) throw ConfigError("swarm needs at least 2 particles");
  if (iterations < 1) throw ConfigError("swarm needs at least 1 iteration");
  if (bounds.empty()) throw ConfigError("swarm needs at least one dimension");
  for (const auto& [lo, hi] : bounds) {
    if (!(std::isfinite(lo) && std::isfinite(hi) && lo < hi)) {
      throw ConfigError("each swarm bound needs finite lo < hi");
    }
  }
  if (!(inertia > 0.0 && cognitive > 0.0 && social > 0.0)) {
    throw ConfigError("swarm coefficients must be positive");
  }
}

PsoResult pso_minimize(const Objective& objective, const SwarmConfig& cfg,
                       const SwarmObserver& observer) {
  cfg.validate();
  constexpr double kInf = std::numeric_limits<double>::infinity();
  const std::size_t dims = cfg.bounds.size();
  Rng rng(cfg.seed);

  SwarmState st;
  st.positions.assign(cfg.particles, std::vector<double>(dims));
  st.velocities.assign(cfg.particles, std::vector<double>(dims, 0.0));
  for (auto& x : st.positions) {
    for (std::size_t d = 0; d < dims; ++d) x[d] = rng.uniform(cfg.bounds[d].first, cfg.bounds[d].second);
  }
  st.best_positions = st.positions;
  st.best_values.assign(cfg.particles, kInf);
  st.global_best_position = st.positions.front();
  st.global_best_value = kInf;

  PsoResult result;
  result.history.reserve(cfg.iterations);
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    for (std::size_t p = 0; p < cfg.particles; ++p) {
      double value = objective(st.positions[p]);
      if (!std::isfinite(value)) value = kInf;
      if (value < st.best_values[p]) {
        st.best_values[p] = value;
        st.best_positions[p] = st.positions[p];
      }
    }
    for (std::size_t p = 0; p < cfg.particles; ++p) {
      if (st.best_values[p] < st.global_best_value) {
        st.global_best_value = st.best_values[p];
        st.global_best_position = st.best_positions[p];
      }
    }
    st.iteration = it + 1;
    result.history.push_back(st.global_best_value);
    if (observer) observer(st);
    if (it + 1 == cfg.iterations) break;

    for (std::size_t p = 0; p < cfg.particles; ++p) {
      auto& x = st.positions[p];
      auto& v = st.velocities[p];
      for (std::size_t d = 0; d < dims; ++d) {
        const double r1 = rng.uniform();
        const double r2 = rng.uniform();
        v[d] = cfg.inertia * v[d] + cfg.cognitive * r1 * (st.best_positions[p][d] - x[d]) +
               cfg.social * r2 * (st.global_best_position[d] - x[d]);
        x[d] += v[d];
        const auto [lo, hi] = cfg.bounds[d];
        if (x[d] < lo || x[d] > hi) {
          x[d] = std::clamp(x[d], lo, hi);
          v[d] = 0.0;
        }
      }
    }
  }
  result.position = st.global_best_position;
  result.value = st.global_best_value;
  return result;
}

std::string to_string(Weighting w) { return w == Weighting::Confidence ? "confidence" : "certainty"; }

std::pair<double, double> hard_accuracies(std::span<const MultiViewSet> views,
                                          std::span<const std::size_t> labels, double t,
                                          std::size_t num_classes) {
  const auto co = aggregate_batch(views, AggregationMethod::hard(AggregationKind::ConfidenceHard, t),
                                  num_classes);
  const auto ce = aggregate_batch(views, AggregationMethod::hard(AggregationKind::CertaintyHard, t),
                                  num_classes);
  std::vector<std::size_t> pred_co(co.size());
  std::vector<std::size_t> pred_ce(ce.size());
  for (std::size_t i = 0; i < co.size(); ++i) {
    pred_co[i] = co[i].label;
    pred_ce[i] = ce[i].label;
  }
  return {accuracy(pred_co, labels), accuracy(pred_ce, labels)};
}

namespace {

using PositionKey = std::pair<std::uint64_t, std::uint64_t>;

struct Evaluation {
  double criterion = 1.0;
  double accuracy = 0.0;
  Weighting weighting = Weighting::Confidence;
};

// Views for recently seen crop scales. Raw predictions are dropped, only
// class, confidence and certainty are needed for hard aggregation.
class ViewCache {
 public:
  ViewCache(const TwoHeadMlp& model, const Dataset& ds, std::size_t n, std::uint64_t seed)
      : model_(model), ds_(ds), n_(n), seed_(seed) {}

  const std::vector<MultiViewSet>& get(double sc) {
    const auto key = std::bit_cast<std::uint64_t>(sc);
    for (const auto& [k, sets] : entries_) {
      if (k == key) return sets;
    }
    auto sets = predict_views_batch(model_, ds_, n_, sc, seed_);
    for (auto& set : sets) {
      for (auto& v : set.views) v.raw = Prediction{};
    }
    if (entries_.size() == kCapacity) entries_.pop_front();
    entries_.emplace_back(key, std::move(sets));
    return entries_.back().second;
  }

 private:
  static constexpr std::size_t kCapacity = 8;
  const TwoHeadMlp& model_;
  const Dataset& ds_;
  std::size_t n_;
  std::uint64_t seed_;
  std::deque<std::pair<std::uint64_t, std::vector<MultiViewSet>>> entries_;
};

}  // namespace

TuneResult tune_inference(const TwoHeadMlp& model, const Dataset& val_set, std::size_t n,
                          const SwarmConfig& cfg, std::uint64_t augment_seed) {
  if (val_set.empty()) throw ConfigError("tuning needs a non-empty validation set");
  if (n < 1) throw ConfigError("tuning needs at least one view");
  if (cfg.bounds.size() != 2) throw ConfigError("tuning bounds must be {sc, t}");
  const auto [sc_lo, sc_hi] = cfg.bounds[0];
  const auto [t_lo, t_hi] = cfg.bounds[1];
  if (!(sc_lo > 0.0 && sc_hi <= 1.0)) throw ConfigError("crop scale bounds must lie in (0, 1]");
  if (!(t_lo > 0.0 && t_hi < 1.0)) throw ConfigError("threshold bounds must lie in (0, 1)");
  cfg.validate();

  const auto labels = val_set.labels();
  const std::size_t num_classes = val_set.num_classes;
  ViewCache cache(model, val_set, n, augment_seed);
  std::map<PositionKey, Evaluation> seen;

  auto evaluate = [&](double sc, double t) -> const Evaluation& {
    const PositionKey key{std::bit_cast<std::uint64_t>(sc), std::bit_cast<std::uint64_t>(t)};
    if (auto it = seen.find(key); it != seen.end()) return it->second;
    const auto [acc_co, acc_ce] = hard_accuracies(cache.get(sc), labels, t, num_classes);
    Evaluation e;
    e.weighting = acc_co >= acc_ce ? Weighting::Confidence : Weighting::Certainty;
    e.accuracy = std::max(acc_co, acc_ce);
    e.criterion = 1.0 - e.accuracy;
    return seen.emplace(key, e).first->second;
  };

  TuneResult result;
  const auto objective = [&](std::span<const double> x) { return evaluate(x[0], x[1]).criterion; };
  const auto observer = [&](const SwarmState& st) {
    const auto& best = st.global_best_position;
    result.trace.push_back({st.iteration, st.global_best_value, best[0], best[1],
                            evaluate(best[0], best[1]).weighting});
  };
  const PsoResult best = pso_minimize(objective, cfg, observer);
  const Evaluation& at_best = evaluate(best.position[0], best.position[1]);
  result.sc = best.position[0];
  result.t = best.position[1];
  result.best_accuracy = at_best.accuracy;
  result.winning_weighting = at_best.weighting;
  result.history = best.history;
  return result;
}

std::string tuning_trace_csv(std::span<const TuningTraceRow> rows) {
  std::ostringstream out;
  out << "iteration,gbest_value,gbest_sc,gbest_t,winning_weighting\n";
  for (const auto& r : rows) {
    out << r.iteration << ',' << detail::fmt_double(r.gbest_value) << ','
        << detail::fmt_double(r.sc) << ',' << detail::fmt_double(r.t) << ','
        << to_string(r.weighting) << '\n';
  }
  return out.str();
}

}  // namespace uanll
