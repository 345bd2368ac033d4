#include "uanll/multiview.hpp"

#include <algorithm>
#include <sstream>

#include "uanll/detail/text.hpp"
#include "uanll/errors.hpp"

namespace uanll {

namespace {

std::size_t argmax_lowest(std::span<const double> z) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < z.size(); ++k) {
    if (z[k] > z[best]) best = k;
  }
  return best;
}

void check_views(const MultiViewSet& set) {
  if (set.views.empty()) throw InvalidInputError("multi-view set has no views");
}

double hard_or_soft_weight(const ViewPrediction& v, const AggregationMethod& method) {
  switch (method.kind) {
    case AggregationKind::ConfidenceSoft:
      return v.confidence;
    case AggregationKind::CertaintySoft:
      return v.certainty;
    case AggregationKind::ConfidenceHard:
      return v.confidence > *method.threshold ? 1.0 : 0.0;
    case AggregationKind::CertaintyHard:
      return v.certainty > *method.threshold ? 1.0 : 0.0;
    case AggregationKind::Mode:
      break;
  }
  throw ConfigError("mode aggregation has no view weights");
}

AggregateResult mode_result(const MultiViewSet& set, std::size_t num_classes) {
  std::vector<double> counts(num_classes, 0.0);
  for (const auto& v : set.views) counts[v.pred_class] += 1.0;
  const std::size_t label = argmax_lowest(counts);
  return {label, counts[label] / static_cast<double>(set.views.size()), false};
}

std::size_t class_span(const MultiViewSet& set) {
  std::size_t n = 0;
  for (const auto& v : set.views) n = std::max(n, v.pred_class + 1);
  return n;
}

}  // namespace

ViewPrediction make_view(Prediction raw) {
  if (raw.h.empty()) throw InvalidInputError("empty prediction");
  ViewPrediction v;
  v.pred_class = argmax_lowest(raw.h);
  v.confidence = raw.h[v.pred_class];
  v.certainty = 1.0 - sigmoid(raw.s);
  v.raw = std::move(raw);
  return v;
}

std::string to_string(AggregationKind kind) {
  switch (kind) {
    case AggregationKind::Mode: return "MVM";
    case AggregationKind::ConfidenceSoft: return "MVWCo-S";
    case AggregationKind::CertaintySoft: return "MVWCe-S";
    case AggregationKind::ConfidenceHard: return "MVWCo-H";
    case AggregationKind::CertaintyHard: return "MVWCe-H";
  }
  return "?";
}

AggregationKind aggregation_from_string(const std::string& name) {
  for (auto kind : {AggregationKind::Mode, AggregationKind::ConfidenceSoft,
                    AggregationKind::CertaintySoft, AggregationKind::ConfidenceHard,
                    AggregationKind::CertaintyHard}) {
    if (to_string(kind) == name) return kind;
  }
  throw ConfigError("unknown aggregation method '" + name + "'");
}

bool is_hard(AggregationKind kind) {
  return kind == AggregationKind::ConfidenceHard || kind == AggregationKind::CertaintyHard;
}

void AggregationMethod::validate() const {
  if (is_hard(kind)) {
    if (!threshold) throw ConfigError(name() + " requires a threshold");
    if (!(*threshold > 0.0 && *threshold < 1.0)) {
      throw ConfigError(name() + " threshold must lie in (0, 1)");
    }
  } else if (threshold) {
    throw ConfigError(name() + " does not take a threshold");
  }
}

MultiViewSet predict_views(const TwoHeadMlp& model, const LabeledImage& sample,
                           std::size_t sample_index, std::size_t n, double min_scale,
                           std::uint64_t seed) {
  if (n < 1) throw ConfigError("at least one view is required");
  MultiViewSet set;
  set.sample_index = sample_index;
  set.views.reserve(n);
  for (std::size_t j = 0; j < n; ++j) {
    Rng rng(derive_seed(seed, sample_index, j));
    const LabeledImage view = random_resized_crop(sample, min_scale, rng);
    set.views.push_back(make_view(predict(model, view.pixels)));
  }
  return set;
}

std::vector<MultiViewSet> predict_views_batch(const TwoHeadMlp& model, const Dataset& ds,
                                              std::size_t n, double min_scale,
                                              std::uint64_t seed) {
  std::vector<MultiViewSet> sets;
  sets.reserve(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    sets.push_back(predict_views(model, ds.images[i], i, n, min_scale, seed));
  }
  return sets;
}

std::size_t aggregate_mode(const MultiViewSet& set) {
  check_views(set);
  return mode_result(set, class_span(set)).label;
}

AggregateResult aggregate_weighted(const MultiViewSet& set, const AggregationMethod& method,
                                   std::size_t num_classes) {
  if (method.kind == AggregationKind::Mode) {
    throw ConfigError("aggregate_weighted needs a weighted method, not MVM");
  }
  method.validate();
  check_views(set);
  std::vector<double> z(num_classes, 0.0);
  double total = 0.0;
  for (const auto& v : set.views) {
    if (v.pred_class >= num_classes) throw ShapeError("predicted class exceeds class count");
    const double g = hard_or_soft_weight(v, method);
    z[v.pred_class] += g;
    total += g;
  }
  if (total == 0.0) {
    AggregateResult r = mode_result(set, num_classes);
    r.fell_back = true;
    return r;
  }
  const std::size_t label = argmax_lowest(z);
  return {label, z[label] / total, false};
}

AggregateResult aggregate(const MultiViewSet& set, const AggregationMethod& method,
                          std::size_t num_classes) {
  if (method.kind == AggregationKind::Mode) {
    check_views(set);
    for (const auto& v : set.views) {
      if (v.pred_class >= num_classes) throw ShapeError("predicted class exceeds class count");
    }
    return mode_result(set, num_classes);
  }
  return aggregate_weighted(set, method, num_classes);
}

std::vector<AggregateResult> aggregate_batch(std::span<const MultiViewSet> sets,
                                             const AggregationMethod& method,
                                             std::size_t num_classes) {
  method.validate();
  for (const auto& set : sets) {
    for (const auto& v : set.views) {
      if (!v.raw.h.empty() && v.raw.h.size() != num_classes) {
        throw ShapeError("sample " + std::to_string(set.sample_index) +
                         " has predictions over a different class count");
      }
    }
  }
  std::vector<AggregateResult> out(sets.size());
  for (std::size_t i = 0; i < sets.size(); ++i) out[i] = aggregate(sets[i], method, num_classes);
  return out;
}

std::string views_to_csv(std::span<const MultiViewSet> sets) {
  std::ostringstream out;
  out << "sample_index,view_index,pred_class,confidence,certainty\n";
  for (const auto& set : sets) {
    for (std::size_t j = 0; j < set.views.size(); ++j) {
      const auto& v = set.views[j];
      out << set.sample_index << ',' << j << ',' << v.pred_class << ','
          << detail::fmt_double(v.confidence) << ',' << detail::fmt_double(v.certainty) << '\n';
    }
  }
  return out.str();
}

std::vector<MultiViewSet> views_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "sample_index,view_index,pred_class,confidence,certainty") {
    throw FormatError("view dump is missing its header");
  }
  std::vector<MultiViewSet> sets;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto fields = detail::split(line, ',');
    if (fields.size() != 5) throw FormatError("view dump line " + std::to_string(line_no));
    try {
      const std::size_t sample = std::stoul(fields[0]);
      const std::size_t view = std::stoul(fields[1]);
      ViewPrediction v;
      v.pred_class = std::stoul(fields[2]);
      v.confidence = std::stod(fields[3]);
      v.certainty = std::stod(fields[4]);
      if (sets.empty() || sets.back().sample_index != sample) {
        sets.push_back(MultiViewSet{sample, {}});
      }
      if (view != sets.back().views.size()) throw FormatError("views out of order");
      sets.back().views.push_back(std::move(v));
    } catch (const std::logic_error&) {
      throw FormatError("view dump line " + std::to_string(line_no) + " is malformed");
    }
  }
  return sets;
}

}  // namespace uanll
