#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "uanll/data.hpp"
#include "uanll/ndmath.hpp"

namespace uanll {

/// One augmented view: predicted class, confidence max(h) and certainty
/// 1 - sigmoid(s).
struct ViewPrediction {
  std::size_t pred_class = 0;
  double confidence = 0.0;
  double certainty = 0.0;
  Prediction raw;
};

/// Builds a view from a raw prediction; argmax ties go to the lowest index.
ViewPrediction make_view(Prediction raw);

struct MultiViewSet {
  std::size_t sample_index = 0;
  std::vector<ViewPrediction> views;
};

enum class AggregationKind {
  Mode,             // MVM
  ConfidenceSoft,   // MVWCo-S
  CertaintySoft,    // MVWCe-S
  ConfidenceHard,   // MVWCo-H
  CertaintyHard,    // MVWCe-H
};

std::string to_string(AggregationKind kind);
AggregationKind aggregation_from_string(const std::string& name);
bool is_hard(AggregationKind kind);

struct AggregationMethod {
  AggregationKind kind = AggregationKind::Mode;
  std::optional<double> threshold;  // hard kinds only

  static AggregationMethod mode() { return {AggregationKind::Mode, std::nullopt}; }
  static AggregationMethod soft(AggregationKind kind) { return {kind, std::nullopt}; }
  static AggregationMethod hard(AggregationKind kind, double t) { return {kind, t}; }

  /// Throws ConfigError unless a threshold in (0, 1) is present exactly for hard kinds.
  void validate() const;
  std::string name() const { return to_string(kind); }
};

struct AggregateResult {
  std::size_t label = 0;
  /// Winning accumulated weight over the total weight (vote share for MVM).
  double confidence = 0.0;
  /// Every hard weight was zero and the mode was used instead.
  bool fell_back = false;
};

/// n views of one sample; view j is cropped with the substream derived from
/// (seed, sample_index, j).
MultiViewSet predict_views(const TwoHeadMlp& model, const LabeledImage& sample,
                           std::size_t sample_index, std::size_t n, double min_scale,
                           std::uint64_t seed);

std::vector<MultiViewSet> predict_views_batch(const TwoHeadMlp& model, const Dataset& ds,
                                              std::size_t n, double min_scale,
                                              std::uint64_t seed);

/// Most frequent predicted class, lowest index on ties.
std::size_t aggregate_mode(const MultiViewSet& set);

/// Weighted bin count z[pred_class] += g, returning the argmax class.
AggregateResult aggregate_weighted(const MultiViewSet& set, const AggregationMethod& method,
                                   std::size_t num_classes);

/// Dispatches on the method kind, including MVM.
AggregateResult aggregate(const MultiViewSet& set, const AggregationMethod& method,
                          std::size_t num_classes);

std::vector<AggregateResult> aggregate_batch(std::span<const MultiViewSet> sets,
                                             const AggregationMethod& method,
                                             std::size_t num_classes);

// View dump CSV: sample_index,view_index,pred_class,confidence,certainty.
std::string views_to_csv(std::span<const MultiViewSet> sets);
std::vector<MultiViewSet> views_from_csv(const std::string& text);

}  // namespace uanll
