#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace uanll {

struct CalibrationBin {
  double lo = 0.0;
  double hi = 0.0;
  std::size_t count = 0;
  double confidence = 0.0;  // mean confidence, 0 for empty bins
  double accuracy = 0.0;    // empirical accuracy, 0 for empty bins
};

struct MetricsReport {
  std::string method;
  double accuracy = 0.0;
  double ece = 0.0;
  std::vector<CalibrationBin> bins;
};

/// Fraction of positions where preds equals labels.
double accuracy(std::span<const std::size_t> preds, std::span<const std::size_t> labels);

/// Bin index of a confidence: bin b covers (b/B, (b+1)/B], and 0 goes to bin 0.
std::size_t calibration_bin(double confidence, std::size_t bins);

std::vector<CalibrationBin> calibration_bins(std::span<const double> confidences,
                                             const std::vector<bool>& correct, std::size_t bins);

/// Expected calibration error over equal-width bins; empty bins are skipped.
double ece(std::span<const double> confidences, const std::vector<bool>& correct, std::size_t bins);

/// ECE recomputed from bin statistics.
double ece_from_bins(std::span<const CalibrationBin> bins);

MetricsReport evaluate_predictions(std::string method, std::span<const std::size_t> preds,
                                   std::span<const std::size_t> labels,
                                   std::span<const double> confidences, std::size_t bins);

nlohmann::json to_json(const MetricsReport& report);

}  // namespace uanll
