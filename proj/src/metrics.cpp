#include "uanll/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "uanll/errors.hpp"

namespace uanll {

double accuracy(std::span<const std::size_t> preds, std::span<const std::size_t> labels) {
  if (preds.size() != labels.size()) throw ShapeError("prediction and label counts differ");
  if (preds.empty()) throw DomainError("accuracy of an empty set");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) hits += preds[i] == labels[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(preds.size());
}

std::size_t calibration_bin(double confidence, std::size_t bins) {
  if (!(confidence >= 0.0 && confidence <= 1.0)) {
    throw DomainError("confidence must lie in [0, 1]");
  }
  if (confidence == 0.0) return 0;
  const auto b = static_cast<std::size_t>(std::ceil(confidence * static_cast<double>(bins)));
  return std::min(b, bins) - 1;
}

std::vector<CalibrationBin> calibration_bins(std::span<const double> confidences,
                                             const std::vector<bool>& correct, std::size_t bins) {
  if (confidences.size() != correct.size()) throw ShapeError("confidence and outcome counts differ");
  if (bins < 1) throw DomainError("at least one bin is required");
  std::vector<CalibrationBin> out(bins);
  std::vector<double> conf_sum(bins, 0.0);
  std::vector<std::size_t> hits(bins, 0);
  for (std::size_t b = 0; b < bins; ++b) {
    out[b].lo = static_cast<double>(b) / static_cast<double>(bins);
    out[b].hi = static_cast<double>(b + 1) / static_cast<double>(bins);
  }
  for (std::size_t i = 0; i < confidences.size(); ++i) {
    const std::size_t b = calibration_bin(confidences[i], bins);
    ++out[b].count;
    conf_sum[b] += confidences[i];
    hits[b] += correct[i] ? 1 : 0;
  }
  for (std::size_t b = 0; b < bins; ++b) {
    if (out[b].count == 0) continue;
    const auto n = static_cast<double>(out[b].count);
    out[b].confidence = conf_sum[b] / n;
    out[b].accuracy = static_cast<double>(hits[b]) / n;
  }
  return out;
}

double ece_from_bins(std::span<const CalibrationBin> bins) {
  std::size_t total = 0;
  for (const auto& b : bins) total += b.count;
  if (total == 0) return 0.0;
  double e = 0.0;
  for (const auto& b : bins) {
    if (b.count == 0) continue;
    e += static_cast<double>(b.count) / static_cast<double>(total) *
         std::abs(b.accuracy - b.confidence);
  }
  return e;
}

double ece(std::span<const double> confidences, const std::vector<bool>& correct, std::size_t bins) {
  return ece_from_bins(calibration_bins(confidences, correct, bins));
}

MetricsReport evaluate_predictions(std::string method, std::span<const std::size_t> preds,
                                   std::span<const std::size_t> labels,
                                   std::span<const double> confidences, std::size_t bins) {
  MetricsReport report;
  report.method = std::move(method);
  report.accuracy = accuracy(preds, labels);
  if (confidences.size() != preds.size()) throw ShapeError("one confidence per prediction required");
  std::vector<bool> correct(preds.size());
  for (std::size_t i = 0; i < preds.size(); ++i) correct[i] = preds[i] == labels[i];
  report.bins = calibration_bins(confidences, correct, bins);
  report.ece = ece_from_bins(report.bins);
  return report;
}

nlohmann::json to_json(const MetricsReport& report) {
  nlohmann::json bins = nlohmann::json::array();
  for (const auto& b : report.bins) {
    bins.push_back({{"lo", b.lo}, {"hi", b.hi}, {"count", b.count}, {"conf", b.confidence},
                    {"acc", b.accuracy}});
  }
  return {{"method", report.method}, {"accuracy", report.accuracy}, {"ece", report.ece},
          {"bins", bins}};
}

}  // namespace uanll
