#include "uanll/losses.hpp"

#include <cmath>
#include <string>

#include "uanll/errors.hpp"

namespace uanll {

namespace {

bool finite(double v) { return std::isfinite(v); }

void check_batch(std::span<const LabelVector> labels, std::span<const Prediction> preds) {
  if (labels.size() != preds.size()) throw ShapeError("label and prediction batch sizes differ");
  if (labels.empty()) throw ShapeError("empty batch");
  const std::size_t n = labels.front().size();
  if (n == 0) throw ShapeError("label vectors must be non-empty");
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i].size() != n || preds[i].h.size() != n) {
      throw ShapeError("sample " + std::to_string(i) + ": vector length differs from N = " +
                       std::to_string(n));
    }
    if (!finite(preds[i].s)) throw InvalidInputError("non-finite log-variance");
    for (std::size_t k = 0; k < n; ++k) {
      if (!finite(labels[i][k]) || !finite(preds[i].h[k])) {
        throw InvalidInputError("non-finite label or prediction");
      }
    }
  }
}

double squared_error(std::span<const double> y, std::span<const double> h) {
  double se = 0.0;
  for (std::size_t k = 0; k < y.size(); ++k) {
    const double d = y[k] - h[k];
    se += d * d;
  }
  return se;
}

// Shared body of the squared-error family: per-sample weight exp(-s) (or 1
// when the uncertainty term is disabled) and additive N s.
BatchLoss squared_error_family(std::span<const LabelVector> labels,
                               std::span<const Prediction> preds, bool with_uncertainty) {
  check_batch(labels, preds);
  const std::size_t m = labels.size();
  const double n = static_cast<double>(labels.front().size());
  const double inv_m = 1.0 / static_cast<double>(m);
  BatchLoss out;
  out.per_sample.resize(m);
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const auto& y = labels[i];
    const auto& h = preds[i].h;
    const double s = with_uncertainty ? preds[i].s : 0.0;
    const double weight = std::exp(-s);
    const double se = squared_error(y, h);
    const double term = weight * se + n * s;
    total += term;
    LossValue& lv = out.per_sample[i];
    lv.value = 0.5 * term;
    lv.d_h.resize(y.size());
    for (std::size_t k = 0; k < y.size(); ++k) lv.d_h[k] = -weight * (y[k] - h[k]) * inv_m;
    lv.d_s = with_uncertainty ? (-weight * se + n) / (2.0 * static_cast<double>(m)) : 0.0;
  }
  out.value = total / (2.0 * static_cast<double>(m));
  return out;
}

}  // namespace

BatchLoss uanll_loss(std::span<const LabelVector> labels, std::span<const Prediction> preds) {
  return squared_error_family(labels, preds, true);
}

BatchLoss ablation_loss(std::span<const LabelVector> labels, std::span<const Prediction> preds) {
  return squared_error_family(labels, preds, false);
}

BatchLoss uanll_loss_sigma(std::span<const LabelVector> labels,
                           std::span<const Prediction> preds, std::span<const double> sigma2) {
  check_batch(labels, preds);
  if (sigma2.size() != preds.size()) throw ShapeError("one variance per sample required");
  const std::size_t m = labels.size();
  const double n = static_cast<double>(labels.front().size());
  const double inv_m = 1.0 / static_cast<double>(m);
  BatchLoss out;
  out.per_sample.resize(m);
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double var = sigma2[i];
    if (!(var > 0.0) || !finite(var)) throw DomainError("variance must be positive and finite");
    const auto& y = labels[i];
    const auto& h = preds[i].h;
    const double se = squared_error(y, h);
    const double term = se / var + n * std::log(var);
    total += term;
    LossValue& lv = out.per_sample[i];
    lv.value = 0.5 * term;
    lv.d_h.resize(y.size());
    for (std::size_t k = 0; k < y.size(); ++k) lv.d_h[k] = -(y[k] - h[k]) / var * inv_m;
    lv.d_s = (-se / (var * var) + n / var) / (2.0 * static_cast<double>(m));
  }
  out.value = total / (2.0 * static_cast<double>(m));
  return out;
}

BatchLoss het_regression_loss(std::span<const RegressionSample> batch) {
  if (batch.empty()) throw ShapeError("empty batch");
  const std::size_t m = batch.size();
  const double inv_m = 1.0 / static_cast<double>(m);
  BatchLoss out;
  out.per_sample.resize(m);
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const auto [y, h, s] = batch[i];
    if (!finite(y) || !finite(h) || !finite(s)) throw InvalidInputError("non-finite regression sample");
    const double weight = std::exp(-s);
    const double se = (y - h) * (y - h);
    const double term = weight * se + s;
    total += term;
    LossValue& lv = out.per_sample[i];
    lv.value = 0.5 * term;
    lv.d_h = {-weight * (y - h) * inv_m};
    lv.d_s = (-weight * se + 1.0) / (2.0 * static_cast<double>(m));
  }
  out.value = total / (2.0 * static_cast<double>(m));
  return out;
}

BatchLoss cross_entropy_loss(std::span<const LabelVector> labels,
                             std::span<const Prediction> preds) {
  check_batch(labels, preds);
  const std::size_t m = labels.size();
  const double inv_m = 1.0 / static_cast<double>(m);
  BatchLoss out;
  out.per_sample.resize(m);
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const auto& y = labels[i];
    const auto& h = preds[i].h;
    LossValue& lv = out.per_sample[i];
    lv.d_h.resize(y.size());
    lv.d_logits.resize(y.size());
    double mass = 0.0;
    double term = 0.0;
    for (std::size_t k = 0; k < y.size(); ++k) {
      if (h[k] < 0.0) throw InvalidInputError("negative probability");
      mass += y[k];
      if (y[k] == 0.0) continue;
      double p = h[k];
      if (p < kCrossEntropyFloor) {
        p = kCrossEntropyFloor;
        out.clamped = true;
      }
      term -= y[k] * std::log(p);
      lv.d_h[k] = -y[k] / p * inv_m;
    }
    for (std::size_t k = 0; k < y.size(); ++k) lv.d_logits[k] = (mass * h[k] - y[k]) * inv_m;
    lv.value = term;
    lv.d_s = 0.0;
    total += term;
  }
  out.value = total / static_cast<double>(m);
  return out;
}

LabelVector one_hot(std::size_t label, std::size_t num_classes) {
  if (label >= num_classes) throw DomainError("label out of range");
  LabelVector y(num_classes, 0.0);
  y[label] = 1.0;
  return y;
}

LabelVector smooth_labels(std::span<const double> one_hot_label, double rate) {
  if (!(rate >= 0.0 && rate <= 1.0)) throw DomainError("smoothing rate must lie in [0, 1]");
  const std::size_t n = one_hot_label.size();
  if (n == 0) throw ShapeError("empty label vector");
  std::size_t hot = n;
  for (std::size_t k = 0; k < n; ++k) {
    if (one_hot_label[k] == 1.0 && hot == n) {
      hot = k;
    } else if (one_hot_label[k] != 0.0) {
      throw InvalidInputError("label vector is not one-hot");
    }
  }
  if (hot == n) throw InvalidInputError("label vector is not one-hot");
  const double off = rate / static_cast<double>(n);
  LabelVector out(n, off);
  out[hot] = 1.0 - rate + off;
  return out;
}

}  // namespace uanll
