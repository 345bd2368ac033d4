#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "uanll/ndmath.hpp"

namespace uanll {

/// Target distribution over N classes: one-hot or label-smoothed.
using LabelVector = std::vector<double>;

/// Loss of one sample together with the gradient of the *batch mean* with
/// respect to that sample's outputs. `value` is the unaveraged per-sample
/// term; `d_logits` is filled only by losses with a fused softmax gradient.
struct LossValue {
  double value = 0.0;
  std::vector<double> d_h;
  double d_s = 0.0;
  std::vector<double> d_logits;
};

struct BatchLoss {
  double value = 0.0;  // batch mean
  std::vector<LossValue> per_sample;
  bool clamped = false;  // cross-entropy hit the log floor
};

/// L = 1/(2m) sum_i [exp(-s_i) SE_i + N s_i], SE_i = sum_k (y_k - h_k)^2.
BatchLoss uanll_loss(std::span<const LabelVector> labels, std::span<const Prediction> preds);

/// Same loss with the variance given directly: sigma2[i] replaces exp(s_i).
/// The d_s field holds dL/d(sigma^2).
BatchLoss uanll_loss_sigma(std::span<const LabelVector> labels,
                           std::span<const Prediction> preds, std::span<const double> sigma2);

/// L = 1/(2m) sum_i SE_i. Ignores s; d_s is always zero.
BatchLoss ablation_loss(std::span<const LabelVector> labels, std::span<const Prediction> preds);

struct RegressionSample {
  double y = 0.0;
  double h = 0.0;
  double s = 0.0;
};

/// Heteroscedastic regression loss L = 1/(2m) sum_i [exp(-s_i)(y_i - h_i)^2 + s_i].
BatchLoss het_regression_loss(std::span<const RegressionSample> batch);

inline constexpr double kCrossEntropyFloor = 1e-12;

/// L = -(1/m) sum_i sum_k y_k log h_k, with h clamped at kCrossEntropyFloor.
/// Also reports the fused softmax gradient on the logits.
BatchLoss cross_entropy_loss(std::span<const LabelVector> labels,
                             std::span<const Prediction> preds);

LabelVector one_hot(std::size_t label, std::size_t num_classes);

/// (1 - r) y + (r / N) 1 for one-hot y and r in [0, 1].
LabelVector smooth_labels(std::span<const double> one_hot_label, double rate);

}  // namespace uanll
