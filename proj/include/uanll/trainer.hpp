#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "uanll/data.hpp"
#include "uanll/losses.hpp"
#include "uanll/ndmath.hpp"

namespace uanll {

enum class LossKind { Uanll, CrossEntropy, Ablation };

std::string to_string(LossKind kind);
LossKind loss_kind_from_string(const std::string& name);

struct TrainConfig {
  std::size_t epochs = 60;
  std::size_t batch_size = 64;
  double lr0 = 1e-3;
  std::size_t decay_start_epoch = 24;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps_adam = 1e-8;
  double weight_decay = 0.0;
  /// Apply weight decay directly to the weights instead of adding it to the gradient.
  bool decoupled_weight_decay = false;
  LossKind loss_kind = LossKind::Uanll;
  double smooth_rate = 0.0;
  /// Minimum crop scale for training augmentation; 1 disables cropping.
  double aug_scale = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;  // 1-based; 0 when no epoch ran
};

/// lr0 up to and including decay_start_epoch, then linear decay reaching 0
/// at the final epoch. Epochs are 1-based.
double lr_schedule(std::size_t epoch, const TrainConfig& cfg);

struct AdamState {
  std::vector<Matrix> m;
  std::vector<Matrix> v;
  std::size_t step = 0;

  static AdamState zeros_like(const TwoHeadMlp& model);
};

/// One bias-corrected Adam update of `model` in place.
void adam_step(TwoHeadMlp& model, const GradientSet& grads, AdamState& state, double lr,
               const TrainConfig& cfg);

struct BatchResult {
  double loss = 0.0;
  std::size_t correct = 0;
};

/// Loss of `model` on `ds` (no augmentation) with the training targets,
/// and accuracy against the dataset labels.
BatchResult evaluate_loss(const TwoHeadMlp& model, const Dataset& ds, const TrainConfig& cfg);

/// Loss of a batch of predictions under `kind`; labels must already be smoothed.
BatchLoss compute_loss(LossKind kind, std::span<const LabelVector> targets,
                       std::span<const Prediction> preds);

class TrainingError : public std::runtime_error {
 public:
  TrainingError(const std::string& what, std::size_t epoch, std::size_t batch)
      : std::runtime_error(what), epoch_(epoch), batch_(batch) {}
  std::size_t epoch() const { return epoch_; }
  std::size_t batch() const { return batch_; }

 private:
  std::size_t epoch_;
  std::size_t batch_;
};

struct TrainResult {
  TwoHeadMlp model;  // checkpoint with the lowest validation loss
  TrainLog log;
};

/// Mini-batch training: seeded shuffle, crop augmentation, smoothed targets,
/// Adam with the linear-decay schedule, and per-epoch validation. Returns
/// the parameters from the epoch with the lowest validation loss.
TrainResult train_model(const Dataset& train, const Dataset& val, const TwoHeadMlp& init,
                        const TrainConfig& cfg);

std::string train_log_csv(const TrainLog& log);

}  // namespace uanll
