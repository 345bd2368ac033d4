#include "uanll/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "uanll/detail/text.hpp"
#include "uanll/errors.hpp"

namespace uanll {

namespace {

std::vector<LabelVector> targets_for(const Dataset& ds, double smooth_rate) {
  std::vector<LabelVector> out;
  out.reserve(ds.size());
  for (const auto& img : ds.images) {
    out.push_back(smooth_labels(one_hot(img.label, ds.num_classes), smooth_rate));
  }
  return out;
}

void check_compatible(const Dataset& ds, const TwoHeadMlp& model, const char* which) {
  if (ds.empty()) throw ConfigError(std::string(which) + " set is empty");
  ds.validate();
  if (ds.num_classes != model.num_classes()) {
    throw ShapeError(std::string(which) + " set class count differs from the model");
  }
  if (ds.images.front().pixels.size() != model.input_dim()) {
    throw ShapeError(std::string(which) + " images do not match the model input width");
  }
}

}  // namespace

std::string to_string(LossKind kind) {
  switch (kind) {
    case LossKind::Uanll: return "uanll";
    case LossKind::CrossEntropy: return "ce";
    case LossKind::Ablation: return "ablation";
  }
  return "?";
}

LossKind loss_kind_from_string(const std::string& name) {
  if (name == "uanll") return LossKind::Uanll;
  if (name == "ce") return LossKind::CrossEntropy;
  if (name == "ablation") return LossKind::Ablation;
  throw ConfigError("unknown loss kind '" + name + "' (expected uanll, ce or ablation)");
}

void TrainConfig::validate() const {
  if (!(lr0 > 0.0)) throw ConfigError("lr0 must be positive");
  if (decay_start_epoch > epochs) throw ConfigError("decay_start_epoch exceeds epochs");
  if (batch_size < 1) throw ConfigError("batch_size must be positive");
  if (!(smooth_rate >= 0.0 && smooth_rate <= 1.0)) throw ConfigError("smooth_rate must lie in [0, 1]");
  if (!(aug_scale > 0.0 && aug_scale <= 1.0)) throw ConfigError("aug_scale must lie in (0, 1]");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("Adam betas must lie in [0, 1)");
  }
  if (!(eps_adam > 0.0)) throw ConfigError("eps_adam must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
}

double lr_schedule(std::size_t epoch, const TrainConfig& cfg) {
  if (epoch <= cfg.decay_start_epoch || cfg.epochs == cfg.decay_start_epoch) return cfg.lr0;
  return cfg.lr0 * static_cast<double>(cfg.epochs - epoch) /
         static_cast<double>(cfg.epochs - cfg.decay_start_epoch);
}

AdamState AdamState::zeros_like(const TwoHeadMlp& model) {
  AdamState st;
  for (const auto& p : model.parameters()) {
    st.m.emplace_back(p.rows(), p.cols());
    st.v.emplace_back(p.rows(), p.cols());
  }
  return st;
}

void adam_step(TwoHeadMlp& model, const GradientSet& grads, AdamState& state, double lr,
               const TrainConfig& cfg) {
  if (!grads.matches(model)) throw ShapeError("gradients do not match the model");
  auto params = model.parameters();
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ShapeError("Adam state does not match the model");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bias1 = 1.0 - std::pow(cfg.beta1, t);
  const double bias2 = 1.0 - std::pow(cfg.beta2, t);
  const double coupled = cfg.decoupled_weight_decay ? 0.0 : cfg.weight_decay;
  const double decoupled = cfg.decoupled_weight_decay ? cfg.weight_decay : 0.0;
  for (std::size_t l = 0; l < params.size(); ++l) {
    if (!state.m[l].same_shape(params[l]) || !state.v[l].same_shape(params[l])) {
      throw ShapeError("Adam state does not match the model");
    }
    auto w = params[l].data();
    auto g = grads.grads[l].data();
    auto m = state.m[l].data();
    auto v = state.v[l].data();
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double gk = g[k] + coupled * w[k];
      m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * gk;
      v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * gk * gk;
      const double m_hat = m[k] / bias1;
      const double v_hat = v[k] / bias2;
      w[k] -= lr * (m_hat / (std::sqrt(v_hat) + cfg.eps_adam) + decoupled * w[k]);
    }
  }
}

BatchLoss compute_loss(LossKind kind, std::span<const LabelVector> targets,
                       std::span<const Prediction> preds) {
  switch (kind) {
    case LossKind::Uanll: return uanll_loss(targets, preds);
    case LossKind::CrossEntropy: return cross_entropy_loss(targets, preds);
    case LossKind::Ablation: return ablation_loss(targets, preds);
  }
  throw ConfigError("unknown loss kind");
}

BatchResult evaluate_loss(const TwoHeadMlp& model, const Dataset& ds, const TrainConfig& cfg) {
  check_compatible(ds, model, "evaluation");
  const auto targets = targets_for(ds, cfg.smooth_rate);
  std::vector<Prediction> preds;
  preds.reserve(ds.size());
  BatchResult r;
  for (const auto& img : ds.images) {
    preds.push_back(predict(model, img.pixels));
    const auto& h = preds.back().h;
    const auto cls = static_cast<std::size_t>(std::max_element(h.begin(), h.end()) - h.begin());
    r.correct += cls == img.label ? 1 : 0;
  }
  r.loss = compute_loss(cfg.loss_kind, targets, preds).value;
  return r;
}

TrainResult train_model(const Dataset& train, const Dataset& val, const TwoHeadMlp& init,
                        const TrainConfig& cfg) {
  cfg.validate();
  TrainResult result{init, {}};
  if (cfg.epochs == 0) return result;
  check_compatible(train, init, "training");
  check_compatible(val, init, "validation");

  const auto train_targets = targets_for(train, cfg.smooth_rate);
  TwoHeadMlp model = init;
  AdamState adam = AdamState::zeros_like(model);
  Rng rng(cfg.seed);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  double best_val = std::numeric_limits<double>::infinity();

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const double lr = lr_schedule(epoch, cfg);
    rng.shuffle(order);
    double loss_sum = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++batch_index) {
      const std::size_t end = std::min(start + cfg.batch_size, order.size());
      std::vector<LabelVector> targets;
      std::vector<Prediction> preds;
      std::vector<ForwardCache> caches;
      targets.reserve(end - start);
      preds.reserve(end - start);
      caches.reserve(end - start);
      for (std::size_t i = start; i < end; ++i) {
        const auto& img = train.images[order[i]];
        ForwardPass pass = cfg.aug_scale < 1.0
                               ? model_forward(model, random_resized_crop(img, cfg.aug_scale, rng).pixels)
                               : model_forward(model, img.pixels);
        targets.push_back(train_targets[order[i]]);
        preds.push_back(std::move(pass.prediction));
        caches.push_back(std::move(pass.cache));
      }
      const BatchLoss loss = compute_loss(cfg.loss_kind, targets, preds);
      if (!std::isfinite(loss.value)) {
        throw TrainingError("non-finite training loss at epoch " + std::to_string(epoch) +
                                ", batch " + std::to_string(batch_index),
                            epoch, batch_index);
      }
      GradientSet grads = GradientSet::zeros_like(model);
      for (std::size_t i = 0; i < preds.size(); ++i) {
        const LossValue& lv = loss.per_sample[i];
        if (!lv.d_logits.empty()) {
          accumulate_backward_logits(model, caches[i], lv.d_logits, lv.d_s, grads);
        } else {
          accumulate_backward_logits(model, caches[i], softmax_vjp(preds[i].h, lv.d_h), lv.d_s,
                                     grads);
        }
      }
      adam_step(model, grads, adam, lr, cfg);
      loss_sum += loss.value * static_cast<double>(end - start);
    }

    const BatchResult v = evaluate_loss(model, val, cfg);
    if (!std::isfinite(v.loss)) {
      throw TrainingError("non-finite validation loss at epoch " + std::to_string(epoch), epoch, 0);
    }
    result.log.epochs.push_back({epoch, lr, loss_sum / static_cast<double>(train.size()), v.loss,
                                 static_cast<double>(v.correct) / static_cast<double>(val.size())});
    if (v.loss < best_val) {
      best_val = v.loss;
      result.log.best_epoch = epoch;
      result.model = model;
    }
  }
  return result;
}

std::string train_log_csv(const TrainLog& log) {
  std::ostringstream out;
  out << "epoch,lr,train_loss,val_loss,val_acc\n";
  for (const auto& e : log.epochs) {
    out << e.epoch << ',' << detail::fmt_double(e.lr) << ',' << detail::fmt_double(e.train_loss)
        << ',' << detail::fmt_double(e.val_loss) << ',' << detail::fmt_double(e.val_accuracy)
        << '\n';
  }
  return out.str();
}

}  // namespace uanll
