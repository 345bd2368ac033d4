#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "uanll/rng.hpp"

namespace uanll {

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  bool all_finite() const;
  bool same_shape(const Matrix& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// Max-subtracted softmax. Throws InvalidInputError on empty or non-finite input.
std::vector<double> softmax(std::span<const double> logits);

double sigmoid(double x);

enum class Activation { Tanh, Relu };

std::string to_string(Activation act);
Activation activation_from_string(const std::string& name);

/// Class-probability vector h and log-variance s of one sample.
struct Prediction {
  std::vector<double> h;
  double s = 0.0;
};

/// Multilayer perceptron with a shared trunk and two affine heads: a
/// softmax classification head with N outputs and a scalar log-variance head.
///
/// Every layer is stored as an augmented matrix of shape (out, in + 1) whose
/// last column is the bias. Parameter order is trunk layers, class head,
/// variance head; this is also the checkpoint order.
class TwoHeadMlp {
 public:
  /// All-zero model. `layer_dims` is input width, then the width of each
  /// trunk layer; a single entry means the heads read the input directly.
  TwoHeadMlp(std::vector<std::size_t> layer_dims, std::size_t num_classes,
             Activation activation = Activation::Tanh);

  /// Rebuilds a model from its parameter matrices (checkpoint order).
  static TwoHeadMlp from_parameters(std::vector<Matrix> parameters, Activation activation);

  const std::vector<std::size_t>& layer_dims() const { return layer_dims_; }
  std::size_t input_dim() const { return layer_dims_.front(); }
  std::size_t trunk_width() const { return layer_dims_.back(); }
  std::size_t trunk_depth() const { return layer_dims_.size() - 1; }
  std::size_t num_classes() const { return num_classes_; }
  Activation activation() const { return activation_; }

  std::span<const Matrix> parameters() const { return params_; }
  std::span<Matrix> parameters() { return params_; }
  const Matrix& trunk_layer(std::size_t l) const { return params_[l]; }
  const Matrix& class_head() const { return params_[params_.size() - 2]; }
  const Matrix& var_head() const { return params_.back(); }
  Matrix& class_head() { return params_[params_.size() - 2]; }
  Matrix& var_head() { return params_.back(); }

  std::size_t parameter_count() const;

  bool operator==(const TwoHeadMlp&) const = default;

 private:
  TwoHeadMlp() = default;

  std::vector<std::size_t> layer_dims_;
  std::size_t num_classes_ = 0;
  Activation activation_ = Activation::Tanh;
  std::vector<Matrix> params_;
};

/// Glorot-uniform weights in +-sqrt(6 / (fan_in + fan_out)), zero biases.
TwoHeadMlp init_glorot(std::vector<std::size_t> layer_dims, std::size_t num_classes,
                       Activation activation, Rng& rng);

/// Intermediates of one forward pass, sufficient for an exact backward pass.
struct ForwardCache {
  std::vector<std::vector<double>> inputs;  // input of each trunk layer, then trunk output
  std::vector<std::vector<double>> pre;     // pre-activation of each trunk layer
  std::vector<double> logits;
  std::vector<double> h;
};

struct ForwardPass {
  Prediction prediction;
  ForwardCache cache;
};

ForwardPass model_forward(const TwoHeadMlp& model, std::span<const double> x);

/// Forward pass without keeping the cache.
Prediction predict(const TwoHeadMlp& model, std::span<const double> x);

/// Per-parameter gradients, same shapes and order as TwoHeadMlp::parameters().
struct GradientSet {
  std::vector<Matrix> grads;

  static GradientSet zeros_like(const TwoHeadMlp& model);
  void add(const GradientSet& other);
  bool all_finite() const;
  bool matches(const TwoHeadMlp& model) const;
};

/// Reverse-mode gradients given cotangents on the probabilities h and on s.
GradientSet model_backward(const TwoHeadMlp& model, const ForwardCache& cache,
                           std::span<const double> d_h, double d_s);

/// Same, with the cotangent given on the pre-softmax logits.
GradientSet model_backward_logits(const TwoHeadMlp& model, const ForwardCache& cache,
                                  std::span<const double> d_logits, double d_s);

/// Accumulating form of model_backward_logits; adds into `into`.
void accumulate_backward_logits(const TwoHeadMlp& model, const ForwardCache& cache,
                                std::span<const double> d_logits, double d_s,
                                GradientSet& into);

/// Cotangent on the logits from a cotangent on the softmax output.
std::vector<double> softmax_vjp(std::span<const double> h, std::span<const double> d_h);

using ModelLossFn = std::function<double(const TwoHeadMlp&)>;

/// Central differences (f(w + eps) - f(w - eps)) / (2 eps), one parameter at a time.
GradientSet finite_difference_grad(const ModelLossFn& loss_fn, const TwoHeadMlp& model,
                                   double eps = 1e-5);

// Checkpoint container: "UCLS0001", u32 layer count, then per layer u32 rows,
// u32 cols and rows * cols f64 values, all little-endian. The activation is
// not part of the container and must be supplied when decoding.
std::vector<std::uint8_t> encode_checkpoint(const TwoHeadMlp& model);
TwoHeadMlp decode_checkpoint(std::span<const std::uint8_t> bytes, Activation activation);
void save_checkpoint(const TwoHeadMlp& model, const std::string& path);
TwoHeadMlp load_checkpoint(const std::string& path, Activation activation);

}  // namespace uanll
