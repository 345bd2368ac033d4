#include "uanll/ndmath.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "uanll/detail/binary_io.hpp"
#include "uanll/errors.hpp"

namespace uanll {

namespace {

constexpr std::string_view kCheckpointMagic = "UCLS0001";

// y = W [x; 1] for an augmented (out, in + 1) matrix.
void affine(const Matrix& w, std::span<const double> x, std::span<double> y) {
  const std::size_t in = w.cols() - 1;
  for (std::size_t r = 0; r < w.rows(); ++r) {
    const auto row = w.row(r);
    double acc = row[in];
    for (std::size_t c = 0; c < in; ++c) acc += row[c] * x[c];
    y[r] = acc;
  }
}

// grad += dy [x; 1]^T, and dx += W[:, :in]^T dy when dx is non-empty.
void affine_backward(const Matrix& w, std::span<const double> x, std::span<const double> dy,
                     Matrix& grad, std::span<double> dx) {
  const std::size_t in = w.cols() - 1;
  for (std::size_t r = 0; r < w.rows(); ++r) {
    const double g = dy[r];
    if (g == 0.0) continue;
    auto grow = grad.row(r);
    for (std::size_t c = 0; c < in; ++c) grow[c] += g * x[c];
    grow[in] += g;
    if (!dx.empty()) {
      const auto wrow = w.row(r);
      for (std::size_t c = 0; c < in; ++c) dx[c] += wrow[c] * g;
    }
  }
}

double activate(Activation act, double v) {
  return act == Activation::Tanh ? std::tanh(v) : (v > 0.0 ? v : 0.0);
}

// Derivative expressed through the pre-activation and the activation output.
double activate_grad(Activation act, double pre, double out) {
  return act == Activation::Tanh ? 1.0 - out * out : (pre > 0.0 ? 1.0 : 0.0);
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw ShapeError("matrix data length does not match rows x cols");
  }
}

bool Matrix::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

std::vector<double> softmax(std::span<const double> logits) {
  if (logits.empty()) throw InvalidInputError("softmax of empty vector");
  if (!std::all_of(logits.begin(), logits.end(), [](double v) { return std::isfinite(v); })) {
    throw InvalidInputError("softmax input is not finite");
  }
  const double top = *std::max_element(logits.begin(), logits.end());
  std::vector<double> out(logits.size());
  double total = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    out[k] = std::exp(logits[k] - top);
    total += out[k];
  }
  for (double& v : out) v /= total;
  return out;
}

double sigmoid(double x) {
  // Branches keep exp() from overflowing for large |x|.
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

std::string to_string(Activation act) { return act == Activation::Tanh ? "tanh" : "relu"; }

Activation activation_from_string(const std::string& name) {
  if (name == "tanh") return Activation::Tanh;
  if (name == "relu") return Activation::Relu;
  throw ConfigError("unknown activation '" + name + "'");
}

TwoHeadMlp::TwoHeadMlp(std::vector<std::size_t> layer_dims, std::size_t num_classes,
                       Activation activation)
    : layer_dims_(std::move(layer_dims)), num_classes_(num_classes), activation_(activation) {
  if (layer_dims_.empty()) throw ConfigError("layer_dims must name the input width");
  if (num_classes_ < 1) throw ConfigError("model needs at least one class");
  if (std::find(layer_dims_.begin(), layer_dims_.end(), 0u) != layer_dims_.end()) {
    throw ConfigError("layer widths must be positive");
  }
  for (std::size_t l = 0; l + 1 < layer_dims_.size(); ++l) {
    params_.emplace_back(layer_dims_[l + 1], layer_dims_[l] + 1);
  }
  params_.emplace_back(num_classes_, trunk_width() + 1);
  params_.emplace_back(1, trunk_width() + 1);
}

TwoHeadMlp TwoHeadMlp::from_parameters(std::vector<Matrix> parameters, Activation activation) {
  if (parameters.size() < 2) throw ShapeError("a model needs at least the two head layers");
  TwoHeadMlp model;
  model.activation_ = activation;
  const std::size_t trunk = parameters.size() - 2;
  if (parameters[0].cols() < 2) throw ShapeError("layer must have at least one input");
  model.layer_dims_.push_back(parameters[0].cols() - 1);
  for (std::size_t l = 0; l < trunk; ++l) {
    if (parameters[l].cols() != model.layer_dims_.back() + 1 || parameters[l].rows() == 0) {
      throw ShapeError("trunk layer " + std::to_string(l) + " does not chain");
    }
    model.layer_dims_.push_back(parameters[l].rows());
  }
  const std::size_t width = model.layer_dims_.back();
  const Matrix& cls = parameters[trunk];
  const Matrix& var = parameters[trunk + 1];
  if (cls.cols() != width + 1 || cls.rows() == 0) throw ShapeError("class head shape mismatch");
  if (var.cols() != width + 1 || var.rows() != 1) throw ShapeError("variance head must be 1 x (width + 1)");
  for (const auto& p : parameters) {
    if (!p.all_finite()) throw InvalidInputError("non-finite model parameter");
  }
  model.num_classes_ = cls.rows();
  model.params_ = std::move(parameters);
  return model;
}

std::size_t TwoHeadMlp::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.size();
  return n;
}

TwoHeadMlp init_glorot(std::vector<std::size_t> layer_dims, std::size_t num_classes,
                       Activation activation, Rng& rng) {
  TwoHeadMlp model(std::move(layer_dims), num_classes, activation);
  for (Matrix& w : model.parameters()) {
    const std::size_t fan_in = w.cols() - 1;
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + w.rows()));
    for (std::size_t r = 0; r < w.rows(); ++r) {
      for (std::size_t c = 0; c < fan_in; ++c) w(r, c) = rng.uniform(-limit, limit);
    }
  }
  return model;
}

ForwardPass model_forward(const TwoHeadMlp& model, std::span<const double> x) {
  if (x.size() != model.input_dim()) {
    throw ShapeError("input has " + std::to_string(x.size()) + " features, model expects " +
                     std::to_string(model.input_dim()));
  }
  ForwardPass pass;
  ForwardCache& cache = pass.cache;
  const std::size_t depth = model.trunk_depth();
  cache.inputs.reserve(depth + 1);
  cache.pre.reserve(depth);
  cache.inputs.emplace_back(x.begin(), x.end());
  for (std::size_t l = 0; l < depth; ++l) {
    const Matrix& w = model.trunk_layer(l);
    std::vector<double> pre(w.rows());
    affine(w, cache.inputs.back(), pre);
    std::vector<double> out(pre.size());
    for (std::size_t k = 0; k < pre.size(); ++k) out[k] = activate(model.activation(), pre[k]);
    cache.pre.push_back(std::move(pre));
    cache.inputs.push_back(std::move(out));
  }
  const auto& trunk_out = cache.inputs.back();
  cache.logits.resize(model.num_classes());
  affine(model.class_head(), trunk_out, cache.logits);
  double s = 0.0;
  affine(model.var_head(), trunk_out, std::span<double>(&s, 1));
  cache.h = softmax(cache.logits);
  if (!std::isfinite(s)) throw InvalidInputError("log-variance output is not finite");
  pass.prediction = Prediction{cache.h, s};
  return pass;
}

Prediction predict(const TwoHeadMlp& model, std::span<const double> x) {
  return std::move(model_forward(model, x).prediction);
}

GradientSet GradientSet::zeros_like(const TwoHeadMlp& model) {
  GradientSet g;
  for (const auto& p : model.parameters()) g.grads.emplace_back(p.rows(), p.cols());
  return g;
}

void GradientSet::add(const GradientSet& other) {
  if (other.grads.size() != grads.size()) throw ShapeError("gradient sets differ in layer count");
  for (std::size_t l = 0; l < grads.size(); ++l) {
    if (!grads[l].same_shape(other.grads[l])) throw ShapeError("gradient layer shape mismatch");
    auto dst = grads[l].data();
    auto src = other.grads[l].data();
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
  }
}

bool GradientSet::all_finite() const {
  return std::all_of(grads.begin(), grads.end(), [](const Matrix& m) { return m.all_finite(); });
}

bool GradientSet::matches(const TwoHeadMlp& model) const {
  const auto params = model.parameters();
  if (params.size() != grads.size()) return false;
  for (std::size_t l = 0; l < grads.size(); ++l) {
    if (!grads[l].same_shape(params[l])) return false;
  }
  return true;
}

std::vector<double> softmax_vjp(std::span<const double> h, std::span<const double> d_h) {
  if (h.size() != d_h.size()) throw ShapeError("softmax cotangent length mismatch");
  double dot = 0.0;
  for (std::size_t k = 0; k < h.size(); ++k) dot += h[k] * d_h[k];
  std::vector<double> d_logits(h.size());
  for (std::size_t k = 0; k < h.size(); ++k) d_logits[k] = h[k] * (d_h[k] - dot);
  return d_logits;
}

void accumulate_backward_logits(const TwoHeadMlp& model, const ForwardCache& cache,
                                std::span<const double> d_logits, double d_s,
                                GradientSet& into) {
  const std::size_t depth = model.trunk_depth();
  if (cache.inputs.size() != depth + 1 || cache.pre.size() != depth ||
      cache.logits.size() != model.num_classes() ||
      cache.inputs.front().size() != model.input_dim()) {
    throw InvalidStateError("forward cache does not belong to this model");
  }
  for (std::size_t l = 0; l < depth; ++l) {
    if (cache.pre[l].size() != model.layer_dims()[l + 1]) {
      throw InvalidStateError("forward cache does not belong to this model");
    }
  }
  if (d_logits.size() != model.num_classes()) throw ShapeError("logit cotangent length mismatch");
  if (!into.matches(model)) throw ShapeError("gradient set does not match model");

  const auto params = model.parameters();
  const auto& trunk_out = cache.inputs.back();
  std::vector<double> d_trunk(model.trunk_width(), 0.0);
  std::span<double> d_trunk_span = depth > 0 ? std::span<double>(d_trunk) : std::span<double>();
  affine_backward(model.class_head(), trunk_out, d_logits, into.grads[depth], d_trunk_span);
  affine_backward(model.var_head(), trunk_out, std::span<const double>(&d_s, 1),
                  into.grads[depth + 1], d_trunk_span);

  for (std::size_t l = depth; l-- > 0;) {
    const auto& pre = cache.pre[l];
    const auto& out = cache.inputs[l + 1];
    std::vector<double> d_pre(pre.size());
    for (std::size_t k = 0; k < pre.size(); ++k) {
      d_pre[k] = d_trunk[k] * activate_grad(model.activation(), pre[k], out[k]);
    }
    std::vector<double> d_in(l > 0 ? cache.inputs[l].size() : 0, 0.0);
    affine_backward(params[l], cache.inputs[l], d_pre, into.grads[l], d_in);
    d_trunk = std::move(d_in);
  }
}

GradientSet model_backward_logits(const TwoHeadMlp& model, const ForwardCache& cache,
                                  std::span<const double> d_logits, double d_s) {
  GradientSet g = GradientSet::zeros_like(model);
  accumulate_backward_logits(model, cache, d_logits, d_s, g);
  return g;
}

GradientSet model_backward(const TwoHeadMlp& model, const ForwardCache& cache,
                           std::span<const double> d_h, double d_s) {
  if (cache.h.size() != model.num_classes()) {
    throw InvalidStateError("forward cache does not belong to this model");
  }
  const auto d_logits = softmax_vjp(cache.h, d_h);
  return model_backward_logits(model, cache, d_logits, d_s);
}

GradientSet finite_difference_grad(const ModelLossFn& loss_fn, const TwoHeadMlp& model,
                                   double eps) {
  if (!(eps > 0.0)) throw DomainError("finite-difference step must be positive");
  GradientSet g = GradientSet::zeros_like(model);
  TwoHeadMlp probe = model;
  auto params = probe.parameters();
  for (std::size_t l = 0; l < params.size(); ++l) {
    auto values = params[l].data();
    auto out = g.grads[l].data();
    for (std::size_t k = 0; k < values.size(); ++k) {
      const double saved = values[k];
      values[k] = saved + eps;
      const double up = loss_fn(probe);
      values[k] = saved - eps;
      const double down = loss_fn(probe);
      values[k] = saved;
      out[k] = (up - down) / (2.0 * eps);
    }
  }
  return g;
}

std::vector<std::uint8_t> encode_checkpoint(const TwoHeadMlp& model) {
  std::vector<std::uint8_t> out;
  detail::put_magic(out, kCheckpointMagic);
  const auto params = model.parameters();
  detail::put_u32(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    detail::put_u32(out, static_cast<std::uint32_t>(p.rows()));
    detail::put_u32(out, static_cast<std::uint32_t>(p.cols()));
    for (double v : p.data()) detail::put_f64(out, v);
  }
  return out;
}

TwoHeadMlp decode_checkpoint(std::span<const std::uint8_t> bytes, Activation activation) {
  detail::ByteReader in(bytes);
  in.expect_magic(kCheckpointMagic);
  const std::uint32_t count = in.u32();
  std::vector<Matrix> params;
  for (std::uint32_t l = 0; l < count; ++l) {
    const std::size_t rows = in.u32();
    const std::size_t cols = in.u32();
    if (rows * cols > in.remaining() / 8) throw FormatError("checkpoint layer exceeds file size");
    std::vector<double> values(rows * cols);
    for (double& v : values) v = in.f64();
    params.emplace_back(rows, cols, std::move(values));
  }
  if (!in.done()) throw FormatError("trailing bytes after checkpoint");
  try {
    return TwoHeadMlp::from_parameters(std::move(params), activation);
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("invalid checkpoint: ") + e.what());
  }
}

void save_checkpoint(const TwoHeadMlp& model, const std::string& path) {
  detail::write_file(path, encode_checkpoint(model));
}

TwoHeadMlp load_checkpoint(const std::string& path, Activation activation) {
  return decode_checkpoint(detail::read_file(path), activation);
}

}  // namespace uanll
