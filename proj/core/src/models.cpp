#include "curvlab/models.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "curvlab/error.hpp"

namespace curvlab {

namespace {

inline double mul_add(double acc, double w, double x) { return acc + w * x; }
inline ad::Var mul_add(ad::Var acc, ad::Var w, double x) { return ad::fma(acc, w, x); }
inline double mul_add(double acc, double w, double h, int) { return acc + w * h; }
inline ad::Var mul_add(ad::Var acc, ad::Var w, ad::Var h, int) { return acc + w * h; }

inline double activate(double z, Activation a) {
  if (a == Activation::Tanh) return std::tanh(z);
  return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}
inline ad::Var activate(ad::Var z, Activation a) { return a == Activation::Tanh ? ad::tanh(z) : ad::sigmoid(z); }

inline double value_of(double x) { return x; }
inline double value_of(const ad::Var& x) { return x.value(); }

inline double exp_of(double x) { return std::exp(x); }
inline ad::Var exp_of(ad::Var x) { return ad::exp(x); }

}  // namespace

Activation parse_activation(const std::string& name) {
  if (name == "tanh") return Activation::Tanh;
  if (name == "sigmoid") return Activation::Sigmoid;
  throw ValidationError("unknown activation '" + name + "' (expected tanh or sigmoid)");
}

std::string to_string(Activation a) { return a == Activation::Tanh ? "tanh" : "sigmoid"; }

MlpModel::MlpModel(std::vector<std::size_t> widths, Activation hidden_activation)
    : MlpModel(widths, std::vector<Activation>(widths.size() >= 2 ? widths.size() - 2 : 0, hidden_activation)) {}

MlpModel::MlpModel(std::vector<std::size_t> widths, std::vector<Activation> hidden_activations)
    : widths_(std::move(widths)), activations_(std::move(hidden_activations)) {
  if (widths_.size() < 2) throw ValidationError("MlpModel: need at least input and output widths");
  if (std::any_of(widths_.begin(), widths_.end(), [](std::size_t w) { return w == 0; }))
    throw ValidationError("MlpModel: layer widths must be positive");
  if (widths_.back() < 2) throw ValidationError("MlpModel: need at least two classes");
  if (activations_.size() != widths_.size() - 2)
    throw ValidationError("MlpModel: need one activation per hidden layer");
  std::size_t offset = 0;
  for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
    LayerLayout layer;
    layer.in = widths_[l];
    layer.out = widths_[l + 1];
    layer.weight_offset = offset;
    offset += layer.in * layer.out;
    layer.bias_offset = offset;
    offset += layer.out;
    layout_.push_back(layer);
  }
  parameter_count_ = offset;
  params_.assign(parameter_count_, 0.0);
}

void MlpModel::set_parameters(Vector p) {
  if (p.size() != parameter_count_) throw ValidationError("MlpModel: parameter vector has wrong length");
  params_ = std::move(p);
}

void MlpModel::initialize(RngStream& rng) {
  std::fill(params_.begin(), params_.end(), 0.0);
  for (const auto& layer : layout_) {
    const double limit = std::sqrt(6.0 / static_cast<double>(layer.in + layer.out));
    for (std::size_t k = 0; k < layer.in * layer.out; ++k) params_[layer.weight_offset + k] = rng.uniform(-limit, limit);
  }
}

template <class T>
std::vector<T> MlpModel::logits(std::span<const T> params, std::span<const double> x) const {
  if (x.size() != input_dim()) {
    std::ostringstream msg;
    msg << "MlpModel: input width " << x.size() << " does not match model input " << input_dim();
    throw ValidationError(msg.str());
  }
  if (params.size() != parameter_count_) throw ValidationError("MlpModel: parameter vector has wrong length");

  const LayerLayout& first = layout_.front();
  std::vector<T> h;
  h.reserve(first.out);
  for (std::size_t o = 0; o < first.out; ++o) {
    T acc = params[first.bias_offset + o];
    const std::size_t row = first.weight_offset + o * first.in;
    for (std::size_t i = 0; i < first.in; ++i) acc = mul_add(acc, params[row + i], x[i]);
    h.push_back(acc);
  }

  for (std::size_t l = 1; l < layout_.size(); ++l) {
    for (T& z : h) z = activate(z, activations_[l - 1]);
    const LayerLayout& layer = layout_[l];
    std::vector<T> next;
    next.reserve(layer.out);
    for (std::size_t o = 0; o < layer.out; ++o) {
      T acc = params[layer.bias_offset + o];
      const std::size_t row = layer.weight_offset + o * layer.in;
      for (std::size_t i = 0; i < layer.in; ++i) acc = mul_add(acc, params[row + i], h[i], 0);
      next.push_back(acc);
    }
    h = std::move(next);
  }
  return h;
}

template <class T>
std::vector<T> MlpModel::probabilities(std::span<const T> params, std::span<const double> x) const {
  std::vector<T> z = logits(params, x);
  // Shift by the largest logit; the shift is a constant so gradients are unchanged.
  double shift = value_of(z.front());
  for (const T& v : z) shift = std::max(shift, value_of(v));
  std::vector<T> e;
  e.reserve(z.size());
  for (const T& v : z) e.push_back(exp_of(v - shift));
  T total = e.front();
  for (std::size_t k = 1; k < e.size(); ++k) total = total + e[k];
  for (T& v : e) v = v / total;
  return e;
}

template std::vector<double> MlpModel::logits(std::span<const double>, std::span<const double>) const;
template std::vector<ad::Var> MlpModel::logits(std::span<const ad::Var>, std::span<const double>) const;
template std::vector<double> MlpModel::probabilities(std::span<const double>, std::span<const double>) const;
template std::vector<ad::Var> MlpModel::probabilities(std::span<const ad::Var>, std::span<const double>) const;

Matrix LabeledBatch::targets(std::size_t classes) const {
  if (soft_targets) return *soft_targets;
  Matrix t(labels.size(), classes);
  for (std::size_t i = 0; i < labels.size(); ++i) t(i, static_cast<std::size_t>(labels[i])) = 1.0;
  return t;
}

LabeledBatch LabeledBatch::subset(std::span<const std::size_t> rows) const {
  LabeledBatch out;
  out.inputs = Matrix(rows.size(), inputs.cols());
  out.labels.reserve(rows.size());
  if (soft_targets) out.soft_targets = Matrix(rows.size(), soft_targets->cols());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const std::size_t r = rows[k];
    std::copy(inputs.row(r).begin(), inputs.row(r).end(), out.inputs.row(k).begin());
    out.labels.push_back(labels[r]);
    if (soft_targets)
      std::copy(soft_targets->row(r).begin(), soft_targets->row(r).end(), out.soft_targets->row(k).begin());
  }
  return out;
}

void LabeledBatch::validate(std::size_t input_dim, std::size_t classes) const {
  if (inputs.rows() != labels.size()) throw ValidationError("batch: input rows and label count differ");
  if (inputs.cols() != input_dim) {
    std::ostringstream msg;
    msg << "batch: input width " << inputs.cols() << " does not match model input " << input_dim;
    throw ValidationError(msg.str());
  }
  if (!inputs.all_finite()) throw ValidationError("batch: non-finite input");
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
      std::ostringstream msg;
      msg << "batch: label " << labels[i] << " at row " << i << " outside [0, " << classes << ")";
      throw ValidationError(msg.str());
    }
  if (soft_targets) {
    if (soft_targets->rows() != labels.size() || soft_targets->cols() != classes)
      throw ValidationError("batch: soft targets must be n x C");
    for (std::size_t i = 0; i < soft_targets->rows(); ++i) {
      double s = 0.0;
      for (double q : soft_targets->row(i)) {
        if (q < 0.0 || !std::isfinite(q)) throw ValidationError("batch: soft target entries must be finite and >= 0");
        s += q;
      }
      if (std::abs(s - 1.0) > 1e-9) {
        std::ostringstream msg;
        msg << "batch: soft target row " << i << " sums to " << s;
        throw ValidationError(msg.str());
      }
    }
  }
}

Matrix forward_probs(const MlpModel& model, const Matrix& inputs) {
  if (inputs.cols() != model.input_dim()) {
    std::ostringstream msg;
    msg << "forward_probs: input width " << inputs.cols() << " does not match model input " << model.input_dim();
    throw ValidationError(msg.str());
  }
  Matrix probs(inputs.rows(), model.num_classes());
  const std::span<const double> params(model.parameters());
  for (std::size_t i = 0; i < inputs.rows(); ++i) {
    const auto p = model.probabilities(params, inputs.row(i));
    std::copy(p.begin(), p.end(), probs.row(i).begin());
  }
  return probs;
}

std::vector<ad::Var> forward_probs(const MlpModel& model, std::span<const ad::Var> params, const Matrix& inputs) {
  std::vector<ad::Var> out;
  out.reserve(inputs.rows() * model.num_classes());
  for (std::size_t i = 0; i < inputs.rows(); ++i) {
    const auto p = model.probabilities(params, inputs.row(i));
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

}  // namespace curvlab
