#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "curvlab/autodiff.hpp"
#include "curvlab/numkit.hpp"

namespace curvlab {

enum class Activation { Sigmoid, Tanh };

Activation parse_activation(const std::string& name);
std::string to_string(Activation a);

/// Offsets of one dense layer inside the flat parameter vector. Weights are
/// stored row-major as [out][in], followed by the out biases.
struct LayerLayout {
  std::size_t in = 0;
  std::size_t out = 0;
  std::size_t weight_offset = 0;
  std::size_t bias_offset = 0;
};

/// Fully connected classifier with softmax output. widths = {d, hidden..., C}.
class MlpModel {
 public:
  MlpModel(std::vector<std::size_t> widths, Activation hidden_activation);
  MlpModel(std::vector<std::size_t> widths, std::vector<Activation> hidden_activations);

  std::size_t input_dim() const { return widths_.front(); }
  std::size_t num_classes() const { return widths_.back(); }
  std::size_t parameter_count() const { return parameter_count_; }
  const std::vector<std::size_t>& widths() const { return widths_; }
  const std::vector<Activation>& activations() const { return activations_; }
  const std::vector<LayerLayout>& layout() const { return layout_; }

  const Vector& parameters() const { return params_; }
  Vector& parameters() { return params_; }
  void set_parameters(Vector p);

  /// Glorot-uniform weights, zero biases.
  void initialize(RngStream& rng);

  /// Pre-softmax outputs for one input row.
  template <class T>
  std::vector<T> logits(std::span<const T> params, std::span<const double> x) const;

  /// Softmax probabilities for one input row.
  template <class T>
  std::vector<T> probabilities(std::span<const T> params, std::span<const double> x) const;

 private:
  std::vector<std::size_t> widths_;
  std::vector<Activation> activations_;
  std::vector<LayerLayout> layout_;
  std::size_t parameter_count_ = 0;
  Vector params_;
};

/// Inputs with integer labels and optional soft targets q(y|x).
struct LabeledBatch {
  Matrix inputs;
  std::vector<int> labels;
  std::optional<Matrix> soft_targets;

  std::size_t size() const { return labels.size(); }

  /// Row-stochastic n x C targets: the soft targets when present, one-hot otherwise.
  Matrix targets(std::size_t classes) const;

  LabeledBatch subset(std::span<const std::size_t> rows) const;

  /// Throws ValidationError on shape, label-range, or soft-target-row violations.
  void validate(std::size_t input_dim, std::size_t classes) const;
};

/// n x C probabilities of the model at its current parameters.
Matrix forward_probs(const MlpModel& model, const Matrix& inputs);

/// n x C probabilities as tape variables, flattened row-major.
std::vector<ad::Var> forward_probs(const MlpModel& model, std::span<const ad::Var> params, const Matrix& inputs);

}  // namespace curvlab
