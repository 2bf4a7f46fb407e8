#pragma once

#include <span>
#include <string>
#include <variant>
#include <vector>

#include "curvlab/autodiff.hpp"
#include "curvlab/models.hpp"
#include "curvlab/numkit.hpp"

namespace curvlab {

/// Probabilities are clamped to at least kProbFloor before ln, and to at most
/// kProbCeil before forming the focal weight (1 - p)^gamma.
inline constexpr double kProbFloor = 1e-12;
inline constexpr double kProbCeil = 1.0 - 1e-12;

struct CrossEntropyLoss {};

struct FocalParams {
  double gamma = 0.0;
};

struct TraceRegParams {
  double tau = 0.0;
  std::size_t probes = 1;
};

using LossSpec = std::variant<CrossEntropyLoss, FocalParams, TraceRegParams>;

/// Throws ValidationError naming the offending field ("loss.gamma", ...).
void validate(const LossSpec& spec);
std::string loss_kind(const LossSpec& spec);

/// Focal exponent for the data term: gamma for focal, 0 otherwise.
double data_gamma(const LossSpec& spec);

/// Recommended focal grid; (0, 0.5) is excluded because the focal gradient
/// diverges as p -> 1 there.
inline const std::vector<double> kDefaultGammaGrid = {0.0, 0.5, 1.0, 2.0, 3.0, 5.0};

// Batch losses over n x C probabilities and row-stochastic targets, averaged
// over rows.

double cross_entropy(const Matrix& probs, const Matrix& targets);
double focal_loss(const Matrix& probs, const Matrix& targets, double gamma);
double conditional_entropy(const Matrix& probs);

/// focal - (cross_entropy - gamma * conditional_entropy). Nonnegative for
/// gamma >= 1; may be negative for 0 < gamma < 1.
double focal_lower_bound_gap(const Matrix& probs, const Matrix& targets, double gamma);

/// Number of probabilities on a supported class that hit the ln floor.
std::size_t count_clamped(const Matrix& probs, const Matrix& targets);

/// g(p, gamma) = (1-p)^gamma * (gamma p (1-p)^(gamma-1) - (1-p)^gamma ln p).
double focal_pointwise_gradient(double p, double gamma);

/// d/dp [-(1-p)^gamma ln p], for comparison with focal_pointwise_gradient.
double focal_plain_derivative(double p, double gamma);

/// (1 - p0)^gamma: the factor focal loss puts on the quadratic Taylor term.
double focal_curvature_scale(double p0, double gamma);

// Differentiable forms. probs is n x C flattened row-major.

ad::Var cross_entropy(std::span<const ad::Var> probs, const Matrix& targets, double normalizer);
ad::Var focal_loss(std::span<const ad::Var> probs, const Matrix& targets, double gamma, double normalizer);

/// CE (gamma = 0) or focal data term of the model on a batch, summed over rows
/// and divided by normalizer. Trace-regularized specs contribute their CE term.
ad::Var data_loss(ad::Tape& tape, std::span<const ad::Var> params, const MlpModel& model, const Matrix& inputs,
                  const Matrix& targets, const LossSpec& spec, double normalizer);

/// (1/M) sum_i v_i^T H v_i, H the Hessian of objective w.r.t. params, as a
/// differentiable tape variable.
ad::Var trace_penalty(ad::Tape& tape, ad::Var objective, std::span<const ad::Var> params,
                      std::span<const Vector> probes);

/// Full training objective on a batch: data loss, plus tau * trace_penalty for
/// trace-regularized specs (probes ignored otherwise, and when tau == 0).
ad::Var training_objective(ad::Tape& tape, std::span<const ad::Var> params, const MlpModel& model,
                           const Matrix& inputs, const Matrix& targets, const LossSpec& spec,
                           std::span<const Vector> probes);

/// cross_entropy + tau * Hutchinson(M) trace of the CE Hessian with fresh
/// Rademacher probes from rng, at the model's current parameters.
double trace_regularized_loss(const MlpModel& model, const LabeledBatch& batch, double tau, std::size_t probes,
                              RngStream& rng);

}  // namespace curvlab
