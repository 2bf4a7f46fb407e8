#include "curvlab/losses.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "curvlab/error.hpp"

namespace curvlab {

namespace {

void require_same_shape(const Matrix& probs, const Matrix& targets) {
  if (probs.rows() != targets.rows() || probs.cols() != targets.cols())
    throw ValidationError("loss: probabilities and targets differ in shape");
  if (probs.rows() == 0) throw ValidationError("loss: empty batch");
}

// -sum_y q (1 - p)^gamma ln p, averaged over rows. gamma == 0 is plain CE.
double weighted_log_loss(const Matrix& probs, const Matrix& targets, double gamma) {
  require_same_shape(probs, targets);
  double acc = 0.0;
  for (std::size_t i = 0; i < probs.rows(); ++i) {
    for (std::size_t y = 0; y < probs.cols(); ++y) {
      const double q = targets(i, y);
      if (q == 0.0) continue;
      const double p = probs(i, y);
      const double lp = std::log(std::max(p, kProbFloor));
      const double term = gamma == 0.0 ? lp : std::pow(1.0 - std::min(p, kProbCeil), gamma) * lp;
      acc = acc + term * (-q);
    }
  }
  return acc * (1.0 / static_cast<double>(probs.rows()));
}

ad::Var weighted_log_loss(std::span<const ad::Var> probs, const Matrix& targets, double gamma, double normalizer) {
  if (probs.size() != targets.rows() * targets.cols() || probs.empty())
    throw ValidationError("loss: probabilities and targets differ in shape");
  ad::Tape& tape = *probs.front().tape();
  ad::Var acc = tape.constant(0.0);
  const std::size_t classes = targets.cols();
  for (std::size_t i = 0; i < targets.rows(); ++i) {
    for (std::size_t y = 0; y < classes; ++y) {
      const double q = targets(i, y);
      if (q == 0.0) continue;
      const ad::Var p = probs[i * classes + y];
      const ad::Var lp = ad::log(ad::max(p, kProbFloor));
      const ad::Var term = gamma == 0.0 ? lp : ad::pow(1.0 - ad::min(p, kProbCeil), gamma) * lp;
      acc = ad::fma(acc, term, -q);
    }
  }
  return acc / normalizer;
}

}  // namespace

void validate(const LossSpec& spec) {
  if (const auto* f = std::get_if<FocalParams>(&spec)) {
    if (!(f->gamma >= 0.0) || !std::isfinite(f->gamma)) throw ValidationError("loss.gamma must be a finite value >= 0");
  } else if (const auto* t = std::get_if<TraceRegParams>(&spec)) {
    if (!(t->tau >= 0.0) || !std::isfinite(t->tau)) throw ValidationError("loss.tau must be a finite value >= 0");
    if (t->probes < 1) throw ValidationError("loss.probes must be >= 1");
  }
}

std::string loss_kind(const LossSpec& spec) {
  if (std::holds_alternative<FocalParams>(spec)) return "focal";
  if (std::holds_alternative<TraceRegParams>(spec)) return "trace_reg";
  return "ce";
}

double data_gamma(const LossSpec& spec) {
  if (const auto* f = std::get_if<FocalParams>(&spec)) return f->gamma;
  return 0.0;
}

double cross_entropy(const Matrix& probs, const Matrix& targets) { return weighted_log_loss(probs, targets, 0.0); }

double focal_loss(const Matrix& probs, const Matrix& targets, double gamma) {
  if (!(gamma >= 0.0)) throw ValidationError("focal_loss: gamma must be >= 0");
  return weighted_log_loss(probs, targets, gamma);
}

double conditional_entropy(const Matrix& probs) {
  if (probs.rows() == 0) throw ValidationError("conditional_entropy: empty batch");
  double acc = 0.0;
  for (std::size_t i = 0; i < probs.rows(); ++i)
    for (double p : probs.row(i))
      if (p > 0.0) acc -= p * std::log(std::max(p, kProbFloor));
  return acc / static_cast<double>(probs.rows());
}

double focal_lower_bound_gap(const Matrix& probs, const Matrix& targets, double gamma) {
  return focal_loss(probs, targets, gamma) - (cross_entropy(probs, targets) - gamma * conditional_entropy(probs));
}

std::size_t count_clamped(const Matrix& probs, const Matrix& targets) {
  require_same_shape(probs, targets);
  std::size_t n = 0;
  for (std::size_t i = 0; i < probs.rows(); ++i)
    for (std::size_t y = 0; y < probs.cols(); ++y)
      if (targets(i, y) > 0.0 && probs(i, y) < kProbFloor) ++n;
  return n;
}

double focal_pointwise_gradient(double p, double gamma) {
  if (!(p > 0.0 && p < 1.0)) throw ValidationError("focal_pointwise_gradient: p must lie in (0, 1)");
  if (!(gamma >= 0.0)) throw ValidationError("focal_pointwise_gradient: gamma must be >= 0");
  const double q = 1.0 - p;
  const double w = std::pow(q, gamma);
  const double lead = gamma == 0.0 ? 0.0 : gamma * p * std::pow(q, gamma - 1.0);
  return w * (lead - w * std::log(p));
}

double focal_plain_derivative(double p, double gamma) {
  if (!(p > 0.0 && p < 1.0)) throw ValidationError("focal_plain_derivative: p must lie in (0, 1)");
  if (!(gamma >= 0.0)) throw ValidationError("focal_plain_derivative: gamma must be >= 0");
  const double q = 1.0 - p;
  const double lead = gamma == 0.0 ? 0.0 : gamma * std::pow(q, gamma - 1.0) * std::log(p);
  return lead - std::pow(q, gamma) / p;
}

double focal_curvature_scale(double p0, double gamma) {
  if (!(p0 >= 0.0 && p0 <= 1.0)) throw ValidationError("focal_curvature_scale: p0 must lie in [0, 1]");
  if (!(gamma >= 0.0)) throw ValidationError("focal_curvature_scale: gamma must be >= 0");
  return std::pow(1.0 - p0, gamma);
}

ad::Var cross_entropy(std::span<const ad::Var> probs, const Matrix& targets, double normalizer) {
  return weighted_log_loss(probs, targets, 0.0, normalizer);
}

ad::Var focal_loss(std::span<const ad::Var> probs, const Matrix& targets, double gamma, double normalizer) {
  if (!(gamma >= 0.0)) throw ValidationError("focal_loss: gamma must be >= 0");
  return weighted_log_loss(probs, targets, gamma, normalizer);
}

ad::Var data_loss(ad::Tape& tape, std::span<const ad::Var> params, const MlpModel& model, const Matrix& inputs,
                  const Matrix& targets, const LossSpec& spec, double normalizer) {
  (void)tape;
  const auto probs = forward_probs(model, params, inputs);
  return weighted_log_loss(probs, targets, data_gamma(spec), normalizer);
}

ad::Var trace_penalty(ad::Tape& tape, ad::Var objective, std::span<const ad::Var> params,
                      std::span<const Vector> probes) {
  if (probes.empty()) throw ValidationError("trace_penalty: need at least one probe");
  const auto grad = tape.gradient_graph(objective, params);
  ad::Var total = tape.constant(0.0);
  for (const Vector& v : probes) {
    if (v.size() != params.size()) throw ValidationError("trace_penalty: probe has wrong dimension");
    ad::Var directional = tape.constant(0.0);
    for (std::size_t i = 0; i < grad.size(); ++i) directional = ad::fma(directional, grad[i], v[i]);
    const auto hv = tape.gradient_graph(directional, params);
    for (std::size_t i = 0; i < hv.size(); ++i) total = ad::fma(total, hv[i], v[i]);
  }
  return total / static_cast<double>(probes.size());
}

ad::Var training_objective(ad::Tape& tape, std::span<const ad::Var> params, const MlpModel& model,
                           const Matrix& inputs, const Matrix& targets, const LossSpec& spec,
                           std::span<const Vector> probes) {
  const ad::Var data =
      data_loss(tape, params, model, inputs, targets, spec, static_cast<double>(inputs.rows()));
  const auto* reg = std::get_if<TraceRegParams>(&spec);
  if (reg == nullptr || reg->tau == 0.0) return data;
  if (probes.size() != reg->probes) {
    std::ostringstream msg;
    msg << "training_objective: expected " << reg->probes << " probes, got " << probes.size();
    throw ValidationError(msg.str());
  }
  return data + trace_penalty(tape, data, params, probes) * reg->tau;
}

double trace_regularized_loss(const MlpModel& model, const LabeledBatch& batch, double tau, std::size_t probes,
                              RngStream& rng) {
  const TraceRegParams reg{tau, probes};
  validate(LossSpec{reg});
  batch.validate(model.input_dim(), model.num_classes());
  std::vector<Vector> v;
  for (std::size_t m = 0; m < probes; ++m) v.push_back(rademacher(rng, model.parameter_count()));
  ad::Tape tape;
  const auto params = tape.variables(model.parameters());
  const ad::Var out =
      training_objective(tape, params, model, batch.inputs, batch.targets(model.num_classes()), reg, v);
  tape.check_finite();
  return out.value();
}

}  // namespace curvlab
