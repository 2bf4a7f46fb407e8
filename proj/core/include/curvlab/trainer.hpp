#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "curvlab/autodiff.hpp"
#include "curvlab/curvature.hpp"
#include "curvlab/losses.hpp"
#include "curvlab/models.hpp"
#include "curvlab/numkit.hpp"

namespace curvlab {

// ---------------------------------------------------------------------------
// Synthetic data

struct DatasetSpec {
  std::string id = "gaussian-mixture-2d";  // or "two-arcs-2d"
  std::size_t n = 2000;
  std::size_t classes = 2;
  double noise = 0.8;
  std::uint64_t seed = 0;
};

inline const std::vector<std::string> kDatasetIds = {"gaussian-mixture-2d", "two-arcs-2d"};

void validate(const DatasetSpec& spec);

/// Class counts differ by at most one; rows are shuffled.
LabeledBatch make_dataset(const DatasetSpec& spec);

struct DatasetSplit {
  LabeledBatch train;
  LabeledBatch validation;
  LabeledBatch test;
};

/// 70 / 15 / 15 by a permutation drawn from `seed`.
DatasetSplit split_dataset(const LabeledBatch& data, std::uint64_t seed);

/// make_dataset + split_dataset with the split seed derived from spec.seed.
DatasetSplit load_split(const DatasetSpec& spec);

// ---------------------------------------------------------------------------
// Optimizers

enum class OptimizerKind { Sgd, Momentum, Sam };
/// Batch on which SAM computes its ascent direction (and then descends).
enum class SamMode { Full, Mini, One };

OptimizerKind parse_optimizer(const std::string& name);
SamMode parse_sam_mode(const std::string& name);
std::string to_string(OptimizerKind k);
std::string to_string(SamMode m);

struct OptimizerSpec {
  OptimizerKind kind = OptimizerKind::Momentum;
  double lr = 0.05;
  double momentum = 0.9;
  double rho = 0.05;
  SamMode sam_mode = SamMode::Mini;
};

/// Gradient of a batch objective at theta; fills value when non-null.
using GradientFn = std::function<Vector(std::span<const double> theta, double* value)>;

/// theta <- theta - lr * grad.
void sgd_step(Vector& theta, const GradientFn& grad, double lr);
/// v <- beta v + grad; theta <- theta - lr v.
void momentum_step(Vector& theta, Vector& velocity, const GradientFn& grad, double lr, double beta);
/// e = rho grad / ||grad|| (skipped when grad == 0); theta <- theta - lr grad(theta + e).
void sam_step(Vector& theta, const GradientFn& grad, double lr, double rho);

// ---------------------------------------------------------------------------
// Training runs

struct TrainConfig {
  std::vector<std::size_t> widths = {2, 16, 16, 2};
  Activation activation = Activation::Tanh;
  LossSpec loss = CrossEntropyLoss{};
  OptimizerSpec optimizer;
  std::size_t batch_size = 64;  // 0 selects the full training set
  std::size_t epochs = 200;
  std::uint64_t seed = 0;
  std::vector<double> eval_fractions = {0.25, 0.5, 1.0};
  bool curvature = true;
  std::size_t curvature_probes = 1000;
  std::size_t power_iters = 200;
  std::size_t ece_bins = 15;
  DatasetSpec data;
};

/// Throws ValidationError naming the offending field.
void validate(const TrainConfig& config);

/// Distinct epochs ceil(f * epochs), ascending.
std::vector<std::size_t> eval_epochs(const TrainConfig& config);

struct EvalRow {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_acc = 0.0;
  double val_ece = 0.0;
  double grad_norm = 0.0;
  double trace = 0.0;
  double trace_stderr = 0.0;
  double lambda_max = 0.0;
};

struct RunRecord {
  std::uint64_t seed = 0;
  std::vector<EvalRow> rows;
  bool diverged = false;
  std::size_t diverged_epoch = 0;
  std::string diverged_reason;
  Vector final_parameters;
  double test_acc = 0.0;
};

/// The model a run with this config starts from.
MlpModel initial_model(const TrainConfig& config);

/// Data loss of the run's objective (CE for trace_reg) at theta, averaged over
/// the batch, as a tape function.
ad::ScalarFunction batch_data_loss(const MlpModel& model, const LabeledBatch& batch, const LossSpec& spec);

/// Exact HVP oracle for batch_data_loss, split into chunks recorded on
/// separate tapes.
std::unique_ptr<ad::HvpOracle> data_loss_oracle(const MlpModel& model, const LabeledBatch& batch,
                                                const LossSpec& spec, std::span<const double> theta,
                                                std::size_t chunk = 64);

double data_loss_value(const MlpModel& model, const LabeledBatch& batch, const LossSpec& spec);
Vector data_loss_gradient(const MlpModel& model, const LabeledBatch& batch, const LossSpec& spec,
                          std::span<const double> theta);

/// Deterministic given (config, dataset). Divergence truncates the record.
RunRecord train_run(const TrainConfig& config, const DatasetSplit& data);
RunRecord train_run(const TrainConfig& config);

/// One object per eval row, newline-terminated; a diverged run ends with a
/// {"epoch", "diverged": true, "reason"} line.
std::string to_jsonl(const RunRecord& record);
nlohmann::json summary_json(const RunRecord& record);

// ---------------------------------------------------------------------------
// Sweeps

enum class SweepAxis { Gamma, Tau, Rho, BatchSize };
SweepAxis parse_sweep_axis(const std::string& name);
std::string to_string(SweepAxis axis);

/// Config for one sweep point: gamma -> focal loss, tau -> trace_reg loss,
/// rho -> SAM radius, batch -> batch size (0 = full; SAM mode follows).
TrainConfig apply_axis(TrainConfig config, SweepAxis axis, double value, std::uint64_t seed);

struct SweepRow {
  SweepAxis axis = SweepAxis::Gamma;
  double value = 0.0;
  std::uint64_t seed = 0;
  bool has_row = false;  // false when the run diverged before its first eval
  EvalRow last;
  bool diverged = false;
};

struct AggregateRow {
  double value = 0.0;
  std::size_t runs = 0;
  std::size_t diverged = 0;
  EvalRow median;  // over non-diverged runs; NaN when none
};

struct SweepResult {
  SweepAxis axis = SweepAxis::Gamma;
  std::vector<SweepRow> rows;  // (value, seed) order
  std::vector<AggregateRow> aggregate;
};

inline const char* const kSweepHeader =
    "axis,value,seed,epoch,train_loss,val_loss,val_acc,val_ece,grad_norm,trace,trace_stderr,lambda_max,diverged";

/// Runs execute concurrently; the table is assembled in (value, seed) order.
SweepResult sweep(const TrainConfig& base, SweepAxis axis, std::span<const double> values,
                  std::span<const std::uint64_t> seeds);

std::string sweep_csv(const SweepResult& result);
/// Header axis,value,runs,diverged,<median metric columns>.
std::string aggregate_csv(const SweepResult& result);

double median(std::vector<double> values);

}  // namespace curvlab
