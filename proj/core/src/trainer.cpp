#include "curvlab/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "curvlab/calibration.hpp"
#include "curvlab/error.hpp"

namespace curvlab {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kDivergenceNorm = 1e6;

// Stream salts under the run seed.
constexpr std::uint64_t kInitSalt = 1;
constexpr std::uint64_t kOrderSalt = 2;
constexpr std::uint64_t kProbeSalt = 3;
constexpr std::uint64_t kCurvatureSalt = 4;
constexpr std::uint64_t kSplitSalt = 7;

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

SamMode sam_mode_for_batch(std::size_t batch_size) {
  if (batch_size == 0) return SamMode::Full;
  if (batch_size == 1) return SamMode::One;
  return SamMode::Mini;
}

}  // namespace

// ---------------------------------------------------------------------------

void validate(const DatasetSpec& spec) {
  if (std::find(kDatasetIds.begin(), kDatasetIds.end(), spec.id) == kDatasetIds.end())
    throw ValidationError("data.id: unknown dataset '" + spec.id + "' (known: gaussian-mixture-2d, two-arcs-2d)");
  if (spec.classes < 2) throw ValidationError("data.classes must be >= 2");
  if (spec.id == "two-arcs-2d" && spec.classes != 2) throw ValidationError("data.classes must be 2 for two-arcs-2d");
  if (spec.n < 20 * spec.classes) throw ValidationError("data.n must be at least 20 per class");
  if (!(spec.noise >= 0.0) || !std::isfinite(spec.noise)) throw ValidationError("data.noise must be >= 0");
}

LabeledBatch make_dataset(const DatasetSpec& spec) {
  validate(spec);
  RngStream rng(spec.seed);
  std::vector<int> labels(spec.n);
  for (std::size_t i = 0; i < spec.n; ++i) labels[i] = static_cast<int>(i % spec.classes);
  const auto order = permutation(rng, spec.n);

  LabeledBatch out;
  out.inputs = Matrix(spec.n, 2);
  out.labels.resize(spec.n);
  for (std::size_t i = 0; i < spec.n; ++i) {
    const int c = labels[order[i]];
    double x = 0.0, y = 0.0;
    if (spec.id == "gaussian-mixture-2d") {
      const double angle = 2.0 * std::numbers::pi * static_cast<double>(c) / static_cast<double>(spec.classes);
      x = std::cos(angle);
      y = std::sin(angle);
    } else {
      const double t = std::numbers::pi * rng.uniform();
      x = c == 0 ? std::cos(t) : 1.0 - std::cos(t);
      y = c == 0 ? std::sin(t) : 0.5 - std::sin(t);
    }
    out.inputs(i, 0) = x + spec.noise * rng.normal();
    out.inputs(i, 1) = y + spec.noise * rng.normal();
    out.labels[i] = c;
  }
  return out;
}

DatasetSplit split_dataset(const LabeledBatch& data, std::uint64_t seed) {
  const std::size_t n = data.size();
  const std::size_t n_train = n * 70 / 100;
  const std::size_t n_val = n * 15 / 100;
  if (n_train == 0 || n_val == 0 || n_train + n_val >= n)
    throw ValidationError("split_dataset: too few rows for a 70/15/15 split");
  RngStream rng(seed);
  const auto order = permutation(rng, n);
  const std::span<const std::size_t> all(order);
  DatasetSplit out;
  out.train = data.subset(all.subspan(0, n_train));
  out.validation = data.subset(all.subspan(n_train, n_val));
  out.test = data.subset(all.subspan(n_train + n_val));
  return out;
}

DatasetSplit load_split(const DatasetSpec& spec) {
  return split_dataset(make_dataset(spec), RngStream(spec.seed).split(kSplitSalt).seed());
}

// ---------------------------------------------------------------------------

OptimizerKind parse_optimizer(const std::string& name) {
  if (name == "sgd") return OptimizerKind::Sgd;
  if (name == "momentum") return OptimizerKind::Momentum;
  if (name == "sam") return OptimizerKind::Sam;
  throw ValidationError("optimizer.kind: unknown optimizer '" + name + "' (known: sgd, momentum, sam)");
}

SamMode parse_sam_mode(const std::string& name) {
  if (name == "full") return SamMode::Full;
  if (name == "mini") return SamMode::Mini;
  if (name == "one") return SamMode::One;
  throw ValidationError("optimizer.mode: unknown SAM mode '" + name + "' (known: full, mini, one)");
}

std::string to_string(OptimizerKind k) {
  switch (k) {
    case OptimizerKind::Sgd: return "sgd";
    case OptimizerKind::Momentum: return "momentum";
    case OptimizerKind::Sam: return "sam";
  }
  return "?";
}

std::string to_string(SamMode m) {
  switch (m) {
    case SamMode::Full: return "full";
    case SamMode::Mini: return "mini";
    case SamMode::One: return "one";
  }
  return "?";
}

void sgd_step(Vector& theta, const GradientFn& grad, double lr) {
  const Vector g = grad(theta, nullptr);
  for (std::size_t i = 0; i < theta.size(); ++i) theta[i] -= lr * g[i];
}

void momentum_step(Vector& theta, Vector& velocity, const GradientFn& grad, double lr, double beta) {
  const Vector g = grad(theta, nullptr);
  if (velocity.size() != theta.size()) velocity.assign(theta.size(), 0.0);
  for (std::size_t i = 0; i < theta.size(); ++i) {
    velocity[i] = beta * velocity[i] + g[i];
    theta[i] -= lr * velocity[i];
  }
}

void sam_step(Vector& theta, const GradientFn& grad, double lr, double rho) {
  const Vector g = grad(theta, nullptr);
  const double norm = norm2(g);
  if (rho == 0.0 || norm == 0.0) {
    for (std::size_t i = 0; i < theta.size(); ++i) theta[i] -= lr * g[i];
    return;
  }
  Vector perturbed = theta;
  for (std::size_t i = 0; i < theta.size(); ++i) perturbed[i] += rho * g[i] / norm;
  const Vector gp = grad(perturbed, nullptr);
  for (std::size_t i = 0; i < theta.size(); ++i) theta[i] -= lr * gp[i];
}

// ---------------------------------------------------------------------------

void validate(const TrainConfig& config) {
  if (config.widths.size() < 2) throw ValidationError("model.widths needs at least input and output widths");
  for (std::size_t w : config.widths)
    if (w == 0) throw ValidationError("model.widths entries must be >= 1");
  if (config.widths.front() != 2) throw ValidationError("model.widths must start with 2 (the datasets are 2-D)");
  if (config.widths.back() != config.data.classes)
    throw ValidationError("model.widths must end with data.classes");
  validate(config.loss);
  validate(config.data);
  const auto& opt = config.optimizer;
  if (!(opt.lr > 0.0) || !std::isfinite(opt.lr)) throw ValidationError("optimizer.lr must be > 0");
  if (!(opt.momentum >= 0.0 && opt.momentum < 1.0)) throw ValidationError("optimizer.momentum must lie in [0, 1)");
  if (!(opt.rho >= 0.0) || !std::isfinite(opt.rho)) throw ValidationError("optimizer.rho must be >= 0");
  if (opt.kind == OptimizerKind::Sam && opt.sam_mode != sam_mode_for_batch(config.batch_size))
    throw ValidationError("optimizer.mode '" + to_string(opt.sam_mode) + "' does not match batch_size " +
                          std::to_string(config.batch_size) + " (full needs 0, one needs 1, mini needs > 1)");
  if (config.epochs < 1) throw ValidationError("epochs must be >= 1");
  if (config.eval_fractions.empty()) throw ValidationError("eval_fractions must not be empty");
  for (double f : config.eval_fractions)
    if (!(f > 0.0 && f <= 1.0)) throw ValidationError("eval_fractions entries must lie in (0, 1]");
  if (config.curvature && config.curvature_probes < 1) throw ValidationError("curvature.probes must be >= 1");
  if (config.curvature && config.power_iters < 1) throw ValidationError("curvature.power_iters must be >= 1");
  if (config.ece_bins < 1) throw ValidationError("ece_bins must be >= 1");
}

std::vector<std::size_t> eval_epochs(const TrainConfig& config) {
  std::vector<std::size_t> out;
  for (double f : config.eval_fractions) {
    const auto e = static_cast<std::size_t>(std::ceil(f * static_cast<double>(config.epochs) - 1e-9));
    out.push_back(std::clamp<std::size_t>(e, 1, config.epochs));
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

MlpModel initial_model(const TrainConfig& config) {
  MlpModel model(config.widths, config.activation);
  RngStream init = RngStream(config.seed).split(kInitSalt);
  model.initialize(init);
  return model;
}

ad::ScalarFunction batch_data_loss(const MlpModel& model, const LabeledBatch& batch, const LossSpec& spec) {
  return [model, inputs = batch.inputs, targets = batch.targets(model.num_classes()), spec](
             ad::Tape& tape, std::span<const ad::Var> params) {
    return data_loss(tape, params, model, inputs, targets, spec, static_cast<double>(inputs.rows()));
  };
}

std::unique_ptr<ad::HvpOracle> data_loss_oracle(const MlpModel& model, const LabeledBatch& batch,
                                                const LossSpec& spec, std::span<const double> theta,
                                                std::size_t chunk) {
  if (batch.size() == 0) throw ValidationError("data_loss_oracle: empty batch");
  chunk = std::max<std::size_t>(chunk, 1);
  const Matrix targets = batch.targets(model.num_classes());
  const double n = static_cast<double>(batch.size());
  std::vector<std::size_t> starts;
  for (std::size_t s = 0; s < batch.size(); s += chunk) starts.push_back(s);

  std::vector<std::unique_ptr<ad::HvpOracle>> parts(starts.size());
  parallel_for(starts.size(), [&](std::size_t k) {
    const std::size_t rows = std::min(chunk, batch.size() - starts[k]);
    Matrix x(rows, batch.inputs.cols());
    Matrix t(rows, targets.cols());
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(batch.inputs.row(starts[k] + r).begin(), x.cols(), x.row(r).begin());
      std::copy_n(targets.row(starts[k] + r).begin(), t.cols(), t.row(r).begin());
    }
    const ad::ScalarFunction f = [&model, x = std::move(x), t = std::move(t), &spec, n](
                                     ad::Tape& tape, std::span<const ad::Var> params) {
      return data_loss(tape, params, model, x, t, spec, n);
    };
    parts[k] = std::make_unique<ad::TapeHvpOracle>(f, theta);
  });
  return std::make_unique<ad::SumHvpOracle>(std::move(parts), std::vector<double>(starts.size(), 1.0));
}

double data_loss_value(const MlpModel& model, const LabeledBatch& batch, const LossSpec& spec) {
  const Matrix probs = forward_probs(model, batch.inputs);
  return focal_loss(probs, batch.targets(model.num_classes()), data_gamma(spec));
}

Vector data_loss_gradient(const MlpModel& model, const LabeledBatch& batch, const LossSpec& spec,
                          std::span<const double> theta) {
  return ad::gradient(batch_data_loss(model, batch, spec), theta);
}

namespace {

class Trainer {
 public:
  Trainer(const TrainConfig& config, const DatasetSplit& data)
      : config_(config),
        data_(data),
        model_(initial_model(config)),
        order_rng_(RngStream(config.seed).split(kOrderSalt)),
        probe_rng_(RngStream(config.seed).split(kProbeSalt)) {
    data_.train.validate(model_.input_dim(), model_.num_classes());
    data_.validation.validate(model_.input_dim(), model_.num_classes());
    record_.seed = config.seed;
  }

  RunRecord run() {
    const auto evals = eval_epochs(config_);
    std::size_t next_eval = 0;
    Vector velocity(model_.parameter_count(), 0.0);
    for (std::size_t epoch = 1; epoch <= config_.epochs; ++epoch) {
      if (!run_epoch(epoch, velocity)) break;
      if (next_eval < evals.size() && evals[next_eval] == epoch) {
        ++next_eval;
        if (!evaluate(epoch)) break;
      }
    }
    record_.final_parameters = model_.parameters();
    if (!record_.diverged && data_.test.size() > 0) {
      record_.test_acc = accuracy(forward_probs(model_, data_.test.inputs), data_.test.labels);
    }
    return std::move(record_);
  }

 private:
  bool diverge(std::size_t epoch, std::string reason) {
    record_.diverged = true;
    record_.diverged_epoch = epoch;
    record_.diverged_reason = std::move(reason);
    return false;
  }

  std::vector<std::vector<std::size_t>> batches() {
    const std::size_t n = data_.train.size();
    const std::size_t b = config_.batch_size == 0 ? n : std::min(config_.batch_size, n);
    const auto order = permutation(order_rng_, n);
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t s = 0; s < n; s += b) out.emplace_back(order.begin() + s, order.begin() + std::min(n, s + b));
    return out;
  }

  bool run_epoch(std::size_t epoch, Vector& velocity) {
    const auto* reg = std::get_if<TraceRegParams>(&config_.loss);
    const bool needs_probes = reg != nullptr && reg->tau != 0.0;
    for (const auto& rows : batches()) {
      const LabeledBatch batch = data_.train.subset(rows);
      const Matrix targets = batch.targets(model_.num_classes());
      std::vector<Vector> probes;
      if (needs_probes)
        for (std::size_t m = 0; m < reg->probes; ++m) probes.push_back(rademacher(probe_rng_, model_.parameter_count()));

      bool finite = true;
      const GradientFn grad = [&](std::span<const double> theta, double* value) {
        ad::Tape tape;
        tape.reserve(tape_hint_);
        const auto params = tape.variables(theta);
        const ad::Var out = training_objective(tape, params, model_, batch.inputs, targets, config_.loss, probes);
        Vector g = tape.gradient(out, params);
        tape_hint_ = std::max(tape_hint_, tape.size());
        if (value != nullptr) *value = out.value();
        if (!std::isfinite(out.value()) || !all_finite(g)) finite = false;
        return g;
      };

      Vector& theta = model_.parameters();
      const auto& opt = config_.optimizer;
      switch (opt.kind) {
        case OptimizerKind::Sgd: sgd_step(theta, grad, opt.lr); break;
        case OptimizerKind::Momentum: momentum_step(theta, velocity, grad, opt.lr, opt.momentum); break;
        case OptimizerKind::Sam: sam_step(theta, grad, opt.lr, opt.rho); break;
      }
      if (!finite) return diverge(epoch, "non-finite loss or gradient");
      if (!all_finite(theta) || norm2(theta) > kDivergenceNorm) return diverge(epoch, "parameter norm exceeded 1e6");
    }
    return true;
  }

  bool evaluate(std::size_t epoch) {
    const LossSpec& spec = config_.loss;
    EvalRow row;
    row.epoch = epoch;
    row.train_loss = data_loss_value(model_, data_.train, spec);
    row.val_loss = data_loss_value(model_, data_.validation, spec);
    const Matrix val_probs = forward_probs(model_, data_.validation.inputs);
    const CalibrationReport cal = ece(val_probs, data_.validation.labels, config_.ece_bins);
    row.val_acc = cal.accuracy;
    row.val_ece = cal.ece;
    row.grad_norm = norm2(data_loss_gradient(model_, data_.train, spec, model_.parameters()));
    row.trace = row.trace_stderr = row.lambda_max = kNaN;
    if (config_.curvature) {
      // One dense validation Hessian per eval: every probe and power step is then a matvec.
      const auto oracle = data_loss_oracle(model_, data_.validation, spec, model_.parameters());
      const ad::DenseHvpOracle dense(oracle->materialize());
      RngStream rng = RngStream(config_.seed).split(kCurvatureSalt).split(epoch);
      const TraceEstimate tr = hutchinson_trace(dense, config_.curvature_probes, rng);
      const PowerIterationResult pw =
          power_iteration_lambda_max(dense, config_.power_iters, 1e-10, rng.split(1).seed());
      row.trace = tr.estimate;
      row.trace_stderr = tr.standard_error;
      row.lambda_max = pw.lambda;
    }
    const double checks[] = {row.train_loss, row.val_loss, row.grad_norm};
    if (!all_finite(checks)) return diverge(epoch, "non-finite evaluation metric");
    if (config_.curvature) {
      const double curv[] = {row.trace, row.trace_stderr, row.lambda_max};
      if (!all_finite(curv)) return diverge(epoch, "non-finite curvature");
    }
    record_.rows.push_back(row);
    return true;
  }

  const TrainConfig& config_;
  const DatasetSplit& data_;
  MlpModel model_;
  RngStream order_rng_;
  RngStream probe_rng_;
  std::size_t tape_hint_ = 0;
  RunRecord record_;
};

}  // namespace

RunRecord train_run(const TrainConfig& config, const DatasetSplit& data) {
  validate(config);
  return Trainer(config, data).run();
}

RunRecord train_run(const TrainConfig& config) {
  validate(config);
  return train_run(config, load_split(config.data));
}

namespace {

nlohmann::ordered_json row_json(const EvalRow& r, std::uint64_t seed) {
  nlohmann::ordered_json j;
  j["epoch"] = r.epoch;
  j["train_loss"] = r.train_loss;
  j["val_loss"] = r.val_loss;
  j["val_acc"] = r.val_acc;
  j["val_ece"] = r.val_ece;
  j["grad_norm"] = r.grad_norm;
  // NaN (curvature disabled) serializes as null.
  j["trace"] = r.trace;
  j["trace_stderr"] = r.trace_stderr;
  j["lambda_max"] = r.lambda_max;
  j["seed"] = seed;
  return j;
}

}  // namespace

std::string to_jsonl(const RunRecord& record) {
  std::string out;
  for (const auto& r : record.rows) out += row_json(r, record.seed).dump() + "\n";
  if (record.diverged) {
    nlohmann::ordered_json j;
    j["epoch"] = record.diverged_epoch;
    j["diverged"] = true;
    j["reason"] = record.diverged_reason;
    j["seed"] = record.seed;
    out += j.dump() + "\n";
  }
  return out;
}

nlohmann::json summary_json(const RunRecord& record) {
  nlohmann::ordered_json j;
  j["seed"] = record.seed;
  j["diverged"] = record.diverged;
  if (record.diverged) {
    j["diverged_epoch"] = record.diverged_epoch;
    j["diverged_reason"] = record.diverged_reason;
  }
  j["evals"] = record.rows.size();
  if (!record.rows.empty()) {
    const auto last = row_json(record.rows.back(), record.seed);
    for (const auto& [key, value] : last.items()) j[key] = value;
  }
  if (!record.diverged) j["test_acc"] = record.test_acc;
  j["parameter_count"] = record.final_parameters.size();
  return nlohmann::json::parse(j.dump());
}

// ---------------------------------------------------------------------------

SweepAxis parse_sweep_axis(const std::string& name) {
  if (name == "gamma") return SweepAxis::Gamma;
  if (name == "tau") return SweepAxis::Tau;
  if (name == "rho") return SweepAxis::Rho;
  if (name == "batch") return SweepAxis::BatchSize;
  throw ValidationError("sweep.axis: unknown axis '" + name + "' (known: gamma, tau, rho, batch)");
}

std::string to_string(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::Gamma: return "gamma";
    case SweepAxis::Tau: return "tau";
    case SweepAxis::Rho: return "rho";
    case SweepAxis::BatchSize: return "batch";
  }
  return "?";
}

TrainConfig apply_axis(TrainConfig config, SweepAxis axis, double value, std::uint64_t seed) {
  config.seed = seed;
  switch (axis) {
    case SweepAxis::Gamma:
      config.loss = FocalParams{value};
      break;
    case SweepAxis::Tau: {
      std::size_t probes = 1;
      if (const auto* reg = std::get_if<TraceRegParams>(&config.loss)) probes = reg->probes;
      config.loss = TraceRegParams{value, probes};
      break;
    }
    case SweepAxis::Rho:
      config.optimizer.kind = OptimizerKind::Sam;
      config.optimizer.rho = value;
      config.optimizer.sam_mode = sam_mode_for_batch(config.batch_size);
      break;
    case SweepAxis::BatchSize:
      if (!(value >= 0.0) || value != std::floor(value)) throw ValidationError("sweep.values: batch sizes must be integers >= 0");
      config.batch_size = static_cast<std::size_t>(value);
      config.optimizer.sam_mode = sam_mode_for_batch(config.batch_size);
      break;
  }
  return config;
}

double median(std::vector<double> values) {
  if (values.empty()) return kNaN;
  std::sort(values.begin(), values.end());
  const std::size_t m = values.size() / 2;
  return values.size() % 2 == 1 ? values[m] : 0.5 * (values[m - 1] + values[m]);
}

SweepResult sweep(const TrainConfig& base, SweepAxis axis, std::span<const double> values,
                  std::span<const std::uint64_t> seeds) {
  if (values.empty()) throw ValidationError("sweep.values must not be empty");
  if (seeds.empty()) throw ValidationError("sweep.seeds must not be empty");
  std::vector<TrainConfig> configs;
  for (double v : values)
    for (std::uint64_t s : seeds) {
      configs.push_back(apply_axis(base, axis, v, s));
      validate(configs.back());
    }

  const DatasetSplit split = load_split(base.data);
  std::vector<RunRecord> records(configs.size());
  parallel_for(configs.size(), [&](std::size_t i) { records[i] = train_run(configs[i], split); });

  SweepResult result;
  result.axis = axis;
  for (std::size_t vi = 0; vi < values.size(); ++vi) {
    AggregateRow agg;
    agg.value = values[vi];
    std::vector<std::vector<double>> columns(9);
    for (std::size_t si = 0; si < seeds.size(); ++si) {
      const RunRecord& rec = records[vi * seeds.size() + si];
      SweepRow row;
      row.axis = axis;
      row.value = values[vi];
      row.seed = seeds[si];
      row.diverged = rec.diverged;
      row.has_row = !rec.rows.empty();
      if (row.has_row) row.last = rec.rows.back();
      result.rows.push_back(row);
      ++agg.runs;
      if (rec.diverged) {
        ++agg.diverged;
        continue;
      }
      const EvalRow& r = row.last;
      const double cols[] = {static_cast<double>(r.epoch), r.train_loss, r.val_loss, r.val_acc, r.val_ece,
                             r.grad_norm, r.trace, r.trace_stderr, r.lambda_max};
      for (std::size_t c = 0; c < 9; ++c) columns[c].push_back(cols[c]);
    }
    double* slots[] = {nullptr, &agg.median.train_loss, &agg.median.val_loss, &agg.median.val_acc,
                       &agg.median.val_ece, &agg.median.grad_norm, &agg.median.trace, &agg.median.trace_stderr,
                       &agg.median.lambda_max};
    agg.median.epoch = static_cast<std::size_t>(std::isnan(median(columns[0])) ? 0 : median(columns[0]));
    for (std::size_t c = 1; c < 9; ++c) *slots[c] = median(columns[c]);
    result.aggregate.push_back(agg);
  }
  return result;
}

namespace {

std::string metric_fields(const EvalRow& r, bool present) {
  if (!present) return "nan,nan,nan,nan,nan,nan,nan,nan,nan";
  std::string out = std::to_string(r.epoch);
  for (double v : {r.train_loss, r.val_loss, r.val_acc, r.val_ece, r.grad_norm, r.trace, r.trace_stderr, r.lambda_max})
    out += "," + format_double(v);
  return out;
}

}  // namespace

std::string sweep_csv(const SweepResult& result) {
  std::string out = std::string(kSweepHeader) + "\n";
  for (const auto& row : result.rows) {
    out += to_string(row.axis) + "," + format_double(row.value) + "," + std::to_string(row.seed) + "," +
           metric_fields(row.last, row.has_row) + "," + (row.diverged ? "1" : "0") + "\n";
  }
  return out;
}

std::string aggregate_csv(const SweepResult& result) {
  std::string out =
      "axis,value,runs,diverged,epoch,train_loss,val_loss,val_acc,val_ece,grad_norm,trace,trace_stderr,lambda_max\n";
  for (const auto& agg : result.aggregate) {
    out += to_string(result.axis) + "," + format_double(agg.value) + "," + std::to_string(agg.runs) + "," +
           std::to_string(agg.diverged) + "," + metric_fields(agg.median, agg.diverged < agg.runs) + "\n";
  }
  return out;
}

}  // namespace curvlab
