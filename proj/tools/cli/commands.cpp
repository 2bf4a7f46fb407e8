#include "commands.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "config.hpp"
#include "curvlab/calibration.hpp"
#include "curvlab/curvature.hpp"
#include "curvlab/error.hpp"
#include "curvlab/geometry.hpp"
#include "curvlab/infobounds.hpp"
#include "curvlab/trainer.hpp"

namespace curvlab::cli {

namespace {

namespace fs = std::filesystem;

struct Common {
  std::string config;
  std::string out = "curvlab-out";
  std::optional<std::uint64_t> seed;
  bool quiet = false;
};

void add_common(CLI::App& sub, Common& common, bool with_seed, bool config_required) {
  auto* opt = sub.add_option("--config", common.config, "JSON config file");
  if (config_required) opt->required();
  sub.add_option("--out", common.out, "Output directory")->capture_default_str();
  if (with_seed) sub.add_option("--seed", common.seed, "Seed override");
  sub.add_flag("--quiet", common.quiet, "Suppress stdout reporting");
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw ValidationError("cannot write '" + path.string() + "'");
  f << content;
  if (!f) throw ValidationError("failed writing '" + path.string() + "'");
}

fs::path prepare_out(const Common& common) {
  const fs::path dir(common.out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw ValidationError("--out: cannot create directory '" + common.out + "'");
  return dir;
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

json load_config(const Common& common) {
  if (common.config.empty()) return json::object();
  return parse_json_file(common.config);
}

// ---------------------------------------------------------------------------

int cmd_train(const Common& common, std::ostream& out) {
  const json raw = load_config(common);
  TrainConfig config = parse_train_config(ObjectReader(raw, ""));
  if (common.seed) config.seed = *common.seed;
  const fs::path dir = prepare_out(common);
  write_file(dir / "resolved_config.json", dump(to_json(config)));
  const RunRecord record = train_run(config);
  write_file(dir / "run.jsonl", to_jsonl(record));
  const json summary = summary_json(record);
  write_file(dir / "summary.json", dump(summary));
  if (!common.quiet) out << summary.dump() << "\n";
  return kExitOk;
}

int cmd_sweep(const Common& common, std::ostream& out) {
  const json raw = load_config(common);
  SweepConfig config = parse_sweep_config(ObjectReader(raw, ""));
  if (common.seed) config.seeds = {*common.seed};
  const fs::path dir = prepare_out(common);
  write_file(dir / "resolved_config.json", dump(to_json(config)));
  const SweepResult result = sweep(config.base, config.axis, config.values, config.seeds);
  write_file(dir / "sweep.csv", sweep_csv(result));
  const std::string agg = aggregate_csv(result);
  write_file(dir / "aggregate.csv", agg);
  if (!common.quiet) out << agg;
  return kExitOk;
}

int cmd_curvature(const Common& common, std::ostream& out) {
  const json raw = load_config(common);
  CurvatureConfig config = parse_curvature_config(ObjectReader(raw, ""));
  if (common.seed) config.options.seed = *common.seed;
  const fs::path dir = prepare_out(common);
  write_file(dir / "resolved_config.json", dump(to_json(config)));

  CurvatureReport report;
  if (config.matrix) {
    report = curvature_report(ad::DenseHvpOracle(*config.matrix), config.options);
  } else {
    const TrainConfig& tc = *config.train;
    const DatasetSplit split = load_split(tc.data);
    MlpModel model = initial_model(tc);
    if (config.trained) {
      const RunRecord record = train_run(tc, split);
      if (record.diverged) throw NumericError("training diverged: " + record.diverged_reason);
      model.set_parameters(record.final_parameters);
    }
    const LabeledBatch& batch =
        config.split == "train" ? split.train : config.split == "test" ? split.test : split.validation;
    const auto oracle = data_loss_oracle(model, batch, tc.loss, model.parameters());
    if (model.parameter_count() <= config.options.dense_cap) {
      report = curvature_report(ad::DenseHvpOracle(oracle->materialize()), config.options);
    } else {
      report = curvature_report(*oracle, config.options);
    }
  }
  const json j = to_json(report);
  write_file(dir / "curvature.json", dump(j));
  if (!common.quiet) out << dump(j);
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct GeometryArgs {
  std::string id;
  std::vector<double> theta;
  bool christoffel = false;
  bool riemann = false;
  bool volume = false;
  bool fisher = false;
  std::size_t d = 2;
  std::size_t m = 0;
  std::size_t dim = 2;
  double step = geometry::kDefaultStep;
};

const char* const kGeometryIds =
    "euclidean, sphere, stretched-plane, gaussian-fisher, bernoulli, gaussian, categorical, nn-manifold";

Vector resolve_point(std::vector<double> given, Vector defaults) {
  if (given.size() > defaults.size())
    throw ValidationError("--theta: expected at most " + std::to_string(defaults.size()) + " coordinates");
  for (std::size_t i = 0; i < given.size(); ++i) defaults[i] = given[i];
  return defaults;
}

json geometry_metric(const GeometryArgs& a, const geometry::MetricField& field, const Vector& theta) {
  const bool all = !a.christoffel && !a.riemann && !a.volume;
  json j;
  j["id"] = a.id;
  j["theta"] = theta;
  field.check_point(theta);
  j["metric"] = geometry::to_json(field.at(theta));
  if (all || a.christoffel) {
    const auto gamma = geometry::christoffel(field, theta, a.step);
    j["christoffel"] = geometry::to_json(gamma);
    j["compatibility_residual"] = geometry::metric_compatibility_residual(field, gamma, theta, a.step);
  }
  if (all || a.riemann) j["riemann"] = geometry::to_json(geometry::riemann_tensor(field, theta, a.step));
  if (all || a.volume) j["volume_element"] = geometry::volume_element(field, theta);
  return j;
}

json geometry_family(const GeometryArgs& a, const geometry::ParametricFamily& family, const Vector& xi) {
  json j;
  j["id"] = a.id;
  j["xi"] = xi;
  const auto est = geometry::fisher_metric(family, xi);
  j["fisher"] = geometry::to_json(est.metric);
  j["positive_definite"] = est.positive_definite;
  j["quadrature_mass"] = est.normalization;
  if (const auto closed = family.closed_form_fisher(xi)) j["fisher_closed_form"] = geometry::to_json(*closed);
  return j;
}

int cmd_geometry(const Common& common, const GeometryArgs& args, std::ostream& out) {
  if (!common.config.empty()) throw ValidationError("--config: geometry takes its inputs from flags");
  const std::uint64_t seed = common.seed.value_or(0);
  json report;
  json resolved = {{"id", args.id}, {"theta", args.theta}, {"christoffel", args.christoffel},
                   {"riemann", args.riemann}, {"volume", args.volume}, {"fisher", args.fisher},
                   {"step", args.step}, {"seed", seed}};
  const std::string& id = args.id;
  if (id == "euclidean" || id == "sphere" || id == "stretched-plane" || id == "gaussian-fisher") {
    geometry::MetricField field;
    Vector defaults;
    if (id == "euclidean") {
      if (args.dim < 1) throw ValidationError("--dim must be >= 1");
      field = geometry::metrics::euclidean(args.dim);
      defaults.assign(args.dim, 0.0);
      resolved["dim"] = args.dim;
    } else if (id == "sphere") {
      field = geometry::metrics::sphere();
      defaults = {1.0, 0.0};
    } else if (id == "stretched-plane") {
      field = geometry::metrics::stretched_plane();
      defaults = {0.5, 0.0};
    } else {
      field = geometry::metrics::gaussian_fisher();
      defaults = {0.0, 2.0};
    }
    const Vector theta = resolve_point(args.theta, defaults);
    resolved["theta"] = theta;
    report = geometry_metric(args, field, theta);
  } else if (id == "bernoulli" || id == "gaussian" || id.rfind("categorical", 0) == 0) {
    const auto family = geometry::make_family(id);
    Vector defaults = id == "bernoulli" ? Vector{0.5} : id == "gaussian" ? Vector{0.0, 2.0} : Vector(family->dim(), 0.0);
    if (id.rfind("categorical", 0) == 0)
      for (double& p : defaults) p = 1.0 / static_cast<double>(family->dim() + 1);
    const Vector xi = resolve_point(args.theta, defaults);
    resolved["theta"] = xi;
    report = geometry_family(args, *family, xi);
  } else if (id == "nn-manifold") {
    if (args.d < 1) throw ValidationError("--d must be >= 1");
    const std::size_t m = args.m == 0 ? args.d + 2 : args.m;
    RngStream rng(seed);
    const Vector theta = normal_vector(rng, args.d);
    const double theta0 = rng.normal();
    Matrix inputs(m, args.d);
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < args.d; ++c) inputs(r, c) = rng.normal();
    const auto rank = geometry::nn_manifold_jacobian_rank(theta, theta0, inputs);
    resolved["d"] = args.d;
    resolved["m"] = m;
    report = {{"id", id}, {"d", args.d}, {"m", m}, {"rank", rank.rank}, {"expected", rank.expected},
              {"full_rank", rank.full_rank}, {"seed", seed}};
  } else {
    throw ValidationError("unknown geometry id '" + id + "' (known: " + kGeometryIds + ")");
  }
  const fs::path dir = prepare_out(common);
  write_file(dir / "resolved_config.json", dump(resolved));
  write_file(dir / "geometry.json", dump(report));
  if (!common.quiet) out << dump(report);
  return kExitOk;
}

// ---------------------------------------------------------------------------

int cmd_bound(const Common& common, std::ostream& out) {
  const json raw = load_config(common);
  const BoundConfig config = parse_bound_config(ObjectReader(raw, ""));
  const fs::path dir = prepare_out(common);
  write_file(dir / "resolved_config.json", dump(to_json(config)));
  const json j = info::to_json(info::bound_report(config.input, config.delta, config.grid_check));
  write_file(dir / "bound.json", dump(j));
  if (!common.quiet) out << dump(j);
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct Predictions {
  Matrix probs;
  std::vector<int> labels;
};

bool parse_number(const std::string& field, double& value) {
  std::istringstream in(field);
  in.imbue(std::locale::classic());
  in >> value;
  return !in.fail() && (in >> std::ws).eof();
}

Predictions read_predictions(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("--input: cannot read '" + path + "'");
  std::vector<Vector> rows;
  std::vector<int> labels;
  std::size_t columns = 0;
  std::string line;
  for (std::size_t line_no = 1; std::getline(in, line); ++line_no) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    for (std::string f; std::getline(ss, f, ',');) fields.push_back(f);
    Vector values(fields.size());
    bool numeric = true;
    for (std::size_t k = 0; k < fields.size(); ++k) numeric = numeric && parse_number(fields[k], values[k]);
    if (!numeric) {
      if (rows.empty() && columns == 0) {
        columns = fields.size();
        continue;
      }
      throw ValidationError("line " + std::to_string(line_no) + ": non-numeric field");
    }
    if (columns == 0) columns = fields.size();
    if (fields.size() != columns || columns < 3)
      throw ValidationError("line " + std::to_string(line_no) + ": expected " + std::to_string(std::max<std::size_t>(columns, 3)) +
                            " fields (C >= 2 probabilities then the label)");
    const double label = values.back();
    values.pop_back();
    if (label != std::floor(label) || label < 0 || label >= static_cast<double>(values.size()))
      throw ValidationError("line " + std::to_string(line_no) + ": label must be a class index");
    double sum = 0.0;
    for (double p : values) {
      if (!(p >= 0.0 && p <= 1.0)) throw ValidationError("line " + std::to_string(line_no) + ": probability outside [0, 1]");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-6) {
      throw ValidationError("line " + std::to_string(line_no) + ": probabilities sum to " + format_double(sum) +
                            ", not 1 within 1e-6");
    }
    rows.push_back(std::move(values));
    labels.push_back(static_cast<int>(label));
  }
  if (rows.empty()) throw ValidationError("--input: no prediction rows");
  Predictions p;
  p.probs = Matrix(rows.size(), rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i) std::copy(rows[i].begin(), rows[i].end(), p.probs.row(i).begin());
  p.labels = std::move(labels);
  return p;
}

int cmd_calibrate(const Common& common, const std::string& input, std::size_t bins, std::ostream& out) {
  std::string path = input;
  std::size_t b = bins;
  if (!common.config.empty()) {
    const json raw = parse_json_file(common.config);
    const ObjectReader r(raw, "");
    r.only({"input", "bins"});
    if (path.empty()) path = r.text("input", "");
    b = static_cast<std::size_t>(r.integer("bins", b));
  }
  if (path.empty()) throw ValidationError("--input: predictions CSV required");
  if (b < 1) throw ValidationError("bins: must be >= 1");
  const Predictions p = read_predictions(path);
  const CalibrationReport report = ece(p.probs, p.labels, b);
  const fs::path dir = prepare_out(common);
  write_file(dir / "resolved_config.json", dump({{"input", path}, {"bins", b}}));
  write_file(dir / "calibration_bins.csv", to_csv(report));
  const json j = to_json(report);
  write_file(dir / "calibration.json", dump(j));
  if (!common.quiet) out << dump(j);
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Curvature, calibration, and information-geometry toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "curvlab 0.1.0");

  Common common;
  auto* train = app.add_subcommand("train", "Train one model and record eval rows");
  add_common(*train, common, true, false);
  auto* sweep_cmd = app.add_subcommand("sweep", "Train over a gamma / tau / rho / batch axis and seeds");
  add_common(*sweep_cmd, common, true, true);
  auto* curvature = app.add_subcommand("curvature", "Hessian trace, spectral radius, and dense contractions");
  add_common(*curvature, common, true, true);
  auto* bound = app.add_subcommand("bound", "PAC-Bayes bound, optimal lambda, and grid cross-check");
  add_common(*bound, common, false, true);

  auto* calibrate = app.add_subcommand("calibrate", "Expected calibration error from a predictions CSV");
  add_common(*calibrate, common, false, false);
  std::string input;
  std::size_t bins = kDefaultEceBins;
  calibrate->add_option("--input", input, "CSV: C probability columns then the label");
  calibrate->add_option("--bins", bins, "Number of equal-width bins")->capture_default_str();

  auto* geometry_cmd = app.add_subcommand("geometry", "Metric, connection, curvature, Fisher, and rank reports");
  add_common(*geometry_cmd, common, true, false);
  GeometryArgs gargs;
  geometry_cmd->add_option("id", gargs.id, kGeometryIds)->required();
  geometry_cmd->add_option("--theta", gargs.theta, "Point coordinates")->delimiter(',');
  geometry_cmd->add_flag("--christoffel", gargs.christoffel, "Christoffel symbols");
  geometry_cmd->add_flag("--riemann", gargs.riemann, "Riemann tensor");
  geometry_cmd->add_flag("--volume", gargs.volume, "Volume element");
  geometry_cmd->add_flag("--fisher", gargs.fisher, "Fisher metric (families)");
  geometry_cmd->add_option("--d", gargs.d, "Input dimension for nn-manifold")->capture_default_str();
  geometry_cmd->add_option("--m", gargs.m, "Number of inputs for nn-manifold (default d + 2)");
  geometry_cmd->add_option("--dim", gargs.dim, "Dimension for euclidean")->capture_default_str();
  geometry_cmd->add_option("--step", gargs.step, "Finite-difference step")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (train->parsed()) return cmd_train(common, out);
    if (sweep_cmd->parsed()) return cmd_sweep(common, out);
    if (curvature->parsed()) return cmd_curvature(common, out);
    if (bound->parsed()) return cmd_bound(common, out);
    if (calibrate->parsed()) return cmd_calibrate(common, input, bins, out);
    if (geometry_cmd->parsed()) return cmd_geometry(common, gargs, out);
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const json::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const NumericError& e) {
    err << "numerical failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    err << "failure: " << e.what() << "\n";
    return kExitNumeric;
  }
  return kExitConfig;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv;
  argv.push_back("curvlab");
  for (const auto& a : args) argv.push_back(a.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace curvlab::cli
