#include "config.hpp"

#include <cmath>
#include <fstream>

#include "curvlab/error.hpp"

namespace curvlab::cli {

ObjectReader::ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
  if (!j_.is_object()) throw ValidationError((path_.empty() ? std::string("config") : path_) + ": expected an object");
}

const json& ObjectReader::raw(const std::string& key) const { return j_.at(key); }

double ObjectReader::number(const std::string& key, double fallback) const {
  if (!has(key)) return fallback;
  const json& v = j_.at(key);
  if (!v.is_number()) throw ValidationError(field(key) + ": expected a number");
  const double x = v.get<double>();
  if (!std::isfinite(x)) throw ValidationError(field(key) + ": expected a finite number");
  return x;
}

std::uint64_t ObjectReader::integer(const std::string& key, std::uint64_t fallback) const {
  if (!has(key)) return fallback;
  const json& v = j_.at(key);
  if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0))
    throw ValidationError(field(key) + ": expected a non-negative integer");
  return v.get<std::uint64_t>();
}

bool ObjectReader::boolean(const std::string& key, bool fallback) const {
  if (!has(key)) return fallback;
  const json& v = j_.at(key);
  if (!v.is_boolean()) throw ValidationError(field(key) + ": expected true or false");
  return v.get<bool>();
}

std::string ObjectReader::text(const std::string& key, const std::string& fallback) const {
  if (!has(key)) return fallback;
  const json& v = j_.at(key);
  if (!v.is_string()) throw ValidationError(field(key) + ": expected a string");
  return v.get<std::string>();
}

std::vector<double> ObjectReader::numbers(const std::string& key, std::vector<double> fallback) const {
  if (!has(key)) return fallback;
  const json& v = j_.at(key);
  if (!v.is_array()) throw ValidationError(field(key) + ": expected an array of numbers");
  std::vector<double> out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!v[i].is_number() || !std::isfinite(v[i].get<double>()))
      throw ValidationError(field(key) + "[" + std::to_string(i) + "]: expected a finite number");
    out.push_back(v[i].get<double>());
  }
  return out;
}

std::vector<std::uint64_t> ObjectReader::integers(const std::string& key, std::vector<std::uint64_t> fallback) const {
  if (!has(key)) return fallback;
  const json& v = j_.at(key);
  if (!v.is_array()) throw ValidationError(field(key) + ": expected an array of integers");
  std::vector<std::uint64_t> out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!v[i].is_number_unsigned() && !(v[i].is_number_integer() && v[i].get<std::int64_t>() >= 0))
      throw ValidationError(field(key) + "[" + std::to_string(i) + "]: expected a non-negative integer");
    out.push_back(v[i].get<std::uint64_t>());
  }
  return out;
}

ObjectReader ObjectReader::child(const std::string& key) const {
  static const json empty = json::object();
  if (!has(key)) return ObjectReader(empty, field(key));
  return ObjectReader(j_.at(key), field(key));
}

void ObjectReader::only(std::initializer_list<const char*> known) const {
  for (const auto& [key, value] : j_.items()) {
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    if (!ok) throw ValidationError(field(key) + ": unknown key");
  }
}

json parse_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot read config file '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ValidationError("config file '" + path + "' is not valid JSON: " + e.what());
  }
}

// ---------------------------------------------------------------------------

namespace {

LossSpec parse_loss(const ObjectReader& r) {
  const std::string kind = r.text("kind", "ce");
  LossSpec spec;
  if (kind == "ce") {
    r.only({"kind"});
    spec = CrossEntropyLoss{};
  } else if (kind == "focal") {
    r.only({"kind", "gamma"});
    spec = FocalParams{r.number("gamma", 2.0)};
  } else if (kind == "trace_reg") {
    r.only({"kind", "tau", "probes"});
    spec = TraceRegParams{r.number("tau", 0.0), r.integer("probes", 1)};
  } else {
    throw ValidationError(r.field("kind") + ": unknown loss '" + kind + "' (known: ce, focal, trace_reg)");
  }
  validate(spec);
  return spec;
}

json loss_json(const LossSpec& spec) {
  if (const auto* f = std::get_if<FocalParams>(&spec)) return {{"kind", "focal"}, {"gamma", f->gamma}};
  if (const auto* t = std::get_if<TraceRegParams>(&spec))
    return {{"kind", "trace_reg"}, {"tau", t->tau}, {"probes", t->probes}};
  return {{"kind", "ce"}};
}

void parse_train_fields(const ObjectReader& r, TrainConfig& c) {
  {
    const ObjectReader m = r.child("model");
    m.only({"widths", "activation"});
    if (m.has("widths")) {
      c.widths.clear();
      for (std::uint64_t w : m.integers("widths", {})) c.widths.push_back(static_cast<std::size_t>(w));
    }
    try {
      c.activation = parse_activation(m.text("activation", to_string(c.activation)));
    } catch (const ValidationError& e) {
      throw ValidationError(m.field("activation") + ": " + e.what());
    }
  }
  c.loss = parse_loss(r.child("loss"));
  const bool mode_given = r.child("optimizer").has("mode");
  {
    const ObjectReader o = r.child("optimizer");
    o.only({"kind", "lr", "momentum", "rho", "mode"});
    c.optimizer.kind = parse_optimizer(o.text("kind", to_string(c.optimizer.kind)));
    c.optimizer.lr = o.number("lr", c.optimizer.lr);
    c.optimizer.momentum = o.number("momentum", c.optimizer.momentum);
    c.optimizer.rho = o.number("rho", c.optimizer.rho);
    c.optimizer.sam_mode = parse_sam_mode(o.text("mode", to_string(c.optimizer.sam_mode)));
  }
  if (r.has("batch_size")) {
    const json& b = r.raw("batch_size");
    if (b.is_string()) {
      if (b.get<std::string>() != "full") throw ValidationError(r.field("batch_size") + ": expected an integer or \"full\"");
      c.batch_size = 0;
    } else {
      const std::uint64_t v = r.integer("batch_size", 1);
      if (v == 0) throw ValidationError(r.field("batch_size") + ": must be >= 1 (use \"full\" for the whole set)");
      c.batch_size = static_cast<std::size_t>(v);
    }
  }
  if (!mode_given) c.optimizer.sam_mode = c.batch_size == 0 ? SamMode::Full : c.batch_size == 1 ? SamMode::One : SamMode::Mini;
  c.epochs = static_cast<std::size_t>(r.integer("epochs", c.epochs));
  c.seed = r.integer("seed", c.seed);
  c.eval_fractions = r.numbers("eval_fractions", c.eval_fractions);
  {
    const ObjectReader k = r.child("curvature");
    k.only({"enabled", "probes", "power_iters"});
    c.curvature = k.boolean("enabled", c.curvature);
    c.curvature_probes = static_cast<std::size_t>(k.integer("probes", c.curvature_probes));
    c.power_iters = static_cast<std::size_t>(k.integer("power_iters", c.power_iters));
  }
  c.ece_bins = static_cast<std::size_t>(r.integer("ece_bins", c.ece_bins));
  {
    const ObjectReader d = r.child("data");
    d.only({"id", "n", "classes", "noise", "seed"});
    c.data.id = d.text("id", c.data.id);
    c.data.n = static_cast<std::size_t>(d.integer("n", c.data.n));
    c.data.classes = static_cast<std::size_t>(d.integer("classes", c.data.classes));
    c.data.noise = d.number("noise", c.data.noise);
    c.data.seed = d.integer("seed", c.data.seed);
  }
}

}  // namespace

TrainConfig parse_train_config(const ObjectReader& r) {
  r.only({"model", "loss", "optimizer", "batch_size", "epochs", "seed", "eval_fractions", "curvature", "ece_bins",
          "data"});
  TrainConfig c;
  parse_train_fields(r, c);
  validate(c);
  return c;
}

json to_json(const TrainConfig& c) {
  json j;
  j["model"] = {{"widths", c.widths}, {"activation", to_string(c.activation)}};
  j["loss"] = loss_json(c.loss);
  j["optimizer"] = {{"kind", to_string(c.optimizer.kind)},
                    {"lr", c.optimizer.lr},
                    {"momentum", c.optimizer.momentum},
                    {"rho", c.optimizer.rho},
                    {"mode", to_string(c.optimizer.sam_mode)}};
  j["batch_size"] = c.batch_size == 0 ? json("full") : json(c.batch_size);
  j["epochs"] = c.epochs;
  j["seed"] = c.seed;
  j["eval_fractions"] = c.eval_fractions;
  j["curvature"] = {{"enabled", c.curvature}, {"probes", c.curvature_probes}, {"power_iters", c.power_iters}};
  j["ece_bins"] = c.ece_bins;
  j["data"] = {{"id", c.data.id}, {"n", c.data.n}, {"classes", c.data.classes}, {"noise", c.data.noise},
               {"seed", c.data.seed}};
  return j;
}

SweepConfig parse_sweep_config(const ObjectReader& r) {
  r.only({"model", "loss", "optimizer", "batch_size", "epochs", "seed", "eval_fractions", "curvature", "ece_bins",
          "data", "sweep"});
  SweepConfig c;
  parse_train_fields(r, c.base);
  if (!r.has("sweep")) throw ValidationError("sweep: missing sweep block");
  const ObjectReader s = r.child("sweep");
  s.only({"axis", "values", "seeds"});
  if (!s.has("axis")) throw ValidationError("sweep.axis: missing");
  c.axis = parse_sweep_axis(s.text("axis", ""));
  c.values = s.numbers("values", {});
  c.seeds = s.integers("seeds", {});
  if (c.values.empty()) throw ValidationError("sweep.values: must not be empty");
  if (c.seeds.empty()) throw ValidationError("sweep.seeds: must not be empty");
  for (double v : c.values) validate(apply_axis(c.base, c.axis, v, c.seeds.front()));
  return c;
}

json to_json(const SweepConfig& c) {
  json j = to_json(c.base);
  j["sweep"] = {{"axis", to_string(c.axis)}, {"values", c.values}, {"seeds", c.seeds}};
  return j;
}

CurvatureConfig parse_curvature_config(const ObjectReader& r) {
  r.only({"matrix", "train", "trained", "split", "probes", "power_iters", "power_tol", "seed", "exact_spectrum"});
  CurvatureConfig c;
  if (r.has("matrix") == r.has("train")) throw ValidationError("config: exactly one of matrix or train is required");
  if (r.has("matrix")) {
    const json& m = r.raw("matrix");
    if (!m.is_array() || m.empty()) throw ValidationError("matrix: expected a non-empty array of rows");
    const std::size_t n = m.size();
    Matrix h(n, n);
    for (std::size_t i = 0; i < n; ++i) {
      if (!m[i].is_array() || m[i].size() != n)
        throw ValidationError("matrix[" + std::to_string(i) + "]: expected " + std::to_string(n) + " entries");
      for (std::size_t k = 0; k < n; ++k) {
        if (!m[i][k].is_number())
          throw ValidationError("matrix[" + std::to_string(i) + "][" + std::to_string(k) + "]: expected a number");
        h(i, k) = m[i][k].get<double>();
      }
    }
    if (asymmetry(h) > 1e-12 * std::max(1.0, h.max_abs())) throw ValidationError("matrix: must be symmetric");
    c.matrix = std::move(h);
  } else {
    const ObjectReader t = r.child("train");
    c.train = parse_train_config(t);
  }
  c.trained = r.boolean("trained", c.trained);
  c.split = r.text("split", c.split);
  if (c.split != "train" && c.split != "validation" && c.split != "test")
    throw ValidationError("split: expected train, validation, or test");
  c.options.probes = static_cast<std::size_t>(r.integer("probes", c.options.probes));
  c.options.power_iters = static_cast<std::size_t>(r.integer("power_iters", c.options.power_iters));
  c.options.power_tol = r.number("power_tol", c.options.power_tol);
  c.options.seed = r.integer("seed", c.options.seed);
  c.options.exact_spectrum = r.boolean("exact_spectrum", c.options.exact_spectrum);
  if (c.options.probes < 1) throw ValidationError("probes: must be >= 1");
  if (c.options.power_iters < 1) throw ValidationError("power_iters: must be >= 1");
  if (!(c.options.power_tol > 0.0)) throw ValidationError("power_tol: must be > 0");
  return c;
}

json to_json(const CurvatureConfig& c) {
  json j;
  if (c.matrix) {
    json rows = json::array();
    for (std::size_t i = 0; i < c.matrix->rows(); ++i)
      rows.push_back(std::vector<double>(c.matrix->row(i).begin(), c.matrix->row(i).end()));
    j["matrix"] = rows;
  } else {
    j["train"] = to_json(*c.train);
    j["trained"] = c.trained;
    j["split"] = c.split;
  }
  j["probes"] = c.options.probes;
  j["power_iters"] = c.options.power_iters;
  j["power_tol"] = c.options.power_tol;
  j["seed"] = c.options.seed;
  j["exact_spectrum"] = c.options.exact_spectrum;
  return j;
}

BoundConfig parse_bound_config(const ObjectReader& r) {
  r.only({"n", "epsilon", "lambda", "kl", "empirical_risk", "delta", "grid_check"});
  BoundConfig c;
  for (const char* key : {"n", "kl", "empirical_risk"})
    if (!r.has(key)) throw ValidationError(r.field(key) + ": missing");
  c.input.n = r.number("n", 0.0);
  c.input.epsilon = r.number("epsilon", c.input.epsilon);
  c.input.lambda = r.number("lambda", c.input.lambda);
  c.input.kl = r.number("kl", 0.0);
  c.input.empirical_risk = r.number("empirical_risk", 0.0);
  c.delta = r.number("delta", c.input.epsilon);
  c.grid_check = r.boolean("grid_check", false);
  (void)info::thiemann_bound(c.input);
  return c;
}

json to_json(const BoundConfig& c) {
  return {{"n", c.input.n},
          {"epsilon", c.input.epsilon},
          {"lambda", c.input.lambda},
          {"kl", c.input.kl},
          {"empirical_risk", c.input.empirical_risk},
          {"delta", c.delta},
          {"grid_check", c.grid_check}};
}

}  // namespace curvlab::cli
