#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "curvlab/infobounds.hpp"
#include "curvlab/trainer.hpp"

namespace curvlab::cli {

using nlohmann::json;

/// Strict reader over one JSON object: every key must be consumed or declared,
/// and errors carry the dotted path of the offending field.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path);

  bool has(const std::string& key) const { return j_.contains(key); }
  double number(const std::string& key, double fallback) const;
  std::uint64_t integer(const std::string& key, std::uint64_t fallback) const;
  bool boolean(const std::string& key, bool fallback) const;
  std::string text(const std::string& key, const std::string& fallback) const;
  std::vector<double> numbers(const std::string& key, std::vector<double> fallback) const;
  std::vector<std::uint64_t> integers(const std::string& key, std::vector<std::uint64_t> fallback) const;
  ObjectReader child(const std::string& key) const;
  const json& raw(const std::string& key) const;
  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  /// Rejects any key outside `known`.
  void only(std::initializer_list<const char*> known) const;

 private:
  const json& j_;
  std::string path_;
};

json parse_json_file(const std::string& path);

/// Keys: model, loss, optimizer, batch_size, epochs, seed, eval_fractions,
/// curvature, ece_bins, data.
TrainConfig parse_train_config(const ObjectReader& r);
json to_json(const TrainConfig& c);

struct SweepConfig {
  TrainConfig base;
  SweepAxis axis = SweepAxis::Gamma;
  std::vector<double> values;
  std::vector<std::uint64_t> seeds;
};

/// Train keys plus "sweep": {axis, values, seeds}.
SweepConfig parse_sweep_config(const ObjectReader& r);
json to_json(const SweepConfig& c);

struct CurvatureConfig {
  std::optional<Matrix> matrix;
  std::optional<TrainConfig> train;
  bool trained = true;
  std::string split = "validation";
  CurvatureOptions options;
};

CurvatureConfig parse_curvature_config(const ObjectReader& r);
json to_json(const CurvatureConfig& c);

struct BoundConfig {
  info::PacBayesCase input;
  double delta = 0.05;
  bool grid_check = false;
};

/// Keys n, epsilon, lambda, kl, empirical_risk, delta (defaults to epsilon), grid_check.
BoundConfig parse_bound_config(const ObjectReader& r);
json to_json(const BoundConfig& c);

}  // namespace curvlab::cli
