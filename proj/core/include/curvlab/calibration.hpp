#pragma once

#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "curvlab/numkit.hpp"

namespace curvlab {

inline constexpr std::size_t kDefaultEceBins = 15;

struct CalibrationBin {
  double lo = 0.0;
  double hi = 0.0;
  std::size_t count = 0;
  double confidence = 0.0;  // mean max-class probability; 0 when empty
  double accuracy = 0.0;    // 0 when empty
};

struct CalibrationReport {
  std::size_t samples = 0;
  std::vector<CalibrationBin> bins;
  double ece = 0.0;
  double accuracy = 0.0;
  double mean_confidence = 0.0;
};

/// argmax of a row; ties go to the lowest class index.
std::size_t predicted_class(std::span<const double> row);

double accuracy(const Matrix& probs, std::span<const int> labels);

/// Equal-width bins over (0, 1], right-closed: bin b covers (b/B, (b+1)/B] and
/// the first bin also takes confidence 0. Bin sums are compensated, so the
/// result does not depend on sample order.
CalibrationReport ece(const Matrix& probs, std::span<const int> labels, std::size_t bins = kDefaultEceBins);

/// Header bin_lo,bin_hi,count,conf,acc.
std::string to_csv(const CalibrationReport& report);
nlohmann::json to_json(const CalibrationReport& report);

}  // namespace curvlab
