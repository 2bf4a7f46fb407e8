#include "curvlab/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "curvlab/error.hpp"

namespace curvlab {

namespace {

void require_labels(const Matrix& probs, std::span<const int> labels, const char* who) {
  if (probs.rows() == 0) throw ValidationError(std::string(who) + ": no samples");
  if (labels.size() != probs.rows()) throw ValidationError(std::string(who) + ": one label per row required");
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= probs.cols()) {
      std::ostringstream msg;
      msg << who << ": label " << labels[i] << " at row " << i << " is outside [0, " << probs.cols() << ")";
      throw ValidationError(msg.str());
    }
  }
}

// Smallest b with confidence <= (b + 1) / B, so an exact edge lands in the lower bin.
std::size_t bin_index(double confidence, std::size_t bins) {
  const double scaled = confidence * static_cast<double>(bins);
  auto b = static_cast<std::size_t>(std::ceil(scaled));
  b = b == 0 ? 0 : b - 1;
  // Rounding in the product can push an edge value one bin too far either way.
  while (b > 0 && confidence <= static_cast<double>(b) / static_cast<double>(bins)) --b;
  while (b + 1 < bins && confidence > static_cast<double>(b + 1) / static_cast<double>(bins)) ++b;
  return std::min(b, bins - 1);
}

}  // namespace

std::size_t predicted_class(std::span<const double> row) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < row.size(); ++c)
    if (row[c] > row[best]) best = c;
  return best;
}

double accuracy(const Matrix& probs, std::span<const int> labels) {
  require_labels(probs, labels, "accuracy");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < probs.rows(); ++i)
    if (predicted_class(probs.row(i)) == static_cast<std::size_t>(labels[i])) ++hits;
  return static_cast<double>(hits) / static_cast<double>(probs.rows());
}

CalibrationReport ece(const Matrix& probs, std::span<const int> labels, std::size_t bins) {
  require_labels(probs, labels, "ece");
  if (bins < 1) throw ValidationError("ece: need at least one bin");
  const std::size_t n = probs.rows();

  std::vector<KahanSum> conf_sum(bins);
  std::vector<std::size_t> hits(bins, 0);
  CalibrationReport report;
  report.samples = n;
  report.bins.resize(bins);
  KahanSum total_conf;
  std::size_t total_hits = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = probs.row(i);
    const std::size_t pred = predicted_class(row);
    const double conf = row[pred];
    if (!(conf >= 0.0 && conf <= 1.0)) {
      std::ostringstream msg;
      msg << "ece: confidence " << conf << " at row " << i << " is outside [0, 1]";
      throw ValidationError(msg.str());
    }
    const std::size_t b = bin_index(conf, bins);
    const bool hit = pred == static_cast<std::size_t>(labels[i]);
    report.bins[b].count += 1;
    conf_sum[b].add(conf);
    hits[b] += hit ? 1 : 0;
    total_conf.add(conf);
    total_hits += hit ? 1 : 0;
  }

  KahanSum gap;
  for (std::size_t b = 0; b < bins; ++b) {
    CalibrationBin& bin = report.bins[b];
    bin.lo = static_cast<double>(b) / static_cast<double>(bins);
    bin.hi = static_cast<double>(b + 1) / static_cast<double>(bins);
    if (bin.count == 0) continue;
    const double count = static_cast<double>(bin.count);
    bin.confidence = conf_sum[b].value() / count;
    bin.accuracy = static_cast<double>(hits[b]) / count;
    gap.add(count / static_cast<double>(n) * std::abs(bin.accuracy - bin.confidence));
  }
  report.ece = std::clamp(gap.value(), 0.0, 1.0);
  report.accuracy = static_cast<double>(total_hits) / static_cast<double>(n);
  report.mean_confidence = total_conf.value() / static_cast<double>(n);
  return report;
}

std::string to_csv(const CalibrationReport& report) {
  std::string out = "bin_lo,bin_hi,count,conf,acc\n";
  for (const auto& b : report.bins)
    out += format_double(b.lo) + "," + format_double(b.hi) + "," + std::to_string(b.count) + "," +
           format_double(b.confidence) + "," + format_double(b.accuracy) + "\n";
  return out;
}

nlohmann::json to_json(const CalibrationReport& report) {
  return {{"samples", report.samples},
          {"bins", report.bins.size()},
          {"ece", report.ece},
          {"accuracy", report.accuracy},
          {"mean_confidence", report.mean_confidence}};
}

}  // namespace curvlab
