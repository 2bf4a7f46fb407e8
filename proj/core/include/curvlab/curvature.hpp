#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

#include <nlohmann/json.hpp>

#include "curvlab/autodiff.hpp"
#include "curvlab/numkit.hpp"

namespace curvlab {

struct TraceEstimate {
  double estimate = 0.0;
  double standard_error = 0.0;  // sample std / sqrt(M); 0 when M == 1
  std::size_t probes = 0;
};

/// (1/M) sum_i v_i^T H v_i over Rademacher probes. Probes are drawn from rng
/// in index order, evaluated concurrently, and reduced in index order.
TraceEstimate hutchinson_trace(const ad::HvpOracle& oracle, std::size_t probes, RngStream& rng);

struct PowerIterationResult {
  double lambda = 0.0;     // signed Rayleigh quotient
  double magnitude = 0.0;  // A(H) estimate
  double residual = 0.0;   // ||H u - lambda u|| for unit u
  std::size_t iterations = 0;
  bool converged = false;
  /// lambda_max and -lambda_min are (numerically) tied; magnitude is ||H u||.
  bool sign_tie = false;
};

inline constexpr std::uint64_t kPowerIterationSeed = 0x5eedULL;

/// Dominant eigenvalue by magnitude. Stops once successive Rayleigh quotients
/// differ by at most tol * |lambda|.
PowerIterationResult power_iteration_lambda_max(const ad::HvpOracle& oracle, std::size_t iters, double tol,
                                                std::uint64_t seed = kPowerIterationSeed);

/// max_i |lambda_i|.
double spectral_radius(std::span<const double> eigenvalues);

struct PowerLimitSequence {
  std::vector<double> terms;  // ||H^k||_1^(1/k), k = 1..
  bool truncated = false;
};

/// Gelfand sequence in the induced 1-norm. Powers are renormalized each step
/// and the scale carried in log space, so large k does not overflow.
PowerLimitSequence spectral_radius_power_limit(const Matrix& h, std::size_t k_max);

/// tr(H); exact for a dense Hessian.
double laplacian(const Matrix& h);
/// Hutchinson estimate of tr(H).
TraceEstimate laplacian(const ad::HvpOracle& oracle, std::size_t probes, RngStream& rng);

/// Induced norm for p = 1 (max column sum) or p = infinity (max row sum).
double operator_norm(const Matrix& h, double p);

/// det(H), the product of principal curvatures.
double gaussian_curvature(const Matrix& h);

struct CurvatureOptions {
  std::size_t probes = 1000;
  std::size_t power_iters = 200;
  double power_tol = 1e-10;
  std::uint64_t seed = 0;
  /// Dense quantities (opnorms, det, spectrum) only up to this dimension.
  std::size_t dense_cap = ad::kDenseHessianCap;
  bool exact_spectrum = true;
};

struct CurvatureReport {
  std::size_t dim = 0;
  TraceEstimate trace;
  PowerIterationResult power;
  std::optional<double> opnorm_1;
  std::optional<double> opnorm_inf;
  std::optional<double> det;
  std::optional<Vector> eigenvalues;  // ascending
};

/// Hutchinson trace and power iteration through the oracle; dense extras when
/// dim <= options.dense_cap.
CurvatureReport curvature_report(const ad::HvpOracle& oracle, const CurvatureOptions& options);

/// Flat object with keys trace, trace_stderr, probes, lambda_max, residual,
/// iters, opnorm_1, opnorm_inf, det, dim. Missing dense values are null.
nlohmann::json to_json(const CurvatureReport& report);

}  // namespace curvlab
