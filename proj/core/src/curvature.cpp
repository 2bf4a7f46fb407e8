#include "curvlab/curvature.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "curvlab/error.hpp"

namespace curvlab {

TraceEstimate hutchinson_trace(const ad::HvpOracle& oracle, std::size_t probes, RngStream& rng) {
  if (probes < 1) throw ValidationError("hutchinson_trace: need at least one probe");
  const std::size_t d = oracle.dimension();
  std::vector<Vector> v(probes);
  for (auto& p : v) p = rademacher(rng, d);

  std::vector<double> quad(probes);
  parallel_for(probes, [&](std::size_t i) { quad[i] = dot(v[i], oracle.apply(v[i])); });
  for (std::size_t i = 0; i < probes; ++i) {
    if (!std::isfinite(quad[i])) {
      std::ostringstream msg;
      msg << "hutchinson_trace: oracle returned a non-finite value for probe " << i;
      throw NumericError(msg.str());
    }
  }

  double sum = 0.0;
  for (double q : quad) sum += q;
  const double mean = sum / static_cast<double>(probes);
  TraceEstimate out;
  out.estimate = mean;
  out.probes = probes;
  if (probes > 1) {
    double ss = 0.0;
    for (double q : quad) ss += (q - mean) * (q - mean);
    out.standard_error = std::sqrt(ss / static_cast<double>(probes - 1)) / std::sqrt(static_cast<double>(probes));
  }
  return out;
}

PowerIterationResult power_iteration_lambda_max(const ad::HvpOracle& oracle, std::size_t iters, double tol,
                                                std::uint64_t seed) {
  if (iters < 1) throw ValidationError("power_iteration_lambda_max: need at least one iteration");
  const std::size_t d = oracle.dimension();
  RngStream rng(seed);
  Vector u = normal_vector(rng, d);
  {
    const double n = norm2(u);
    for (double& x : u) x /= n;
  }

  PowerIterationResult out;
  double previous = 0.0;
  Vector hu;
  for (std::size_t k = 1; k <= iters; ++k) {
    hu = oracle.apply(u);
    const double lambda = dot(u, hu);
    const double norm = norm2(hu);
    if (!std::isfinite(lambda) || !std::isfinite(norm))
      throw NumericError("power_iteration_lambda_max: oracle returned a non-finite value");
    out.lambda = lambda;
    out.iterations = k;
    if (norm == 0.0) {
      out.converged = true;
      break;
    }
    const bool settled = k > 1 && std::abs(lambda - previous) <= tol * std::abs(lambda);
    previous = lambda;
    for (std::size_t i = 0; i < d; ++i) u[i] = hu[i] / norm;
    if (settled) {
      out.converged = true;
      break;
    }
  }

  hu = oracle.apply(u);
  const double lambda = dot(u, hu);
  out.lambda = lambda;
  const double hu_norm = norm2(hu);
  Vector r(d);
  for (std::size_t i = 0; i < d; ++i) r[i] = hu[i] - lambda * u[i];
  out.residual = norm2(r);
  out.magnitude = std::abs(lambda);
  // With lambda_max == -lambda_min the iterate never settles on one eigenvector:
  // the Rayleigh quotient stalls strictly inside the spectrum while ||H u||
  // still equals the spectral radius.
  if (out.converged && hu_norm > 0.0 && out.residual > 1e-2 * hu_norm) {
    out.sign_tie = true;
    out.magnitude = hu_norm;
  }
  return out;
}

double spectral_radius(std::span<const double> eigenvalues) {
  if (eigenvalues.empty()) throw ValidationError("spectral_radius: empty spectrum");
  double r = 0.0;
  for (double l : eigenvalues) r = std::max(r, std::abs(l));
  return r;
}

PowerLimitSequence spectral_radius_power_limit(const Matrix& h, std::size_t k_max) {
  if (!h.square()) throw ValidationError("spectral_radius_power_limit: matrix is not square");
  if (k_max < 1) throw ValidationError("spectral_radius_power_limit: k_max must be >= 1");
  PowerLimitSequence out;
  Matrix q = h;
  double log_scale = 0.0;
  for (std::size_t k = 1; k <= k_max; ++k) {
    const double n1 = operator_norm(q, 1.0);
    if (n1 == 0.0) {
      out.terms.resize(k_max, 0.0);
      break;
    }
    const double term = std::exp((log_scale + std::log(n1)) / static_cast<double>(k));
    if (!std::isfinite(term) || !std::isfinite(n1)) {
      out.truncated = true;
      break;
    }
    out.terms.push_back(term);
    log_scale += std::log(n1);
    q = (1.0 / n1) * q;
    if (k < k_max) q = q * h;
  }
  return out;
}

double laplacian(const Matrix& h) { return h.trace(); }

TraceEstimate laplacian(const ad::HvpOracle& oracle, std::size_t probes, RngStream& rng) {
  return hutchinson_trace(oracle, probes, rng);
}

double operator_norm(const Matrix& h, double p) {
  if (!h.square()) throw ValidationError("operator_norm: matrix is not square");
  const std::size_t n = h.rows();
  double best = 0.0;
  if (p == 1.0) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += std::abs(h(i, j));
      best = std::max(best, s);
    }
  } else if (std::isinf(p) && p > 0) {
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (double x : h.row(i)) s += std::abs(x);
      best = std::max(best, s);
    }
  } else {
    std::ostringstream msg;
    msg << "operator_norm: unsupported p = " << p << " (supported: 1, inf)";
    throw ValidationError(msg.str());
  }
  return best;
}

double gaussian_curvature(const Matrix& h) {
  if (!h.square()) throw ValidationError("gaussian_curvature: matrix is not square");
  if (asymmetry(h) > 1e-10 * std::max(1.0, h.max_abs()))
    throw ValidationError("gaussian_curvature: matrix is not symmetric");
  return det(h);
}

CurvatureReport curvature_report(const ad::HvpOracle& oracle, const CurvatureOptions& options) {
  CurvatureReport report;
  report.dim = oracle.dimension();
  RngStream rng(options.seed);
  report.trace = hutchinson_trace(oracle, options.probes, rng);
  report.power = power_iteration_lambda_max(oracle, options.power_iters, options.power_tol,
                                            RngStream(options.seed).split(1).seed());
  if (report.dim <= options.dense_cap) {
    const Matrix h = oracle.materialize();
    report.opnorm_1 = operator_norm(h, 1.0);
    report.opnorm_inf = operator_norm(h, std::numeric_limits<double>::infinity());
    report.det = gaussian_curvature(h);
    if (options.exact_spectrum && report.dim <= 512) report.eigenvalues = sym_eigen(h).values;
  }
  return report;
}

nlohmann::json to_json(const CurvatureReport& report) {
  using nlohmann::json;
  auto opt = [](const std::optional<double>& v) { return v && std::isfinite(*v) ? json(*v) : json(nullptr); };
  json j = json::object();
  j["trace"] = report.trace.estimate;
  j["trace_stderr"] = report.trace.standard_error;
  j["probes"] = report.trace.probes;
  j["lambda_max"] = report.power.lambda;
  j["spectral_radius"] = report.power.magnitude;
  j["residual"] = report.power.residual;
  j["iters"] = report.power.iterations;
  j["converged"] = report.power.converged;
  j["sign_tie"] = report.power.sign_tie;
  j["opnorm_1"] = opt(report.opnorm_1);
  j["opnorm_inf"] = opt(report.opnorm_inf);
  j["det"] = opt(report.det);
  j["dim"] = report.dim;
  if (report.eigenvalues) j["eigenvalues"] = *report.eigenvalues;
  return j;
}

}  // namespace curvlab
