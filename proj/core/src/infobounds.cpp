#include "curvlab/infobounds.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "curvlab/error.hpp"

namespace curvlab::info {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void require_matching(const Grid& grid, std::span<const double> values, const char* who) {
  if (values.size() != grid.size()) {
    std::ostringstream msg;
    msg << who << ": " << values.size() << " values for a grid of " << grid.size() << " cells";
    throw ValidationError(msg.str());
  }
  if (grid.size() == 0) throw ValidationError(std::string(who) + ": empty grid");
}

// Normalizes w_i exp(logits_i) on the grid. Cells with logit -inf get density 0.
// Returns log of sum_i w_i exp(logits_i).
double normalize_log_weights(const Grid& grid, std::span<const double> logits, Vector& density) {
  double top = -kInf;
  for (double l : logits) top = std::max(top, l);
  if (!std::isfinite(top)) throw ValidationError("grid density: every cell has zero weight");
  KahanSum z;
  density.assign(logits.size(), 0.0);
  for (std::size_t i = 0; i < logits.size(); ++i) {
    density[i] = std::exp(logits[i] - top);
    z.add(grid.weights[i] * density[i]);
  }
  const double total = z.value();
  for (double& d : density) d /= total;
  return top + std::log(total);
}

}  // namespace

Grid uniform_grid(double lo, double hi, std::size_t points) {
  if (!(hi > lo) || points < 2) throw ValidationError("uniform_grid: need hi > lo and at least 2 points");
  Grid g;
  g.points = Matrix(points, 1);
  g.weights.resize(points);
  const double step = (hi - lo) / static_cast<double>(points - 1);
  for (std::size_t i = 0; i < points; ++i) {
    g.points(i, 0) = i + 1 == points ? hi : lo + step * static_cast<double>(i);
    g.weights[i] = (i == 0 || i + 1 == points) ? 0.5 * step : step;
  }
  return g;
}

Grid uniform_grid(double lo0, double hi0, double lo1, double hi1, std::size_t points) {
  const Grid a = uniform_grid(lo0, hi0, points);
  const Grid b = uniform_grid(lo1, hi1, points);
  Grid g;
  g.points = Matrix(points * points, 2);
  g.weights.resize(points * points);
  for (std::size_t i = 0; i < points; ++i)
    for (std::size_t j = 0; j < points; ++j) {
      const std::size_t r = i * points + j;
      g.points(r, 0) = a.points(i, 0);
      g.points(r, 1) = b.points(j, 0);
      g.weights[r] = a.weights[i] * b.weights[j];
    }
  return g;
}

Grid grid_from_points(Matrix points, Vector weights) {
  if (points.rows() != weights.size() || weights.empty())
    throw ValidationError("grid_from_points: need one positive weight per point");
  for (double w : weights)
    if (!(w > 0.0) || !std::isfinite(w)) throw ValidationError("grid_from_points: weights must be finite and > 0");
  return Grid{std::move(points), std::move(weights)};
}

double GridDensity::mass() const {
  KahanSum s;
  for (std::size_t i = 0; i < density.size(); ++i) s.add(density[i] * grid.weights[i]);
  return s.value();
}

double GridDensity::expectation(std::span<const double> values) const {
  require_matching(grid, values, "expectation");
  KahanSum s;
  for (std::size_t i = 0; i < density.size(); ++i)
    if (density[i] > 0.0) s.add(grid.weights[i] * density[i] * values[i]);
  return s.value();
}

void GridDensity::validate(double tol) const {
  if (density.size() != grid.size()) throw ValidationError("grid density: size does not match its grid");
  for (double d : density)
    if (!(d >= 0.0) || !std::isfinite(d)) throw ValidationError("grid density: values must be finite and >= 0");
  const double m = mass();
  if (std::abs(m - 1.0) > tol) {
    std::ostringstream msg;
    msg << "grid density: mass " << format_double(m) << " is not 1";
    throw ValidationError(msg.str());
  }
}

std::string GridDensity::to_csv() const {
  std::string out;
  for (std::size_t k = 0; k < grid.dim(); ++k) out += "theta_" + std::to_string(k) + ",";
  out += "weight,density\n";
  for (std::size_t i = 0; i < size(); ++i) {
    for (std::size_t k = 0; k < grid.dim(); ++k) out += format_double(grid.points(i, k)) + ",";
    out += format_double(grid.weights[i]) + "," + format_double(density[i]) + "\n";
  }
  return out;
}

GridDensity uniform_density(const Grid& grid) {
  if (grid.size() == 0) throw ValidationError("uniform_density: empty grid");
  KahanSum s;
  for (double w : grid.weights) s.add(w);
  return GridDensity{grid, Vector(grid.size(), 1.0 / s.value())};
}

GibbsPrior maxwell_boltzmann(const Grid& grid, std::span<const double> loss, double beta) {
  require_matching(grid, loss, "maxwell_boltzmann");
  if (!std::isfinite(beta)) throw ValidationError("maxwell_boltzmann: beta must be finite");
  bool any_finite = false;
  for (double l : loss) {
    if (std::isnan(l) || l == -kInf) throw ValidationError("maxwell_boltzmann: loss values must be finite or +inf");
    if (std::isfinite(l)) any_finite = true;
    else if (beta <= 0.0) throw ValidationError("maxwell_boltzmann: infinite loss requires beta > 0");
  }
  if (!any_finite) throw ValidationError("maxwell_boltzmann: every loss value is infinite");

  Vector logits(loss.size());
  for (std::size_t i = 0; i < loss.size(); ++i) logits[i] = std::isfinite(loss[i]) ? -beta * loss[i] : -kInf;
  GibbsPrior out;
  out.beta = beta;
  out.density.grid = grid;
  out.log_alpha = -normalize_log_weights(grid, logits, out.density.density);
  return out;
}

GridDensity maxwell_boltzmann_density(const Grid& grid, std::span<const double> loss, double beta) {
  return maxwell_boltzmann(grid, loss, beta).density;
}

double phi_beta(const Grid& grid, std::span<const double> loss, double beta) {
  return maxwell_boltzmann_density(grid, loss, beta).expectation(loss);
}

double phi_beta_printed(const Grid& grid, std::span<const double> loss, double beta) {
  const GibbsPrior p = maxwell_boltzmann(grid, loss, beta);
  // int e^{-beta L} = 1/alpha, int L e^{-beta L} = E_p[L] / alpha.
  return std::exp(-2.0 * p.log_alpha) * p.density.expectation(loss);
}

BetaSolution solve_beta(const Grid& grid, std::span<const double> loss, double target, double tol) {
  require_matching(grid, loss, "solve_beta");
  if (!(tol > 0.0)) throw ValidationError("solve_beta: tol must be > 0");
  double lo_loss = kInf, hi_loss = -kInf;
  for (double l : loss) {
    if (!std::isfinite(l)) throw ValidationError("solve_beta: loss values must be finite");
    lo_loss = std::min(lo_loss, l);
    hi_loss = std::max(hi_loss, l);
  }
  const double range = hi_loss - lo_loss;
  if (!(range > 0.0)) throw ValidationError("solve_beta: loss is constant, phi does not depend on beta");

  // beta * range spans +/- 700 nats across the bracket.
  const double limit = 700.0 / range;
  double lo = -limit, hi = limit;
  const double phi_lo = phi_beta(grid, loss, lo);
  const double phi_hi = phi_beta(grid, loss, hi);
  if (!(target > phi_hi && target < phi_lo)) {
    std::ostringstream msg;
    msg << "solve_beta: target " << format_double(target) << " outside attainable interval ("
        << format_double(phi_hi) << ", " << format_double(phi_lo) << ")";
    throw ValidationError(msg.str());
  }

  BetaSolution out;
  out.phi = phi_beta(grid, loss, 0.0);
  if (std::abs(out.phi - target) <= tol) return out;
  for (std::size_t it = 1; it <= 400; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double phi = phi_beta(grid, loss, mid);
    out.beta = mid;
    out.phi = phi;
    out.iterations = it;
    if (std::abs(phi - target) <= tol) return out;
    if (mid == lo || mid == hi) break;
    (phi > target ? lo : hi) = mid;
  }
  std::ostringstream msg;
  msg << "solve_beta: bracket collapsed at beta " << format_double(out.beta) << " with |phi - target| = "
      << format_double(std::abs(out.phi - target)) << " > tol";
  throw NumericError(msg.str());
}

namespace {

void validate_case(const PacBayesCase& c) {
  if (!(c.n >= 1.0) || !std::isfinite(c.n)) throw ValidationError("bound.n must be >= 1");
  if (!(c.epsilon > 0.0) || !std::isfinite(c.epsilon)) throw ValidationError("bound.epsilon must be > 0");
  if (!(c.lambda > 0.0 && c.lambda < 2.0)) throw ValidationError("bound.lambda must lie in (0, 2)");
  if (!(c.kl >= 0.0) || !std::isfinite(c.kl)) throw ValidationError("bound.kl must be finite and >= 0");
  if (!(c.empirical_risk >= 0.0 && c.empirical_risk <= 1.0))
    throw ValidationError("bound.empirical_risk must lie in [0, 1]");
}

}  // namespace

double thiemann_j(const PacBayesCase& c) {
  validate_case(c);
  return c.empirical_risk / (1.0 - 0.5 * c.lambda);
}

double thiemann_bound(const PacBayesCase& c) {
  validate_case(c);
  const double shrink = 1.0 - 0.5 * c.lambda;
  const double complexity = c.kl + std::log(2.0 * std::sqrt(c.n) / c.epsilon);
  return c.empirical_risk / shrink + complexity / (c.n * c.lambda * shrink);
}

double optimal_lambda(double n, double kl, double empirical_risk, double delta) {
  validate_case(PacBayesCase{n, delta, 1.0, kl, empirical_risk});
  const double complexity = kl + std::log(2.0 * std::sqrt(n) / delta);
  if (!(complexity > 0.0)) {
    std::ostringstream msg;
    msg << "optimal_lambda: KL + ln(2 sqrt(n) / delta) = " << format_double(complexity) << " must be > 0";
    throw ValidationError(msg.str());
  }
  return 2.0 / (std::sqrt(2.0 * n * empirical_risk / complexity + 1.0) + 1.0);
}

LambdaScan scan_lambda(PacBayesCase c, double lo, double hi, std::size_t points) {
  if (!(lo > 0.0 && hi < 2.0 && hi > lo) || points < 2) throw ValidationError("scan_lambda: need 0 < lo < hi < 2");
  LambdaScan best{lo, kInf};
  for (std::size_t i = 0; i < points; ++i) {
    c.lambda = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(points - 1);
    const double b = thiemann_bound(c);
    if (b < best.minimum) best = {c.lambda, b};
  }
  return best;
}

GridDensity gibbs_posterior(const GridDensity& prior, double lambda, double n, std::span<const double> risk) {
  require_matching(prior.grid, risk, "gibbs_posterior");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ValidationError("gibbs_posterior: lambda must be >= 0");
  if (!(n >= 0.0) || !std::isfinite(n)) throw ValidationError("gibbs_posterior: n must be >= 0");
  prior.validate();
  if (lambda == 0.0) return prior;
  Vector logits(risk.size());
  for (std::size_t i = 0; i < risk.size(); ++i) {
    if (!std::isfinite(risk[i])) throw ValidationError("gibbs_posterior: risk values must be finite");
    logits[i] = prior.density[i] > 0.0 ? std::log(prior.density[i]) - lambda * n * risk[i] : -kInf;
  }
  GridDensity out{prior.grid, {}};
  normalize_log_weights(prior.grid, logits, out.density);
  return out;
}

double kl_divergence(const GridDensity& p, const GridDensity& q) {
  if (p.size() != q.size() || p.grid.weights != q.grid.weights)
    throw ValidationError("kl_divergence: densities live on different grids");
  KahanSum s;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p.density[i] == 0.0) continue;
    if (q.density[i] == 0.0) {
      std::ostringstream msg;
      msg << "kl_divergence: reference density is 0 at cell " << i << " where the first density is positive";
      throw ValidationError(msg.str());
    }
    s.add(p.grid.weights[i] * p.density[i] * std::log(p.density[i] / q.density[i]));
  }
  return std::max(0.0, s.value());
}

double focal_regularizer_kl(const GridDensity& posterior, double beta, std::span<const double> loss) {
  posterior.validate();
  return kl_divergence(posterior, maxwell_boltzmann_density(posterior.grid, loss, beta));
}

double kl_divergence(const geometry::ParametricFamily& family, std::span<const double> xi1,
                     std::span<const double> xi2) {
  family.check(xi1);
  family.check(xi2);
  if (const auto closed = family.closed_form_kl(xi1, xi2)) return std::max(0.0, *closed);
  KahanSum s;
  for (const auto& node : family.grid(xi1)) {
    const double l1 = family.log_density(node.x, xi1);
    const double p = std::exp(l1);
    if (p == 0.0) continue;
    const double l2 = family.log_density(node.x, xi2);
    if (!std::isfinite(l2)) throw ValidationError("kl_divergence: second distribution has no mass where the first does");
    s.add(node.weight * p * (l1 - l2));
  }
  return std::max(0.0, s.value());
}

double kl_quadratic_approx(const Matrix& fisher, std::span<const double> dxi) {
  if (!fisher.square() || fisher.rows() != dxi.size())
    throw ValidationError("kl_quadratic_approx: Fisher matrix and displacement differ in dimension");
  if (!is_positive_definite(fisher)) throw ValidationError("kl_quadratic_approx: Fisher matrix is not SPD");
  return 0.5 * dot(dxi, fisher * dxi);
}

BoundReport bound_report(const PacBayesCase& c, double delta, bool with_scan) {
  BoundReport r;
  r.input = c;
  r.j = thiemann_j(c);
  r.bound = thiemann_bound(c);
  validate_case(PacBayesCase{c.n, delta, 1.0, c.kl, c.empirical_risk});
  if (c.kl + std::log(2.0 * std::sqrt(c.n) / delta) > 0.0) {
    PacBayesCase at = c;
    at.lambda = optimal_lambda(c.n, c.kl, c.empirical_risk, delta);
    r.optimal_lambda = at.lambda;
    r.bound_at_optimal = thiemann_bound(at);
  }
  if (with_scan) r.scan = scan_lambda(c);
  return r;
}

nlohmann::json to_json(const BoundReport& r) {
  nlohmann::json j = {
      {"n", r.input.n},
      {"epsilon", r.input.epsilon},
      {"lambda", r.input.lambda},
      {"kl", r.input.kl},
      {"empirical_risk", r.input.empirical_risk},
      {"j", r.j},
      {"bound", r.bound},
      {"optimal_lambda", r.optimal_lambda ? nlohmann::json(*r.optimal_lambda) : nlohmann::json(nullptr)},
      {"bound_at_optimal_lambda", r.bound_at_optimal ? nlohmann::json(*r.bound_at_optimal) : nlohmann::json(nullptr)},
  };
  if (r.scan) {
    j["grid_argmin_lambda"] = r.scan->argmin;
    j["grid_min_bound"] = r.scan->minimum;
    if (r.bound_at_optimal) j["grid_gap"] = *r.bound_at_optimal - r.scan->minimum;
  }
  return j;
}

}  // namespace curvlab::info
