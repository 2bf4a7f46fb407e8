#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "curvlab/geometry.hpp"
#include "curvlab/numkit.hpp"

namespace curvlab::info {

/// Cells of a parameter grid: one row of `points` per cell, with its
/// integration weight.
struct Grid {
  Matrix points;  // n x dim
  Vector weights;

  std::size_t size() const { return weights.size(); }
  std::size_t dim() const { return points.cols(); }
};

inline constexpr std::size_t kDefaultGrid1d = 2001;
inline constexpr std::size_t kDefaultGrid2d = 201;

/// Uniform lattice on [lo, hi] with trapezoid weights.
Grid uniform_grid(double lo, double hi, std::size_t points = kDefaultGrid1d);
/// Tensor-product trapezoid lattice, `points` per axis, first axis slowest.
Grid uniform_grid(double lo0, double hi0, double lo1, double hi1, std::size_t points = kDefaultGrid2d);
/// Arbitrary cells, e.g. unit weights for a discrete parameter set.
Grid grid_from_points(Matrix points, Vector weights);

/// Density values on a grid; sum(density * weight) == 1.
struct GridDensity {
  Grid grid;
  Vector density;

  std::size_t size() const { return density.size(); }
  double mass() const;
  /// sum_i weight_i density_i values_i over cells with nonzero density.
  double expectation(std::span<const double> values) const;
  /// Throws ValidationError unless density >= 0 and mass is 1 within tol.
  void validate(double tol = 1e-8) const;
  /// Header theta_0[,theta_1],weight,density.
  std::string to_csv() const;
};

GridDensity uniform_density(const Grid& grid);

/// p = alpha exp(-beta L) with alpha = 1 / sum_i w_i exp(-beta L_i).
struct GibbsPrior {
  double beta = 0.0;
  double log_alpha = 0.0;
  GridDensity density;
};

/// Loss values may be +inf (zero-density cells) when beta > 0; NaN, -inf, and an
/// all-infinite loss are rejected. Normalized through log-sum-exp.
GibbsPrior maxwell_boltzmann(const Grid& grid, std::span<const double> loss, double beta);
GridDensity maxwell_boltzmann_density(const Grid& grid, std::span<const double> loss, double beta);

/// Expected loss under maxwell_boltzmann_density(beta); strictly decreasing in
/// beta unless the loss is constant.
double phi_beta(const Grid& grid, std::span<const double> loss, double beta);

/// Unnormalized product (int e^{-beta L}) (int L e^{-beta L}); computable for
/// comparison, but not monotone in general.
double phi_beta_printed(const Grid& grid, std::span<const double> loss, double beta);

struct BetaSolution {
  double beta = 0.0;
  double phi = 0.0;
  std::size_t iterations = 0;
};

/// Bisection for phi_beta(beta) == target. The attainable interval is
/// (phi(beta_hi), phi(beta_lo)) for a bracket sized from the loss range; a
/// target outside it is rejected with the interval in the message.
BetaSolution solve_beta(const Grid& grid, std::span<const double> loss, double target, double tol = 1e-12);

struct PacBayesCase {
  double n = 0.0;            // sample count, >= 1
  double epsilon = 0.05;     // confidence parameter, > 0
  double lambda = 1.0;       // in (0, 2)
  double kl = 0.0;           // >= 0
  double empirical_risk = 0.0;  // in [0, 1]
};

/// E[R_hat] / (1 - lambda/2).
double thiemann_j(const PacBayesCase& c);
/// J + (KL + ln(2 sqrt(n) / epsilon)) / (n lambda (1 - lambda/2)).
double thiemann_bound(const PacBayesCase& c);

/// Closed-form minimizer of thiemann_bound over lambda for fixed posterior.
/// Rejects KL + ln(2 sqrt(n) / delta) <= 0.
double optimal_lambda(double n, double kl, double empirical_risk, double delta);

struct LambdaScan {
  double argmin = 0.0;
  double minimum = 0.0;
};

/// Bound on a uniform lambda grid over [lo, hi].
LambdaScan scan_lambda(PacBayesCase c, double lo = 0.01, double hi = 1.99, std::size_t points = 19801);

/// prior * exp(-lambda n R_hat), normalized; lambda == 0 returns the prior.
GridDensity gibbs_posterior(const GridDensity& prior, double lambda, double n, std::span<const double> risk);

/// sum_i w_i p_i ln(p_i / q_i) over cells with p_i > 0; rejects q_i == 0 there.
double kl_divergence(const GridDensity& p, const GridDensity& q);

/// KL between a posterior and the Gibbs prior of the same grid at beta.
double focal_regularizer_kl(const GridDensity& posterior, double beta, std::span<const double> loss);

/// KL(xi1 || xi2) in closed form when the family provides it, otherwise by
/// quadrature on the family's grid at xi1.
double kl_divergence(const geometry::ParametricFamily& family, std::span<const double> xi1,
                     std::span<const double> xi2);

/// 1/2 dxi^T G dxi for SPD G.
double kl_quadratic_approx(const Matrix& fisher, std::span<const double> dxi);

struct BoundReport {
  PacBayesCase input;
  double j = 0.0;
  double bound = 0.0;
  // Absent when KL + ln(2 sqrt(n) / delta) <= 0: the bound then decreases
  // toward lambda = 0 and has no interior minimizer.
  std::optional<double> optimal_lambda;
  std::optional<double> bound_at_optimal;
  std::optional<LambdaScan> scan;
};

BoundReport bound_report(const PacBayesCase& c, double delta, bool with_scan);
nlohmann::json to_json(const BoundReport& r);

}  // namespace curvlab::info
