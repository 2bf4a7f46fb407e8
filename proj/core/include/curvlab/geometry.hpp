#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "curvlab/autodiff.hpp"
#include "curvlab/numkit.hpp"

namespace curvlab::geometry {

/// Index convention, used everywhere in this namespace:
///   Christoffel   gamma(l, i, j)    = Gamma^l_{ij}     (upper first)
///   RiemannTensor r(r, i, j, k)     = R^r_{ijk}
///   metric partials dg[k](i, j)     = d g_ij / d theta^k
inline constexpr double kDefaultStep = 1e-4;

/// theta -> g(theta), symmetric positive definite on its domain.
struct MetricField {
  std::string name;
  std::size_t dim = 0;
  std::function<Matrix(std::span<const double>)> metric;
  /// Optional closed-form partials: element k is d g / d theta^k.
  std::function<std::vector<Matrix>(std::span<const double>)> partials;
  /// Optional chart-domain check for query points; throws ValidationError.
  std::function<void(std::span<const double>)> domain;

  /// g(theta), rejected unless SPD.
  Matrix at(std::span<const double> theta) const;
  void check_point(std::span<const double> theta) const;
};

namespace metrics {

MetricField euclidean(std::size_t dim);
MetricField constant(Matrix g);
/// Unit sphere in (polar, azimuth) coordinates: diag(1, sin^2 theta_1).
/// Chart restricted to theta_1 in [0.2, pi - 0.2].
MetricField sphere();
/// diag(1 + theta_1^2, 1).
MetricField stretched_plane();
/// Fisher metric of N(mu, sigma) in (mu, sigma): diag(1/sigma^2, 2/sigma^2).
MetricField gaussian_fisher();

}  // namespace metrics

/// Gamma^l_{ij}, dense d x d x d.
class Christoffel {
 public:
  explicit Christoffel(std::size_t dim = 0) : dim_(dim), data_(dim * dim * dim, 0.0) {}
  std::size_t dim() const { return dim_; }
  double& operator()(std::size_t l, std::size_t i, std::size_t j) { return data_[(l * dim_ + i) * dim_ + j]; }
  double operator()(std::size_t l, std::size_t i, std::size_t j) const { return data_[(l * dim_ + i) * dim_ + j]; }
  double max_abs() const;
  /// max |Gamma^l_{ij} - Gamma^l_{ji}|.
  double lower_asymmetry() const;
  std::span<const double> data() const { return data_; }

 private:
  std::size_t dim_;
  Vector data_;
};

/// R^r_{ijk}, dense d^4.
class RiemannTensor {
 public:
  explicit RiemannTensor(std::size_t dim = 0) : dim_(dim), data_(dim * dim * dim * dim, 0.0) {}
  std::size_t dim() const { return dim_; }
  double& operator()(std::size_t r, std::size_t i, std::size_t j, std::size_t k) {
    return data_[((r * dim_ + i) * dim_ + j) * dim_ + k];
  }
  double operator()(std::size_t r, std::size_t i, std::size_t j, std::size_t k) const {
    return data_[((r * dim_ + i) * dim_ + j) * dim_ + k];
  }
  double max_abs() const;
  /// max |R^r_{ijk} + R^r_{jik}|.
  double antisymmetry_defect() const;

 private:
  std::size_t dim_;
  Vector data_;
};

/// d g / d theta^k, closed form when the field provides it, otherwise central
/// differences with one Richardson level. Every stencil point must be SPD.
std::vector<Matrix> metric_partials(const MetricField& field, std::span<const double> theta, double h = kDefaultStep);

/// Levi-Civita coefficients 1/2 g^{lk} (d_i g_jk + d_j g_ik - d_k g_ij).
Christoffel levi_civita(const Matrix& g, const std::vector<Matrix>& dg);
Christoffel christoffel(const MetricField& field, std::span<const double> theta, double h = kDefaultStep);

/// R^r_{ijk} = d_i Gamma^r_{jk} - d_j Gamma^r_{ik} + Gamma^r_{il} Gamma^l_{jk} - Gamma^r_{jl} Gamma^l_{ik},
/// with d Gamma by Richardson central differences of christoffel().
RiemannTensor riemann_tensor(const MetricField& field, std::span<const double> theta, double h = kDefaultStep);

/// d^2 f - Gamma^k_{ij} d_k f, with coordinate derivatives from autodiff.
Matrix connection_hessian(const ad::ScalarFunction& f, const Christoffel& gamma, std::span<const double> theta);
Matrix covariant_hessian(const ad::ScalarFunction& f, const MetricField& field, std::span<const double> theta,
                         double h = kDefaultStep);

/// Dual coefficients from d_k g_ij = Gamma_{ki,j} + Gamma*_{kj,i}, raised with g^{-1}.
Christoffel dual_christoffel(const MetricField& field, const Christoffel& primal, std::span<const double> theta,
                             double h = kDefaultStep);

/// d^2 f - Gamma*^k_{ij} d_k f for the dual of the given primal connection.
Matrix dual_hessian(const ad::ScalarFunction& f, const MetricField& field, const Christoffel& primal,
                    std::span<const double> theta, double h = kDefaultStep);

/// g^{ij} H_ij: the trace of a (0,2) tensor with respect to the metric.
double metric_trace(const Matrix& g, const Matrix& h);

/// max_{i,j,k} |d_k g_ij - Gamma^l_{ki} g_lj - Gamma^l_{kj} g_il|.
double metric_compatibility_residual(const MetricField& field, const Christoffel& gamma,
                                     std::span<const double> theta, double h = kDefaultStep);

/// sqrt(det g(theta)).
double volume_element(const MetricField& field, std::span<const double> theta);

// ---------------------------------------------------------------------------
// Parametric families over a scalar observation x.

struct QuadratureNode {
  double x;
  double weight;
};

class ParametricFamily {
 public:
  virtual ~ParametricFamily() = default;
  virtual std::string name() const = 0;
  virtual std::size_t dim() const = 0;
  /// Throws ValidationError when xi is outside the parameter domain.
  virtual void check(std::span<const double> xi) const = 0;
  virtual double log_density(double x, std::span<const double> xi) const = 0;
  virtual ad::Var log_density(ad::Tape& tape, double x, std::span<const ad::Var> xi) const = 0;
  /// Nodes and weights covering the support at xi (exact sums for discrete families).
  virtual std::vector<QuadratureNode> grid(std::span<const double> xi) const = 0;
  virtual double sample(RngStream& rng, std::span<const double> xi) const = 0;
  virtual std::optional<Matrix> closed_form_fisher(std::span<const double>) const { return std::nullopt; }
  virtual std::optional<double> closed_form_kl(std::span<const double>, std::span<const double>) const {
    return std::nullopt;
  }
};

class BernoulliFamily : public ParametricFamily {
 public:
  std::string name() const override { return "bernoulli"; }
  std::size_t dim() const override { return 1; }
  void check(std::span<const double> xi) const override;
  double log_density(double x, std::span<const double> xi) const override;
  ad::Var log_density(ad::Tape& tape, double x, std::span<const ad::Var> xi) const override;
  std::vector<QuadratureNode> grid(std::span<const double> xi) const override;
  double sample(RngStream& rng, std::span<const double> xi) const override;
  std::optional<Matrix> closed_form_fisher(std::span<const double> xi) const override;
  std::optional<double> closed_form_kl(std::span<const double> a, std::span<const double> b) const override;
};

/// N(mu, sigma) with xi = (mu, sigma). Grid: mu +/- 12 sigma, trapezoid.
class GaussianFamily : public ParametricFamily {
 public:
  explicit GaussianFamily(std::size_t grid_points = 4001) : grid_points_(grid_points) {}
  std::string name() const override { return "gaussian"; }
  std::size_t dim() const override { return 2; }
  void check(std::span<const double> xi) const override;
  double log_density(double x, std::span<const double> xi) const override;
  ad::Var log_density(ad::Tape& tape, double x, std::span<const ad::Var> xi) const override;
  std::vector<QuadratureNode> grid(std::span<const double> xi) const override;
  double sample(RngStream& rng, std::span<const double> xi) const override;
  std::optional<Matrix> closed_form_fisher(std::span<const double> xi) const override;
  std::optional<double> closed_form_kl(std::span<const double> a, std::span<const double> b) const override;

 private:
  std::size_t grid_points_;
};

/// Categorical on {0, ..., K-1} with free parameters (p_0, ..., p_{K-2}).
class CategoricalFamily : public ParametricFamily {
 public:
  explicit CategoricalFamily(std::size_t categories);
  std::string name() const override { return "categorical"; }
  std::size_t dim() const override { return categories_ - 1; }
  void check(std::span<const double> xi) const override;
  double log_density(double x, std::span<const double> xi) const override;
  ad::Var log_density(ad::Tape& tape, double x, std::span<const ad::Var> xi) const override;
  std::vector<QuadratureNode> grid(std::span<const double> xi) const override;
  double sample(RngStream& rng, std::span<const double> xi) const override;
  std::optional<Matrix> closed_form_fisher(std::span<const double> xi) const override;

 private:
  std::size_t categories_;
};

std::unique_ptr<ParametricFamily> make_family(const std::string& name);

struct FisherEstimate {
  Matrix metric;
  bool positive_definite = false;
  double normalization = 1.0;  // sum of density * weight over the grid (1 for Monte Carlo)
};

/// -E[d^2 l / d xi_i d xi_j] by quadrature on the family's grid; rejected when
/// the grid mass deviates from 1 by more than 1e-6.
FisherEstimate fisher_metric(const ParametricFamily& family, std::span<const double> xi);

/// Same expectation from n samples.
FisherEstimate fisher_metric_monte_carlo(const ParametricFamily& family, std::span<const double> xi,
                                         std::size_t samples, RngStream& rng);

struct JacobianRank {
  std::size_t rank = 0;
  std::size_t expected = 0;  // d + 1
  bool full_rank = false;
};

/// Rows (y(1-y), y(1-y) x_1, ..., y(1-y) x_d) with y = sigmoid(theta^T x + theta0),
/// one per input row; returns their numeric rank.
Matrix nn_manifold_jacobian(std::span<const double> theta, double theta0, const Matrix& inputs);
JacobianRank nn_manifold_jacobian_rank(std::span<const double> theta, double theta0, const Matrix& inputs,
                                       double tol = 1e-10);

nlohmann::json to_json(const Christoffel& gamma);
nlohmann::json to_json(const RiemannTensor& r);
nlohmann::json to_json(const Matrix& m);

}  // namespace curvlab::geometry
