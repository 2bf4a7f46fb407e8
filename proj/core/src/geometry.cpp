#include "curvlab/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "curvlab/error.hpp"

namespace curvlab::geometry {

Matrix MetricField::at(std::span<const double> theta) const {
  if (theta.size() != dim) {
    std::ostringstream msg;
    msg << name << ": point has dimension " << theta.size() << ", expected " << dim;
    throw ValidationError(msg.str());
  }
  Matrix g = metric(theta);
  if (!is_positive_definite(g)) {
    std::ostringstream msg;
    msg << name << ": metric is not symmetric positive definite at (";
    for (std::size_t i = 0; i < theta.size(); ++i) msg << (i ? ", " : "") << theta[i];
    msg << ")";
    throw ValidationError(msg.str());
  }
  return g;
}

void MetricField::check_point(std::span<const double> theta) const {
  if (theta.size() != dim) {
    std::ostringstream msg;
    msg << name << ": point has dimension " << theta.size() << ", expected " << dim;
    throw ValidationError(msg.str());
  }
  if (domain) domain(theta);
  (void)at(theta);
}

namespace metrics {

MetricField euclidean(std::size_t dim) {
  MetricField f = constant(Matrix::identity(dim));
  f.name = "euclidean";
  return f;
}

MetricField constant(Matrix g) {
  if (!is_positive_definite(g)) throw ValidationError("constant metric: matrix is not SPD");
  MetricField f;
  f.name = "constant";
  f.dim = g.rows();
  f.metric = [g](std::span<const double>) { return g; };
  f.partials = [n = g.rows()](std::span<const double>) { return std::vector<Matrix>(n, Matrix(n, n)); };
  return f;
}

MetricField sphere() {
  MetricField f;
  f.name = "sphere";
  f.dim = 2;
  f.metric = [](std::span<const double> t) {
    const double s = std::sin(t[0]);
    return Matrix{{1.0, 0.0}, {0.0, s * s}};
  };
  f.domain = [](std::span<const double> t) {
    if (!(t[0] >= 0.2 && t[0] <= M_PI - 0.2))
      throw ValidationError("sphere: theta_1 must lie in [0.2, pi - 0.2] (chart singular at the poles)");
  };
  return f;
}

MetricField stretched_plane() {
  MetricField f;
  f.name = "stretched-plane";
  f.dim = 2;
  f.metric = [](std::span<const double> t) { return Matrix{{1.0 + t[0] * t[0], 0.0}, {0.0, 1.0}}; };
  return f;
}

MetricField gaussian_fisher() {
  MetricField f;
  f.name = "gaussian-fisher";
  f.dim = 2;
  f.metric = [](std::span<const double> t) {
    const double s2 = t[1] * t[1];
    return Matrix{{1.0 / s2, 0.0}, {0.0, 2.0 / s2}};
  };
  f.partials = [](std::span<const double> t) {
    const double s3 = t[1] * t[1] * t[1];
    return std::vector<Matrix>{Matrix(2, 2), Matrix{{-2.0 / s3, 0.0}, {0.0, -4.0 / s3}}};
  };
  f.domain = [](std::span<const double> t) {
    if (!(t[1] > 0.0)) throw ValidationError("gaussian-fisher: sigma must be > 0");
  };
  return f;
}

}  // namespace metrics

double Christoffel::max_abs() const {
  double m = 0.0;
  for (double x : data_) m = std::max(m, std::abs(x));
  return m;
}

double Christoffel::lower_asymmetry() const {
  double m = 0.0;
  for (std::size_t l = 0; l < dim_; ++l)
    for (std::size_t i = 0; i < dim_; ++i)
      for (std::size_t j = 0; j < dim_; ++j) m = std::max(m, std::abs((*this)(l, i, j) - (*this)(l, j, i)));
  return m;
}

double RiemannTensor::max_abs() const {
  double m = 0.0;
  for (double x : data_) m = std::max(m, std::abs(x));
  return m;
}

double RiemannTensor::antisymmetry_defect() const {
  double m = 0.0;
  for (std::size_t r = 0; r < dim_; ++r)
    for (std::size_t i = 0; i < dim_; ++i)
      for (std::size_t j = 0; j < dim_; ++j)
        for (std::size_t k = 0; k < dim_; ++k) m = std::max(m, std::abs((*this)(r, i, j, k) + (*this)(r, j, i, k)));
  return m;
}

namespace {

Vector shifted(std::span<const double> theta, std::size_t k, double delta) {
  Vector t(theta.begin(), theta.end());
  t[k] += delta;
  return t;
}

void require_step(double h) {
  if (!(h > 0.0) || !std::isfinite(h)) throw ValidationError("finite-difference step must be > 0");
}

// Central difference with one Richardson level: (4 D(h/2) - D(h)) / 3.
template <class Eval, class Value>
Value richardson(const Eval& eval, std::span<const double> theta, std::size_t k, double h,
                 const std::function<Value(const Value&, const Value&, double)>& diff) {
  const Value dh = diff(eval(shifted(theta, k, h)), eval(shifted(theta, k, -h)), 2.0 * h);
  const Value dh2 = diff(eval(shifted(theta, k, 0.5 * h)), eval(shifted(theta, k, -0.5 * h)), h);
  return diff(4.0 * dh2, dh, 3.0);
}

Christoffel operator*(double s, const Christoffel& c) {
  Christoffel out(c.dim());
  const std::size_t d = c.dim();
  for (std::size_t l = 0; l < d; ++l)
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) out(l, i, j) = s * c(l, i, j);
  return out;
}

}  // namespace

std::vector<Matrix> metric_partials(const MetricField& field, std::span<const double> theta, double h) {
  require_step(h);
  if (field.partials) {
    (void)field.at(theta);
    return field.partials(theta);
  }
  auto eval = [&](const Vector& t) { return field.at(t); };
  std::function<Matrix(const Matrix&, const Matrix&, double)> diff = [](const Matrix& a, const Matrix& b,
                                                                        double denom) {
    return (1.0 / denom) * (a - b);
  };
  std::vector<Matrix> dg;
  dg.reserve(field.dim);
  for (std::size_t k = 0; k < field.dim; ++k) dg.push_back(richardson<decltype(eval), Matrix>(eval, theta, k, h, diff));
  return dg;
}

Christoffel levi_civita(const Matrix& g, const std::vector<Matrix>& dg) {
  const std::size_t d = g.rows();
  const Matrix ginv = spd_inverse(g);
  Christoffel out(d);
  for (std::size_t l = 0; l < d; ++l)
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) {
        double s = 0.0;
        for (std::size_t k = 0; k < d; ++k) s += ginv(l, k) * (dg[i](j, k) + dg[j](i, k) - dg[k](i, j));
        out(l, i, j) = 0.5 * s;
      }
  return out;
}

Christoffel christoffel(const MetricField& field, std::span<const double> theta, double h) {
  field.check_point(theta);
  return levi_civita(field.at(theta), metric_partials(field, theta, h));
}

RiemannTensor riemann_tensor(const MetricField& field, std::span<const double> theta, double h) {
  field.check_point(theta);
  const std::size_t d = field.dim;
  const Christoffel gamma = christoffel(field, theta, h);

  auto eval = [&](const Vector& t) { return levi_civita(field.at(t), metric_partials(field, t, h)); };
  std::function<Christoffel(const Christoffel&, const Christoffel&, double)> diff =
      [](const Christoffel& a, const Christoffel& b, double denom) {
        Christoffel out(a.dim());
        const std::size_t n = a.dim();
        for (std::size_t l = 0; l < n; ++l)
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) out(l, i, j) = (a(l, i, j) - b(l, i, j)) / denom;
        return out;
      };
  std::vector<Christoffel> dgamma;  // dgamma[i](r, j, k) = d_i Gamma^r_{jk}
  for (std::size_t i = 0; i < d; ++i) dgamma.push_back(richardson<decltype(eval), Christoffel>(eval, theta, i, h, diff));

  RiemannTensor out(d);
  for (std::size_t r = 0; r < d; ++r)
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j)
        for (std::size_t k = 0; k < d; ++k) {
          double v = dgamma[i](r, j, k) - dgamma[j](r, i, k);
          for (std::size_t l = 0; l < d; ++l) v += gamma(r, i, l) * gamma(l, j, k) - gamma(r, j, l) * gamma(l, i, k);
          out(r, i, j, k) = v;
        }
  return out;
}

Matrix connection_hessian(const ad::ScalarFunction& f, const Christoffel& gamma, std::span<const double> theta) {
  const std::size_t d = theta.size();
  if (gamma.dim() != d) throw ValidationError("connection_hessian: connection dimension mismatch");
  Matrix h = ad::exact_hessian(f, theta);
  const Vector grad = ad::gradient(f, theta);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j)
      for (std::size_t k = 0; k < d; ++k) h(i, j) -= gamma(k, i, j) * grad[k];
  return h;
}

Matrix covariant_hessian(const ad::ScalarFunction& f, const MetricField& field, std::span<const double> theta,
                         double h) {
  return connection_hessian(f, christoffel(field, theta, h), theta);
}

Christoffel dual_christoffel(const MetricField& field, const Christoffel& primal, std::span<const double> theta,
                             double h) {
  field.check_point(theta);
  const std::size_t d = field.dim;
  if (primal.dim() != d) throw ValidationError("dual_christoffel: connection dimension mismatch");
  const Matrix g = field.at(theta);
  const Matrix ginv = spd_inverse(g);
  const std::vector<Matrix> dg = metric_partials(field, theta, h);

  // lowered(k, j, i) = Gamma*_{kj,i} = d_k g_ij - g_lj Gamma^l_{ki}
  Christoffel lowered(d);
  for (std::size_t k = 0; k < d; ++k)
    for (std::size_t j = 0; j < d; ++j)
      for (std::size_t i = 0; i < d; ++i) {
        double s = dg[k](i, j);
        for (std::size_t l = 0; l < d; ++l) s -= g(l, j) * primal(l, k, i);
        lowered(k, j, i) = s;
      }
  Christoffel out(d);
  for (std::size_t m = 0; m < d; ++m)
    for (std::size_t k = 0; k < d; ++k)
      for (std::size_t j = 0; j < d; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < d; ++i) s += ginv(m, i) * lowered(k, j, i);
        out(m, k, j) = s;
      }
  return out;
}

Matrix dual_hessian(const ad::ScalarFunction& f, const MetricField& field, const Christoffel& primal,
                    std::span<const double> theta, double h) {
  return connection_hessian(f, dual_christoffel(field, primal, theta, h), theta);
}

double metric_trace(const Matrix& g, const Matrix& h) {
  if (!g.square() || g.rows() != h.rows() || !h.square()) throw ValidationError("metric_trace: shape mismatch");
  const Matrix ginv = spd_inverse(g);
  double s = 0.0;
  for (std::size_t i = 0; i < g.rows(); ++i)
    for (std::size_t j = 0; j < g.cols(); ++j) s += ginv(i, j) * h(i, j);
  return s;
}

double metric_compatibility_residual(const MetricField& field, const Christoffel& gamma,
                                     std::span<const double> theta, double h) {
  field.check_point(theta);
  const std::size_t d = field.dim;
  if (gamma.dim() != d) throw ValidationError("metric_compatibility_residual: connection dimension mismatch");
  const Matrix g = field.at(theta);
  const std::vector<Matrix> dg = metric_partials(field, theta, h);
  double worst = 0.0;
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j)
      for (std::size_t k = 0; k < d; ++k) {
        double r = dg[k](i, j);
        for (std::size_t l = 0; l < d; ++l) r -= gamma(l, k, i) * g(l, j) + gamma(l, k, j) * g(i, l);
        worst = std::max(worst, std::abs(r));
      }
  return worst;
}

double volume_element(const MetricField& field, std::span<const double> theta) {
  field.check_point(theta);
  return std::sqrt(det(field.at(theta)));
}

// ---------------------------------------------------------------------------

namespace {

void require_dim(std::span<const double> xi, std::size_t d, const char* who) {
  if (xi.size() != d) {
    std::ostringstream msg;
    msg << who << ": expected " << d << " parameters, got " << xi.size();
    throw ValidationError(msg.str());
  }
}

constexpr double kHalfLog2Pi = 0.91893853320467274178;

}  // namespace

void BernoulliFamily::check(std::span<const double> xi) const {
  require_dim(xi, 1, "bernoulli");
  if (!(xi[0] > 0.0 && xi[0] < 1.0)) throw ValidationError("bernoulli: p must lie in (0, 1)");
}

double BernoulliFamily::log_density(double x, std::span<const double> xi) const {
  return x * std::log(xi[0]) + (1.0 - x) * std::log(1.0 - xi[0]);
}

ad::Var BernoulliFamily::log_density(ad::Tape& tape, double x, std::span<const ad::Var> xi) const {
  (void)tape;
  return ad::log(xi[0]) * x + ad::log(1.0 - xi[0]) * (1.0 - x);
}

std::vector<QuadratureNode> BernoulliFamily::grid(std::span<const double>) const { return {{0.0, 1.0}, {1.0, 1.0}}; }

double BernoulliFamily::sample(RngStream& rng, std::span<const double> xi) const {
  return rng.uniform() < xi[0] ? 1.0 : 0.0;
}

std::optional<Matrix> BernoulliFamily::closed_form_fisher(std::span<const double> xi) const {
  check(xi);
  return Matrix{{1.0 / (xi[0] * (1.0 - xi[0]))}};
}

std::optional<double> BernoulliFamily::closed_form_kl(std::span<const double> a, std::span<const double> b) const {
  check(a);
  check(b);
  const double p = a[0], q = b[0];
  return p * std::log(p / q) + (1.0 - p) * std::log((1.0 - p) / (1.0 - q));
}

void GaussianFamily::check(std::span<const double> xi) const {
  require_dim(xi, 2, "gaussian");
  if (!std::isfinite(xi[0]) || !(xi[1] > 0.0) || !std::isfinite(xi[1]))
    throw ValidationError("gaussian: need finite mu and sigma > 0");
}

double GaussianFamily::log_density(double x, std::span<const double> xi) const {
  const double z = (x - xi[0]) / xi[1];
  return -kHalfLog2Pi - std::log(xi[1]) - 0.5 * z * z;
}

ad::Var GaussianFamily::log_density(ad::Tape& tape, double x, std::span<const ad::Var> xi) const {
  (void)tape;
  const ad::Var z = (x - xi[0]) / xi[1];
  return (-ad::log(xi[1]) - z * z * 0.5) - kHalfLog2Pi;
}

std::vector<QuadratureNode> GaussianFamily::grid(std::span<const double> xi) const {
  check(xi);
  const double lo = xi[0] - 12.0 * xi[1];
  const double hi = xi[0] + 12.0 * xi[1];
  const std::size_t n = std::max<std::size_t>(grid_points_, 3);
  const double step = (hi - lo) / static_cast<double>(n - 1);
  std::vector<QuadratureNode> nodes(n);
  for (std::size_t i = 0; i < n; ++i) {
    nodes[i].x = lo + step * static_cast<double>(i);
    nodes[i].weight = (i == 0 || i == n - 1) ? 0.5 * step : step;
  }
  return nodes;
}

double GaussianFamily::sample(RngStream& rng, std::span<const double> xi) const {
  return xi[0] + xi[1] * rng.normal();
}

std::optional<Matrix> GaussianFamily::closed_form_fisher(std::span<const double> xi) const {
  check(xi);
  const double s2 = xi[1] * xi[1];
  return Matrix{{1.0 / s2, 0.0}, {0.0, 2.0 / s2}};
}

std::optional<double> GaussianFamily::closed_form_kl(std::span<const double> a, std::span<const double> b) const {
  check(a);
  check(b);
  const double dm = a[0] - b[0];
  return std::log(b[1] / a[1]) + (a[1] * a[1] + dm * dm) / (2.0 * b[1] * b[1]) - 0.5;
}

CategoricalFamily::CategoricalFamily(std::size_t categories) : categories_(categories) {
  if (categories < 2) throw ValidationError("categorical: need at least two categories");
}

void CategoricalFamily::check(std::span<const double> xi) const {
  require_dim(xi, categories_ - 1, "categorical");
  double s = 0.0;
  for (double p : xi) {
    if (!(p > 0.0)) throw ValidationError("categorical: probabilities must be > 0");
    s += p;
  }
  if (!(s < 1.0)) throw ValidationError("categorical: free probabilities must sum to < 1");
}

double CategoricalFamily::log_density(double x, std::span<const double> xi) const {
  const auto c = static_cast<std::size_t>(x);
  if (c + 1 < categories_) return std::log(xi[c]);
  double s = 0.0;
  for (double p : xi) s += p;
  return std::log(1.0 - s);
}

ad::Var CategoricalFamily::log_density(ad::Tape& tape, double x, std::span<const ad::Var> xi) const {
  const auto c = static_cast<std::size_t>(x);
  if (c + 1 < categories_) return ad::log(xi[c]);
  ad::Var s = tape.constant(0.0);
  for (const ad::Var& p : xi) s = s + p;
  return ad::log(1.0 - s);
}

std::vector<QuadratureNode> CategoricalFamily::grid(std::span<const double>) const {
  std::vector<QuadratureNode> nodes;
  for (std::size_t c = 0; c < categories_; ++c) nodes.push_back({static_cast<double>(c), 1.0});
  return nodes;
}

double CategoricalFamily::sample(RngStream& rng, std::span<const double> xi) const {
  double u = rng.uniform();
  for (std::size_t c = 0; c < xi.size(); ++c) {
    if (u < xi[c]) return static_cast<double>(c);
    u -= xi[c];
  }
  return static_cast<double>(categories_ - 1);
}

std::optional<Matrix> CategoricalFamily::closed_form_fisher(std::span<const double> xi) const {
  check(xi);
  double s = 0.0;
  for (double p : xi) s += p;
  const double last = 1.0 - s;
  const std::size_t d = xi.size();
  Matrix g(d, d, 1.0 / last);
  for (std::size_t i = 0; i < d; ++i) g(i, i) += 1.0 / xi[i];
  return g;
}

std::unique_ptr<ParametricFamily> make_family(const std::string& name) {
  if (name == "bernoulli") return std::make_unique<BernoulliFamily>();
  if (name == "gaussian") return std::make_unique<GaussianFamily>();
  if (name.rfind("categorical", 0) == 0) {
    std::size_t k = 3;
    if (name.size() > 12 && name[11] == '-') k = std::stoul(name.substr(12));
    return std::make_unique<CategoricalFamily>(k);
  }
  throw ValidationError("unknown family '" + name + "' (known: bernoulli, gaussian, categorical[-K])");
}

namespace {

Matrix log_density_hessian(const ParametricFamily& family, double x, std::span<const double> xi) {
  const ad::ScalarFunction f = [&](ad::Tape& tape, std::span<const ad::Var> p) {
    return family.log_density(tape, x, p);
  };
  return ad::exact_hessian(f, xi);
}

}  // namespace

FisherEstimate fisher_metric(const ParametricFamily& family, std::span<const double> xi) {
  family.check(xi);
  const std::size_t d = family.dim();
  FisherEstimate out;
  out.metric = Matrix(d, d);
  KahanSum mass;
  for (const auto& node : family.grid(xi)) {
    const double p = std::exp(family.log_density(node.x, xi));
    const double w = p * node.weight;
    if (w == 0.0) continue;
    mass.add(w);
    out.metric = out.metric - w * log_density_hessian(family, node.x, xi);
  }
  out.normalization = mass.value();
  if (std::abs(out.normalization - 1.0) > 1e-6) {
    std::ostringstream msg;
    msg << family.name() << ": quadrature mass " << out.normalization << " deviates from 1 by more than 1e-6";
    throw NumericError(msg.str());
  }
  out.positive_definite = is_positive_definite(out.metric);
  return out;
}

FisherEstimate fisher_metric_monte_carlo(const ParametricFamily& family, std::span<const double> xi,
                                         std::size_t samples, RngStream& rng) {
  family.check(xi);
  if (samples == 0) throw ValidationError("fisher_metric_monte_carlo: need at least one sample");
  const std::size_t d = family.dim();
  FisherEstimate out;
  out.metric = Matrix(d, d);
  for (std::size_t s = 0; s < samples; ++s) {
    const double x = family.sample(rng, xi);
    out.metric = out.metric - log_density_hessian(family, x, xi);
  }
  out.metric = (1.0 / static_cast<double>(samples)) * out.metric;
  out.positive_definite = is_positive_definite(out.metric);
  return out;
}

Matrix nn_manifold_jacobian(std::span<const double> theta, double theta0, const Matrix& inputs) {
  const std::size_t d = theta.size();
  if (inputs.cols() != d) throw ValidationError("nn_manifold_jacobian: input width must equal theta dimension");
  Matrix jac(inputs.rows(), d + 1);
  for (std::size_t r = 0; r < inputs.rows(); ++r) {
    const double z = dot(theta, inputs.row(r)) + theta0;
    const double y = 1.0 / (1.0 + std::exp(-z));
    const double s = y * (1.0 - y);
    jac(r, 0) = s;
    for (std::size_t j = 0; j < d; ++j) jac(r, j + 1) = s * inputs(r, j);
  }
  return jac;
}

JacobianRank nn_manifold_jacobian_rank(std::span<const double> theta, double theta0, const Matrix& inputs,
                                       double tol) {
  const std::size_t d = theta.size();
  if (d == 0) throw ValidationError("nn_manifold_jacobian_rank: need d >= 1");
  if (inputs.rows() < d + 1) {
    std::ostringstream msg;
    msg << "nn_manifold_jacobian_rank: need at least d + 1 = " << d + 1 << " inputs, got " << inputs.rows();
    throw ValidationError(msg.str());
  }
  JacobianRank out;
  out.expected = d + 1;
  out.rank = numeric_rank(nn_manifold_jacobian(theta, theta0, inputs), tol);
  out.full_rank = out.rank == out.expected;
  return out;
}

nlohmann::json to_json(const Christoffel& gamma) {
  using nlohmann::json;
  const std::size_t d = gamma.dim();
  json values = json::array();
  for (std::size_t l = 0; l < d; ++l) {
    json a = json::array();
    for (std::size_t i = 0; i < d; ++i) {
      json b = json::array();
      for (std::size_t j = 0; j < d; ++j) b.push_back(gamma(l, i, j));
      a.push_back(b);
    }
    values.push_back(a);
  }
  return json{{"index_order", "upper,lower,lower"}, {"values", values}};
}

nlohmann::json to_json(const RiemannTensor& r) {
  using nlohmann::json;
  const std::size_t d = r.dim();
  json values = json::array();
  for (std::size_t a = 0; a < d; ++a) {
    json x = json::array();
    for (std::size_t i = 0; i < d; ++i) {
      json y = json::array();
      for (std::size_t j = 0; j < d; ++j) {
        json z = json::array();
        for (std::size_t k = 0; k < d; ++k) z.push_back(r(a, i, j, k));
        y.push_back(z);
      }
      x.push_back(y);
    }
    values.push_back(x);
  }
  return json{{"index_order", "upper,lower,lower,lower"}, {"values", values}};
}

nlohmann::json to_json(const Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t i = 0; i < m.rows(); ++i) rows.push_back(std::vector<double>(m.row(i).begin(), m.row(i).end()));
  return rows;
}

}  // namespace curvlab::geometry
