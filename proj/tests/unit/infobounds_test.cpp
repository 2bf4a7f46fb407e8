#include <doctest.h>

#include <cmath>
#include <limits>
#include <sstream>

#include "curvlab/error.hpp"
#include "curvlab/infobounds.hpp"
#include "oracles.hpp"

using namespace curvlab;
using namespace curvlab::info;

namespace {

Grid two_cells() { return grid_from_points(Matrix{{0.0}, {1.0}}, Vector{1.0, 1.0}); }
const Vector kTwoLevel{0.0, 1.0};

Vector quadratic_loss(const Grid& g) {
  Vector l(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) l[i] = g.points(i, 0) * g.points(i, 0);
  return l;
}

}  // namespace

TEST_CASE("grids") {
  const Grid g = uniform_grid(-1.0, 1.0);
  CHECK(g.size() == kDefaultGrid1d);
  double w = 0.0;
  for (double x : g.weights) w += x;
  CHECK(w == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(g.weights.front() == doctest::Approx(0.5 * g.weights[1]));
  const Grid g2 = uniform_grid(0, 1, 0, 2, 11);
  CHECK(g2.size() == 121);
  CHECK(g2.dim() == 2);
  double w2 = 0.0;
  for (double x : g2.weights) w2 += x;
  CHECK(w2 == doctest::Approx(2.0).epsilon(1e-14));
  CHECK_THROWS_AS(uniform_grid(1.0, 0.0), ValidationError);
}

TEST_CASE("maxwell-boltzmann density") {
  const Grid g = uniform_grid(-2.0, 2.0, 401);
  const Vector l = quadratic_loss(g);
  const GridDensity u = maxwell_boltzmann_density(g, l, 0.0);
  for (double d : u.density) CHECK(d == doctest::Approx(0.25).epsilon(1e-13));
  const Vector constant(g.size(), 3.0);
  for (double beta : {-4.0, 1.0, 50.0})
    for (double d : maxwell_boltzmann_density(g, constant, beta).density) CHECK(d == doctest::Approx(0.25).epsilon(1e-12));
  for (double beta : {-1.0, 0.0, 1.0, 5.0}) CHECK(std::abs(maxwell_boltzmann_density(g, l, beta).mass() - 1.0) <= 1e-8);
  // Two-level loss: density ratio e^beta.
  const GridDensity two = maxwell_boltzmann_density(two_cells(), kTwoLevel, 3.0);
  CHECK(two.density[0] / two.density[1] == doctest::Approx(std::exp(3.0)).epsilon(1e-13));
  const GridDensity sharp = maxwell_boltzmann_density(two_cells(), kTwoLevel, 40.0);
  CHECK(sharp.density[0] > 1.0 - 1e-15);
}

TEST_CASE("gibbs normalizer") {
  const Grid g = uniform_grid(-1.0, 3.0, 101);
  const Vector l = quadratic_loss(g);
  const GibbsPrior p = maxwell_boltzmann(g, l, 2.5);
  double z = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) z += g.weights[i] * std::exp(-2.5 * l[i]);
  CHECK(std::exp(p.log_alpha) == doctest::Approx(1.0 / z).epsilon(1e-10));
  // Losses spanning thousands of nats stay finite through log-sum-exp.
  Vector big = l;
  for (double& x : big) x = 1000.0 + 500.0 * x;
  CHECK(std::abs(maxwell_boltzmann_density(g, big, 3.0).mass() - 1.0) <= 1e-8);
}

TEST_CASE("maxwell-boltzmann input validation") {
  const Grid g = two_cells();
  const double inf = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(maxwell_boltzmann_density(g, Vector{inf, inf}, 1.0), ValidationError);
  CHECK_THROWS_AS(maxwell_boltzmann_density(g, Vector{NAN, 0.0}, 1.0), ValidationError);
  CHECK_THROWS_AS(maxwell_boltzmann_density(g, Vector{0.0}, 1.0), ValidationError);
  const GridDensity d = maxwell_boltzmann_density(g, Vector{0.0, inf}, 1.0);
  CHECK(d.density[1] == 0.0);
  CHECK(d.density[0] == 1.0);
}

TEST_CASE("phi beta") {
  const Grid g = two_cells();
  CHECK(phi_beta(g, kTwoLevel, 0.0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(phi_beta(g, kTwoLevel, std::log(3.0)) == doctest::Approx(0.25).epsilon(1e-14));
  for (double beta : {-3.0, 0.7, 9.0}) CHECK(phi_beta(g, kTwoLevel, beta) == doctest::Approx(1.0 / (1.0 + std::exp(beta))));
  const Grid line = uniform_grid(-1, 1, 51);
  CHECK(phi_beta(line, Vector(51, 2.5), 7.0) == doctest::Approx(2.5).epsilon(1e-14));
  const Vector l = quadratic_loss(line);
  double avg = 0.0;
  for (std::size_t i = 0; i < line.size(); ++i) avg += line.weights[i] * l[i];
  CHECK(phi_beta(line, l, 0.0) == doctest::Approx(avg / 2.0).epsilon(1e-13));
}

TEST_CASE("phi is strictly decreasing for non-constant loss") {
  const Grid g = uniform_grid(-2.0, 2.0, 2001);
  const Vector l = quadratic_loss(g);
  const Grid g2 = uniform_grid(-1, 1, -1, 1, 61);
  Vector l2(g2.size());
  for (std::size_t i = 0; i < g2.size(); ++i)
    l2[i] = std::sin(3.0 * g2.points(i, 0)) + g2.points(i, 1) * g2.points(i, 1);
  for (double beta = -2.0; beta < 4.0 + 1e-12; beta += 0.5) {
    CHECK(phi_beta(g, l, beta + 0.5) < phi_beta(g, l, beta));
    CHECK(phi_beta(g2, l2, beta + 0.5) < phi_beta(g2, l2, beta));
  }
}

TEST_CASE("printed phi is the unnormalized product") {
  const Grid g = two_cells();
  const double beta = 0.8;
  const double z = 1.0 + std::exp(-beta);
  const double zl = std::exp(-beta);
  CHECK(phi_beta_printed(g, kTwoLevel, beta) == doctest::Approx(z * zl).epsilon(1e-13));
}

TEST_CASE("solve beta") {
  const Grid g = two_cells();
  const BetaSolution s = solve_beta(g, kTwoLevel, 0.25, 1e-14);
  CHECK(std::abs(s.beta - std::log(3.0)) <= 1e-8);
  CHECK(std::abs(s.phi - 0.25) <= 1e-12);
  CHECK(solve_beta(g, kTwoLevel, phi_beta(g, kTwoLevel, 0.0)).beta == 0.0);
  // Negative beta for targets above the plain average.
  CHECK(solve_beta(g, kTwoLevel, 0.75, 1e-13).beta == doctest::Approx(-std::log(3.0)).epsilon(1e-8));
  try {
    solve_beta(g, kTwoLevel, -0.1);
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("attainable") != std::string::npos);
  }
  CHECK_THROWS_AS(solve_beta(g, Vector{1.0, 1.0}, 1.0), ValidationError);
}

TEST_CASE("thiemann bound") {
  PacBayesCase c{100, 20, 1.0, 0.0, 0.1};
  CHECK(thiemann_j(c) == doctest::Approx(0.2).epsilon(1e-15));
  c.empirical_risk = 0.0;
  CHECK(thiemann_bound(c) == doctest::Approx(0.0).epsilon(1e-15));
  c.empirical_risk = 0.3;
  CHECK(thiemann_bound(c) == doctest::Approx(thiemann_j(c)).epsilon(1e-15));
  c = {1000, 0.05, 0.7, 0.0, 0.2};
  double prev = thiemann_bound(c);
  for (double kl : {0.5, 1.0, 5.0, 50.0}) {
    c.kl = kl;
    const double b = thiemann_bound(c);
    CHECK(b > prev);
    CHECK(b == doctest::Approx(oracle::thiemann(1000, 0.05, 0.7, kl, 0.2)).epsilon(1e-14));
    prev = b;
  }
  for (double lambda : {0.0, 2.0, -0.1, 2.5}) {
    c.lambda = lambda;
    try {
      thiemann_bound(c);
      FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
      CHECK(std::string(e.what()).find("lambda") != std::string::npos);
    }
  }
}

TEST_CASE("optimal lambda") {
  CHECK(optimal_lambda(1000, 5, 0.0, 0.05) == 1.0);
  double prev = 2.0;
  for (double n : {1e2, 1e4, 1e6}) {
    const double l = optimal_lambda(n, 5, 0.2, 0.05);
    CHECK((l > 0.0 && l <= 1.0));
    CHECK(l < prev);
    prev = l;
  }
  const double l = optimal_lambda(1000, 5, 0.2, 0.05);
  const auto grid = oracle::lambda_grid_min(1000, 0.05, 5, 0.2);
  CHECK(std::abs(l - grid.lambda) <= 1e-4);
  CHECK(thiemann_bound({1000, 0.05, l, 5, 0.2}) <= grid.bound + 1e-9);
  // ln(2 sqrt(n) / delta) <= 0 with KL = 0.
  CHECK_THROWS_AS(optimal_lambda(100, 0.0, 0.1, 20.0), ValidationError);
  CHECK_THROWS_AS(optimal_lambda(100, 0.0, 0.1, 30.0), ValidationError);
}

TEST_CASE("optimal lambda beats any grid lambda on random cases") {
  RngStream rng(3);
  for (int t = 0; t < 50; ++t) {
    const double n = std::pow(10.0, rng.uniform(1, 6));
    const double kl = rng.uniform(0, 20);
    const double risk = rng.uniform(0, 1);
    const double eps = rng.uniform(0.001, 0.5);
    const double l = optimal_lambda(n, kl, risk, eps);
    const LambdaScan scan = scan_lambda({n, eps, 1.0, kl, risk});
    CHECK(thiemann_bound({n, eps, l, kl, risk}) <= scan.minimum + 1e-9);
  }
}

TEST_CASE("bound report") {
  const BoundReport r = bound_report({1000, 0.05, 1.0, 5.0, 0.2}, 0.05, true);
  REQUIRE(r.bound_at_optimal);
  CHECK(*r.bound_at_optimal <= r.bound);
  REQUIRE(r.scan);
  CHECK(*r.bound_at_optimal <= r.scan->minimum + 1e-9);
  const auto j = to_json(r);
  for (const char* key : {"bound", "optimal_lambda", "bound_at_optimal_lambda", "j", "grid_min_bound"})
    CHECK(j.contains(key));
}

TEST_CASE("bound report with a vanishing complexity term") {
  const BoundReport r = bound_report({100, 20.0, 1.0, 0.0, 0.1}, 20.0, false);
  CHECK(r.bound == doctest::Approx(r.j).epsilon(1e-15));
  CHECK_FALSE(r.optimal_lambda);
  CHECK(to_json(r)["optimal_lambda"].is_null());
}

TEST_CASE("gibbs posterior") {
  const Grid g = two_cells();
  const GridDensity prior = uniform_density(g);
  CHECK(gibbs_posterior(prior, 0.0, 50, kTwoLevel).density == prior.density);
  const GridDensity post = gibbs_posterior(prior, 0.1, 20, kTwoLevel);
  CHECK(post.density[0] / post.density[1] == doctest::Approx(std::exp(2.0)).epsilon(1e-13));
  CHECK(std::abs(post.mass() - 1.0) <= 1e-12);
  const Grid line = uniform_grid(-2, 2, 401);
  const GridDensity lp = uniform_density(line);
  const Vector risk = quadratic_loss(line);
  double prev = -1.0;
  for (double lambda : {0.0, 0.01, 0.1, 0.5, 1.0, 1.5}) {
    const double kl = kl_divergence(gibbs_posterior(lp, lambda, 30, risk), lp);
    CHECK(kl >= prev);
    prev = kl;
  }
}

TEST_CASE("grid KL and the focal regularizer") {
  const Grid line = uniform_grid(-3, 3, 601);
  const Vector loss = quadratic_loss(line);
  const GridDensity prior = maxwell_boltzmann_density(line, loss, 0.5);
  CHECK(std::abs(focal_regularizer_kl(prior, 0.5, loss)) <= 1e-12);
  const GridDensity post = maxwell_boltzmann_density(line, loss, 2.0);
  double direct = 0.0;
  const double u = 1.0 / 6.0;
  for (std::size_t i = 0; i < line.size(); ++i)
    if (post.density[i] > 0) direct += line.weights[i] * post.density[i] * std::log(post.density[i] / u);
  CHECK(focal_regularizer_kl(post, 0.0, loss) == doctest::Approx(direct).epsilon(1e-10));
  CHECK(focal_regularizer_kl(post, 0.0, loss) >= 0.0);
  double prev = -1.0;
  for (double beta : {0.5, 1.0, 2.0, 4.0, 8.0}) {
    const double kl = focal_regularizer_kl(maxwell_boltzmann_density(line, loss, beta), 0.5, loss);
    CHECK(kl > prev);
    prev = kl;
  }
  GridDensity q = prior;
  q.density[300] = 0.0;
  CHECK_THROWS_AS(kl_divergence(prior, q), ValidationError);
}

TEST_CASE("family KL") {
  const geometry::GaussianFamily gauss;
  const geometry::BernoulliFamily bern;
  CHECK(info::kl_divergence(gauss, Vector{0.3, 1.2}, Vector{0.3, 1.2}) == 0.0);
  CHECK(info::kl_divergence(gauss, Vector{0, 1}, Vector{1, 1}) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(info::kl_divergence(bern, Vector{0.5}, Vector{0.75}) == doctest::Approx(0.143841036225890).epsilon(1e-13));
  const geometry::CategoricalFamily cat(3);
  const double kl = info::kl_divergence(cat, Vector{0.2, 0.3}, Vector{0.4, 0.4});
  CHECK(kl == doctest::Approx(0.2 * std::log(0.5) + 0.3 * std::log(0.75) + 0.5 * std::log(0.5 / 0.2)).epsilon(1e-13));
}

TEST_CASE("closed-form KL agrees with quadrature on the family grid") {
  struct Quadrature : geometry::GaussianFamily {
    std::optional<double> closed_form_kl(std::span<const double>, std::span<const double>) const override {
      return std::nullopt;
    }
  };
  const Quadrature q;
  const geometry::GaussianFamily g;
  const Vector a{0.4, 1.1}, b{-0.3, 1.6};
  CHECK(info::kl_divergence(q, a, b) == doctest::Approx(info::kl_divergence(g, a, b)).epsilon(1e-8));
}

TEST_CASE("KL is non-negative and zero only at equal parameters") {
  RngStream rng(1000);
  const geometry::GaussianFamily gauss;
  const geometry::BernoulliFamily bern;
  const geometry::CategoricalFamily cat(3);
  for (int t = 0; t < 1000; ++t) {
    const Vector g1{rng.normal(), rng.uniform(0.2, 3)}, g2{rng.normal(), rng.uniform(0.2, 3)};
    CHECK(info::kl_divergence(gauss, g1, g2) > 0.0);
    CHECK(info::kl_divergence(gauss, g1, g1) == 0.0);
    const Vector b1{rng.uniform(0.01, 0.99)}, b2{rng.uniform(0.01, 0.99)};
    CHECK(info::kl_divergence(bern, b1, b2) > 0.0);
    CHECK(info::kl_divergence(bern, b1, b1) == 0.0);
    const double u = rng.uniform(0.05, 0.9);
    const Vector c1{u, rng.uniform(0.01, 0.95 - u)};
    const Vector c2{rng.uniform(0.05, 0.5), rng.uniform(0.05, 0.45)};
    CHECK(info::kl_divergence(cat, c1, c2) > 0.0);
    CHECK(std::abs(info::kl_divergence(cat, c1, c1)) <= 1e-15);
  }
}

TEST_CASE("quadratic KL approximation") {
  const Matrix f1 = *geometry::GaussianFamily().closed_form_fisher(Vector{0, 1});
  CHECK(kl_quadratic_approx(f1, Vector{0, 0}) == 0.0);
  const double approx = kl_quadratic_approx(f1, Vector{0.1, 0.0});
  CHECK(approx == doctest::Approx(0.005).epsilon(1e-14));
  const double exact = info::kl_divergence(geometry::GaussianFamily(), Vector{0, 1}, Vector{0.1, 1});
  CHECK(std::abs(approx - exact) <= 1e-12);

  const Vector xi{0.0, 2.0};
  const Matrix f2 = *geometry::GaussianFamily().closed_form_fisher(xi);
  CHECK(kl_quadratic_approx(f2, Vector{0.0, 0.1}) == doctest::Approx(0.0025).epsilon(1e-13));
  Vector ratios;
  for (double d : {0.1, 0.05, 0.025}) {
    const double e = info::kl_divergence(geometry::GaussianFamily(), xi, Vector{0.0, 2.0 + d});
    ratios.push_back(std::abs(e - kl_quadratic_approx(f2, Vector{0.0, d})) / (d * d * d));
  }
  const double lo = *std::min_element(ratios.begin(), ratios.end());
  const double hi = *std::max_element(ratios.begin(), ratios.end());
  CHECK(hi / lo < 1.5);
  CHECK_THROWS_AS(kl_quadratic_approx(Matrix{{1, 2}, {2, 1}}, Vector{1, 0}), ValidationError);
}

TEST_CASE("grid density CSV and validation") {
  const GridDensity d = uniform_density(uniform_grid(0, 1, 3));
  const std::string csv = d.to_csv();
  CHECK(csv.rfind("theta_0,weight,density\n", 0) == 0);
  CHECK(csv.find("0.5,0.5,1\n") != std::string::npos);
  GridDensity bad = d;
  bad.density[0] = -1.0;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  const GridDensity d2 = uniform_density(uniform_grid(0, 1, 0, 1, 3));
  CHECK(d2.to_csv().rfind("theta_0,theta_1,weight,density\n", 0) == 0);
}
