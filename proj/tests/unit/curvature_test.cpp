#include <doctest.h>

#include <cmath>
#include <limits>

#include "curvlab/curvature.hpp"
#include "curvlab/error.hpp"
#include "curvlab/trainer.hpp"
#include "oracles.hpp"

using namespace curvlab;
using ad::DenseHvpOracle;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct TinyMlp {
  MlpModel model{{2, 4, 3}, Activation::Tanh};
  LabeledBatch batch;
  Matrix hessian;

  TinyMlp() {
    RngStream rng(31);
    model.initialize(rng);
    batch.inputs = Matrix(60, 2);
    for (double& x : batch.inputs.data()) x = rng.normal();
    for (int i = 0; i < 60; ++i) batch.labels.push_back(i % 3);
    hessian = ad::exact_hessian(batch_data_loss(model, batch, CrossEntropyLoss{}), model.parameters());
  }
};

}  // namespace

TEST_CASE("hutchinson on diagonal matrices is exact for every M") {
  const DenseHvpOracle h(Matrix::diagonal({1, 2, 3}));
  for (std::size_t m : {1u, 2u, 7u, 100u}) {
    RngStream rng(m);
    const TraceEstimate t = hutchinson_trace(h, m, rng);
    CHECK(t.estimate == 6.0);
    CHECK(t.standard_error == 0.0);
    CHECK(t.probes == m);
  }
  RngStream rng(1);
  CHECK(hutchinson_trace(DenseHvpOracle(Matrix::identity(10)), 5, rng).estimate == 10.0);
  CHECK_THROWS_AS(hutchinson_trace(h, 0, rng), ValidationError);
}

TEST_CASE("hutchinson on a random 50x50 matrix") {
  RngStream rng(12);
  const Matrix m = oracle::random_symmetric(rng, 50);
  const auto e = sym_eigen(m);
  double exact = 0.0;
  for (double l : e.values) exact += l;
  const TraceEstimate t = hutchinson_trace(DenseHvpOracle(m), 2000, rng);
  // Off-diagonal noise makes the relative error scale with |trace|; compare
  // against both 3% and four standard errors.
  CHECK(std::abs(t.estimate - exact) <= std::max(0.03 * std::abs(exact), 4.0 * t.standard_error));
}

TEST_CASE("hutchinson is unbiased") {
  RngStream rng(77);
  const Matrix m = oracle::random_symmetric(rng, 30);
  const DenseHvpOracle h(m);
  double sum = 0.0, var = 0.0;
  const int runs = 200;
  for (int r = 0; r < runs; ++r) {
    const TraceEstimate t = hutchinson_trace(h, 50, rng);
    sum += t.estimate;
    var += t.standard_error * t.standard_error;
  }
  const double mean = sum / runs;
  const double pooled = std::sqrt(var / runs) / std::sqrt(static_cast<double>(runs));
  CHECK(std::abs(mean - m.trace()) <= 4.0 * pooled);
}

TEST_CASE("standard error is the sample std over sqrt(M)") {
  RngStream rng(4);
  const Matrix m = oracle::random_symmetric(rng, 6);
  RngStream a(99), b(99);
  const TraceEstimate t = hutchinson_trace(DenseHvpOracle(m), 40, a);
  Vector samples;
  for (int i = 0; i < 40; ++i) {
    const Vector v = rademacher(b, 6);
    samples.push_back(dot(v, m * v));
  }
  double mean = 0.0;
  for (double s : samples) mean += s;
  mean /= 40;
  double ss = 0.0;
  for (double s : samples) ss += (s - mean) * (s - mean);
  CHECK(t.estimate == doctest::Approx(mean).epsilon(1e-13));
  CHECK(t.standard_error == doctest::Approx(std::sqrt(ss / 39) / std::sqrt(40.0)).epsilon(1e-12));
}

TEST_CASE("power iteration examples") {
  auto run = [](const Matrix& m) { return power_iteration_lambda_max(DenseHvpOracle(m), 1000, 1e-14); };
  CHECK(run(Matrix::diagonal({1, 2, 3})).lambda == doctest::Approx(3.0).epsilon(1e-10));
  CHECK(run(Matrix{{2, 1}, {1, 2}}).lambda == doctest::Approx(3.0).epsilon(1e-10));
  const auto neg = run(Matrix::diagonal({-5, 2}));
  CHECK(neg.lambda == doctest::Approx(-5.0).epsilon(1e-10));
  CHECK(neg.magnitude == doctest::Approx(5.0).epsilon(1e-10));
  CHECK(neg.converged);
  CHECK(neg.residual <= 1e-6);
  CHECK_THROWS_AS(power_iteration_lambda_max(DenseHvpOracle(Matrix::identity(2)), 0, 1e-10), ValidationError);
}

TEST_CASE("power iteration flags a sign tie and still reports the magnitude") {
  const auto r = power_iteration_lambda_max(DenseHvpOracle(Matrix::diagonal({-2, 1, 2})), 500, 1e-12);
  CHECK(r.sign_tie);
  CHECK(r.magnitude == doctest::Approx(2.0).epsilon(1e-8));
}

TEST_CASE("power iteration stops without converging and says so") {
  RngStream rng(3);
  const Matrix m = oracle::random_symmetric(rng, 40);
  const auto r = power_iteration_lambda_max(DenseHvpOracle(m), 2, 1e-15);
  CHECK_FALSE(r.converged);
  CHECK(r.iterations == 2);
}

TEST_CASE("spectral radius") {
  CHECK(spectral_radius(Vector{1, 2, 3}) == 3.0);
  CHECK(spectral_radius(Vector{-5, 2}) == 5.0);
  CHECK(spectral_radius(Vector{0}) == 0.0);
  CHECK_THROWS_AS(spectral_radius(Vector{}), ValidationError);
}

TEST_CASE("power limit sequence") {
  for (double t : spectral_radius_power_limit(Matrix::identity(4), 20).terms) CHECK(t == doctest::Approx(1.0));
  for (double t : spectral_radius_power_limit(Matrix::diagonal({2, 1}), 20).terms) CHECK(t == doctest::Approx(2.0));
  const auto s = spectral_radius_power_limit(Matrix{{2, 1}, {1, 2}}, 64);
  REQUIRE(s.terms.size() == 64);
  CHECK(std::abs(s.terms.back() - 3.0) <= 0.05 * 3.0);
  CHECK_FALSE(s.truncated);
  const auto huge = spectral_radius_power_limit(Matrix::diagonal({1e200, 1}), 10);
  CHECK(huge.terms.back() == doctest::Approx(1e200));
}

TEST_CASE("power limit reaches A(H) on matrices with a spectral gap") {
  RngStream rng(5);
  for (int t = 0; t < 10; ++t) {
    const Matrix m = oracle::random_symmetric(rng, 8);
    const auto e = sym_eigen(m);
    Vector mags;
    for (double l : e.values) mags.push_back(std::abs(l));
    std::sort(mags.begin(), mags.end());
    if (mags[mags.size() - 2] > 0.9 * mags.back()) continue;
    const auto s = spectral_radius_power_limit(m, 64);
    CHECK(std::abs(s.terms.back() - mags.back()) <= 0.05 * mags.back());
  }
}

TEST_CASE("laplacian") {
  const ad::ScalarFunction sq = [](ad::Tape&, std::span<const ad::Var> t) { return t[0] * t[0] + t[1] * t[1]; };
  const ad::ScalarFunction cubic = [](ad::Tape&, std::span<const ad::Var> t) { return t[0] * t[0] * t[1]; };
  CHECK(laplacian(ad::exact_hessian(sq, Vector{-3, 8})) == 4.0);
  CHECK(laplacian(ad::exact_hessian(cubic, Vector{2, 3})) == 6.0);
  RngStream rng(2);
  const Matrix m = oracle::random_symmetric(rng, 12);
  double sum = 0.0;
  for (double l : sym_eigen(m).values) sum += l;
  CHECK(std::abs(laplacian(m) - sum) <= 1e-9);
  RngStream probes(1);
  CHECK(laplacian(DenseHvpOracle(Matrix::diagonal({1, 2, 3})), 3, probes).estimate == 6.0);
}

TEST_CASE("operator norms") {
  CHECK(operator_norm(Matrix::diagonal({1, 2, 3}), 1.0) == 3.0);
  const Matrix m{{2, 1}, {1, -2}};
  CHECK(operator_norm(m, 1.0) == 3.0);
  CHECK(spectral_radius(sym_eigen(m).values) == doctest::Approx(std::sqrt(5.0)).epsilon(1e-14));
  const Matrix a{{1, -4}, {2, 1}};
  CHECK(operator_norm(a, 1.0) == 5.0);
  CHECK(operator_norm(a, kInf) == 5.0);
  CHECK(operator_norm(Matrix{{1, -4}, {0, 1}}, kInf) == 5.0);
  CHECK(operator_norm(Matrix{{1, -4}, {0, 1}}, 1.0) == 5.0);
  CHECK(operator_norm(Matrix{{1, 0}, {-4, 1}}, kInf) == 5.0);
  CHECK_THROWS_AS(operator_norm(m, 2.0), ValidationError);
}

TEST_CASE("contraction inequalities on random matrices") {
  RngStream rng(500);
  for (int t = 0; t < 500; ++t) {
    const std::size_t n = 1 + t % 9;
    const Matrix psd = oracle::random_psd(rng, n);
    const double a = spectral_radius(sym_eigen(psd).values);
    CHECK(a <= psd.trace() + 1e-12 * (1.0 + psd.trace()));
    const Matrix sym = oracle::random_symmetric(rng, n);
    const double as = spectral_radius(sym_eigen(sym).values);
    CHECK(as <= operator_norm(sym, 1.0) * (1.0 + 1e-14));
    CHECK(operator_norm(sym, 1.0) == operator_norm(sym, kInf));
  }
}

TEST_CASE("gaussian curvature") {
  CHECK(gaussian_curvature(Matrix::identity(3)) == 1.0);
  CHECK(gaussian_curvature(Matrix::diagonal({2, -3})) == -6.0);
  RngStream rng(8);
  const Matrix m = oracle::random_symmetric(rng, 7);
  double prod = 1.0;
  for (double l : sym_eigen(m).values) prod *= l;
  CHECK(std::abs(gaussian_curvature(m) - prod) <= 1e-9 * std::abs(prod));
  CHECK_THROWS_AS(gaussian_curvature(Matrix{{1, 2}, {0, 1}}), ValidationError);
}

TEST_CASE("tiny MLP: estimators agree with the dense Hessian") {
  const TinyMlp tiny;
  const auto oracle = data_loss_oracle(tiny.model, tiny.batch, CrossEntropyLoss{}, tiny.model.parameters());
  const double exact = tiny.hessian.trace();
  RngStream rng(1);
  const TraceEstimate t = hutchinson_trace(*oracle, 5000, rng);
  CHECK(std::abs(t.estimate - exact) <= 0.05 * std::abs(exact));

  const auto e = sym_eigen(tiny.hessian);
  const double radius = spectral_radius(e.values);
  const auto p = power_iteration_lambda_max(*oracle, 5000, 1e-15);
  CHECK(std::abs(p.magnitude - radius) <= 1e-6 * radius);
}

TEST_CASE("curvature report and JSON keys") {
  CurvatureOptions options;
  options.probes = 10;
  const CurvatureReport r = curvature_report(DenseHvpOracle(Matrix::diagonal({1, 2, 3})), options);
  CHECK(r.dim == 3);
  CHECK(r.trace.estimate == 6.0);
  CHECK(r.power.lambda == doctest::Approx(3.0).epsilon(1e-8));
  CHECK(*r.opnorm_1 == 3.0);
  CHECK(*r.opnorm_inf == 3.0);
  CHECK(*r.det == 6.0);
  REQUIRE(r.eigenvalues);
  CHECK(std::abs(r.power.magnitude - spectral_radius(*r.eigenvalues)) <= r.power.residual + 1e-8);
  const auto j = to_json(r);
  for (const char* key : {"trace", "trace_stderr", "probes", "lambda_max", "residual", "iters", "opnorm_1",
                          "opnorm_inf", "det", "dim"})
    CHECK(j.contains(key));

  options.dense_cap = 2;
  const auto sparse = to_json(curvature_report(DenseHvpOracle(Matrix::diagonal({1, 2, 3})), options));
  CHECK(sparse["det"].is_null());
  CHECK(sparse["opnorm_1"].is_null());
}
