#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace curvlab {

using Vector = std::vector<double>;

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  static Matrix identity(std::size_t n);
  static Matrix diagonal(std::span<const double> diag);
  static Matrix diagonal(std::initializer_list<double> diag);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool square() const { return rows_ == cols_; }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }

  Matrix transpose() const;
  Vector column(std::size_t c) const;
  void set_column(std::size_t c, std::span<const double> values);

  double frobenius_norm() const;
  double max_abs() const;
  double trace() const;
  bool all_finite() const;

  friend Matrix operator*(const Matrix& a, const Matrix& b);
  friend Matrix operator+(const Matrix& a, const Matrix& b);
  friend Matrix operator-(const Matrix& a, const Matrix& b);
  friend Matrix operator*(double s, const Matrix& a);
  friend bool operator==(const Matrix& a, const Matrix& b) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  Vector data_;
};

Vector operator*(const Matrix& m, std::span<const double> v);

double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> v);

/// Largest |a_ij - a_ji|.
double asymmetry(const Matrix& m);

/// Deterministic 64-bit generator (std::mt19937_64, whose output sequence is
/// fixed by the standard). Distributions are implemented here rather than via
/// <random> distributions, which are implementation-defined.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed);

  static constexpr std::string_view algorithm_id() { return "mt19937_64"; }
  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64();
  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi);
  /// Uniform integer on [0, n).
  std::uint64_t uniform_index(std::uint64_t n);
  /// Standard normal via Box-Muller.
  double normal();

  /// Derive an independent child stream; used to seed parallel work.
  RngStream split(std::uint64_t salt) const;

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Entries are independently -1 or +1 with probability 1/2.
Vector rademacher(RngStream& rng, std::size_t d);

Vector normal_vector(RngStream& rng, std::size_t d);

/// Fisher-Yates permutation of [0, n).
std::vector<std::size_t> permutation(RngStream& rng, std::size_t n);

struct SymEigen {
  Vector values;   // ascending
  Matrix vectors;  // column i pairs with values[i]
};

/// Cyclic Jacobi eigensolver for symmetric matrices (n <= 512).
SymEigen sym_eigen(const Matrix& m, double symmetry_tol = 1e-10);

/// LU with partial pivoting.
double det(const Matrix& m);

/// Singular values via one-sided Jacobi, descending.
Vector singular_values(const Matrix& m);

/// Number of singular values above tol * (largest singular value).
std::size_t numeric_rank(const Matrix& m, double tol = 1e-10);

/// Cholesky-based SPD test.
bool is_positive_definite(const Matrix& m);

/// Inverse of a symmetric positive definite matrix via Cholesky.
Matrix spd_inverse(const Matrix& m);

/// Compensated (Neumaier) summation.
class KahanSum {
 public:
  void add(double x);
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

/// Shortest round-trip decimal form, independent of the global locale;
/// "nan", "inf", "-inf" for non-finite values.
std::string format_double(double x);

/// Worker cap from CURVLAB_THREADS, defaulting to the hardware concurrency.
std::size_t worker_threads();

/// Runs fn(i) for i in [0, n) on up to worker_threads() threads. Callers write
/// results into per-index slots so reductions stay in index order.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace curvlab
