#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "curvlab/numkit.hpp"

namespace curvlab::ad {

enum class Op : std::uint8_t {
  Leaf,
  Const,
  Add,
  Sub,
  Mul,
  Div,
  Neg,
  AddC,     // a + c
  MulC,     // a * c
  FmaC,     // a + b * c
  Exp,
  Log,
  Tanh,
  Sigmoid,
  Max,      // max(a, b); ties route the adjoint to a
  MaxC,     // max(a, c)
  MinC,     // min(a, c)
  PowC,     // a ^ c
};

class Tape;

/// Handle to a node on a Tape. Cheap to copy; only valid while the tape lives.
class Var {
 public:
  Var() = default;

  double value() const;
  std::int32_t index() const { return index_; }
  Tape* tape() const { return tape_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::int32_t index) : tape_(tape), index_(index) {}

  Tape* tape_ = nullptr;
  std::int32_t index_ = -1;
};

/// Append-only record of a scalar computation. Parents always precede their
/// children, so a single reverse sweep over node indices propagates adjoints.
///
/// gradient_graph() records the reverse sweep itself on the tape, which makes
/// the returned gradient differentiable again (reverse-over-reverse).
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void reserve(std::size_t nodes) { nodes_.reserve(nodes); }
  std::size_t size() const { return nodes_.size(); }

  Var variable(double value) { return push(Op::Leaf, -1, -1, value); }
  Var constant(double value) { return push(Op::Const, -1, -1, value); }
  std::vector<Var> variables(std::span<const double> values);

  double value(std::int32_t index) const { return nodes_[static_cast<std::size_t>(index)].value; }

  /// Throws NumericError naming the first node whose value is not finite.
  void check_finite() const;

  /// d output / d wrt.
  Vector gradient(Var output, std::span<const Var> wrt) const;

  /// Same as gradient(), but every adjoint is itself a Var on this tape.
  std::vector<Var> gradient_graph(Var output, std::span<const Var> wrt);

  /// Reverse sweep seeded with adjoint[seeds[i]] += seed_adjoints[i]:
  /// returns d(sum_i seed_adjoints[i] * seeds[i]) / d wrt. Does not modify the tape.
  Vector reverse(std::span<const Var> seeds, std::span<const double> seed_adjoints,
                 std::span<const Var> wrt) const;

  Var push(Op op, std::int32_t a, std::int32_t b, double value, double c = 0.0);

 private:
  struct Node {
    double value;
    double c;
    std::int32_t a;
    std::int32_t b;
    Op op;
  };

  void sweep(std::vector<double>& adjoint, std::size_t top) const;

  std::vector<Node> nodes_;
};

inline double Var::value() const { return tape_->value(index_); }

Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
Var operator*(Var a, Var b);
Var operator/(Var a, Var b);
Var operator-(Var a);
Var operator+(Var a, double c);
Var operator+(double c, Var a);
Var operator-(Var a, double c);
Var operator-(double c, Var a);
Var operator*(Var a, double c);
Var operator*(double c, Var a);
Var operator/(Var a, double c);
Var operator/(double c, Var a);
Var& operator+=(Var& a, Var b);

/// acc + x * c as a single node.
Var fma(Var acc, Var x, double c);
Var exp(Var a);
Var log(Var a);
Var tanh(Var a);
Var sigmoid(Var a);
Var max(Var a, Var b);
Var max(Var a, double c);
Var min(Var a, double c);
Var pow(Var a, double exponent);

/// Scalar objective recorded on a tape, f(theta).
using ScalarFunction = std::function<Var(Tape&, std::span<const Var>)>;

Vector gradient(const ScalarFunction& f, std::span<const double> theta);

/// H(theta) v as the gradient of <grad f(theta), v> with v held constant.
Vector hvp(const ScalarFunction& f, std::span<const double> theta, std::span<const double> v);

/// Dense parameter dimensions above this are rejected by exact_hessian.
inline constexpr std::size_t kDenseHessianCap = 2000;

/// Column j is hvp(f, theta, e_j); the result is symmetrized.
Matrix exact_hessian(const ScalarFunction& f, std::span<const double> theta);

/// Linear map v -> H(theta) v around a fixed parameter point and data batch.
class HvpOracle {
 public:
  virtual ~HvpOracle() = default;
  virtual std::size_t dimension() const = 0;
  virtual Vector apply(std::span<const double> v) const = 0;
  /// Dense H, column by column; implementations may do better.
  virtual Matrix materialize() const;
};

/// Records f once with its gradient graph; every apply() is one reverse sweep
/// over that immutable tape, so concurrent apply() calls are safe.
class TapeHvpOracle : public HvpOracle {
 public:
  TapeHvpOracle(const ScalarFunction& f, std::span<const double> theta);

  std::size_t dimension() const override { return params_.size(); }
  Vector apply(std::span<const double> v) const override;
  Matrix materialize() const override;

  double value() const { return output_.value(); }
  Vector gradient() const;

 private:
  std::unique_ptr<Tape> tape_;
  std::vector<Var> params_;
  std::vector<Var> grad_;
  Var output_;
};

/// Sum of weighted component oracles, e.g. per-chunk pieces of a batch loss.
/// Components are applied concurrently and reduced in index order.
class SumHvpOracle : public HvpOracle {
 public:
  SumHvpOracle(std::vector<std::unique_ptr<HvpOracle>> parts, std::vector<double> weights);

  std::size_t dimension() const override { return dim_; }
  Vector apply(std::span<const double> v) const override;
  Matrix materialize() const override;

 private:
  std::vector<std::unique_ptr<HvpOracle>> parts_;
  std::vector<double> weights_;
  std::size_t dim_ = 0;
};

/// Wraps an explicit symmetric matrix.
class DenseHvpOracle : public HvpOracle {
 public:
  explicit DenseHvpOracle(Matrix h);

  std::size_t dimension() const override { return h_.rows(); }
  Vector apply(std::span<const double> v) const override { return h_ * v; }
  Matrix materialize() const override { return h_; }
  const Matrix& matrix() const { return h_; }

 private:
  Matrix h_;
};

}  // namespace curvlab::ad
