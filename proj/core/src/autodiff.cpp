#include "curvlab/autodiff.hpp"

#include <stdexcept>
#include <cmath>
#include <sstream>

#include "curvlab/error.hpp"

namespace curvlab::ad {

namespace {

const char* op_name(Op op) {
  switch (op) {
    case Op::Leaf: return "leaf";
    case Op::Const: return "const";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Div: return "div";
    case Op::Neg: return "neg";
    case Op::AddC: return "add_const";
    case Op::MulC: return "mul_const";
    case Op::FmaC: return "fma_const";
    case Op::Exp: return "exp";
    case Op::Log: return "log";
    case Op::Tanh: return "tanh";
    case Op::Sigmoid: return "sigmoid";
    case Op::Max: return "max";
    case Op::MaxC: return "max_const";
    case Op::MinC: return "min_const";
    case Op::PowC: return "pow_const";
  }
  return "?";
}

Tape* same_tape(Var a, Var b) {
  if (a.tape() != b.tape() || !a.valid()) throw std::logic_error("autodiff: operands live on different tapes");
  return a.tape();
}

double sigmoid_value(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

std::vector<Var> Tape::variables(std::span<const double> values) {
  std::vector<Var> out;
  out.reserve(values.size());
  for (double v : values) out.push_back(variable(v));
  return out;
}

Var Tape::push(Op op, std::int32_t a, std::int32_t b, double value, double c) {
  nodes_.push_back(Node{value, c, a, b, op});
  return Var(this, static_cast<std::int32_t>(nodes_.size() - 1));
}

void Tape::check_finite() const {
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (!std::isfinite(nodes_[i].value)) {
      std::ostringstream msg;
      msg << "non-finite value " << nodes_[i].value << " at tape node " << i << " (" << op_name(nodes_[i].op) << ")";
      throw NumericError(msg.str());
    }
  }
}

void Tape::sweep(std::vector<double>& adj, std::size_t top) const {
  for (std::size_t n = top + 1; n-- > 0;) {
    const double g = adj[n];
    if (g == 0.0) continue;
    const Node& node = nodes_[n];
    switch (node.op) {
      case Op::Leaf:
      case Op::Const:
        break;
      case Op::Add:
        adj[node.a] += g;
        adj[node.b] += g;
        break;
      case Op::Sub:
        adj[node.a] += g;
        adj[node.b] -= g;
        break;
      case Op::Mul:
        adj[node.a] += g * nodes_[node.b].value;
        adj[node.b] += g * nodes_[node.a].value;
        break;
      case Op::Div: {
        const double vb = nodes_[node.b].value;
        adj[node.a] += g / vb;
        adj[node.b] -= g * node.value / vb;
        break;
      }
      case Op::Neg:
        adj[node.a] -= g;
        break;
      case Op::AddC:
        adj[node.a] += g;
        break;
      case Op::MulC:
        adj[node.a] += g * node.c;
        break;
      case Op::FmaC:
        adj[node.a] += g;
        adj[node.b] += g * node.c;
        break;
      case Op::Exp:
        adj[node.a] += g * node.value;
        break;
      case Op::Log:
        adj[node.a] += g / nodes_[node.a].value;
        break;
      case Op::Tanh:
        adj[node.a] += g * (1.0 - node.value * node.value);
        break;
      case Op::Sigmoid:
        adj[node.a] += g * node.value * (1.0 - node.value);
        break;
      case Op::Max:
        if (nodes_[node.a].value >= nodes_[node.b].value)
          adj[node.a] += g;
        else
          adj[node.b] += g;
        break;
      case Op::MaxC:
        if (nodes_[node.a].value >= node.c) adj[node.a] += g;
        break;
      case Op::MinC:
        if (nodes_[node.a].value <= node.c) adj[node.a] += g;
        break;
      case Op::PowC:
        if (node.c != 0.0) adj[node.a] += g * node.c * std::pow(nodes_[node.a].value, node.c - 1.0);
        break;
    }
  }
}

Vector Tape::gradient(Var output, std::span<const Var> wrt) const {
  const double one = 1.0;
  return reverse(std::span<const Var>(&output, 1), std::span<const double>(&one, 1), wrt);
}

Vector Tape::reverse(std::span<const Var> seeds, std::span<const double> seed_adjoints,
                     std::span<const Var> wrt) const {
  std::size_t top = 0;
  for (const Var& s : seeds) top = std::max(top, static_cast<std::size_t>(s.index()));
  std::vector<double> adj(top + 1, 0.0);
  for (std::size_t i = 0; i < seeds.size(); ++i) adj[static_cast<std::size_t>(seeds[i].index())] += seed_adjoints[i];
  sweep(adj, top);
  Vector out(wrt.size(), 0.0);
  for (std::size_t i = 0; i < wrt.size(); ++i) {
    const auto k = static_cast<std::size_t>(wrt[i].index());
    if (k <= top) out[i] = adj[k];
  }
  return out;
}

std::vector<Var> Tape::gradient_graph(Var output, std::span<const Var> wrt) {
  const auto top = static_cast<std::size_t>(output.index());
  std::vector<std::int32_t> adj(top + 1, -1);
  adj[top] = constant(1.0).index();

  auto accumulate = [&](std::int32_t target, Var contrib) {
    if (adj[target] < 0)
      adj[target] = contrib.index();
    else
      adj[target] = (Var(this, adj[target]) + contrib).index();
  };

  for (std::size_t n = top + 1; n-- > 0;) {
    if (adj[n] < 0) continue;
    const Var g(this, adj[n]);
    // Copy: pushes below may reallocate nodes_.
    const Node node = nodes_[n];
    const Var self(this, static_cast<std::int32_t>(n));
    const Var a(this, node.a);
    const Var b(this, node.b);
    switch (node.op) {
      case Op::Leaf:
      case Op::Const:
        break;
      case Op::Add:
        accumulate(node.a, g);
        accumulate(node.b, g);
        break;
      case Op::Sub:
        accumulate(node.a, g);
        accumulate(node.b, -g);
        break;
      case Op::Mul:
        accumulate(node.a, g * b);
        accumulate(node.b, g * a);
        break;
      case Op::Div:
        accumulate(node.a, g / b);
        accumulate(node.b, -(g * self / b));
        break;
      case Op::Neg:
        accumulate(node.a, -g);
        break;
      case Op::AddC:
        accumulate(node.a, g);
        break;
      case Op::MulC:
        accumulate(node.a, g * node.c);
        break;
      case Op::FmaC:
        accumulate(node.a, g);
        accumulate(node.b, g * node.c);
        break;
      case Op::Exp:
        accumulate(node.a, g * self);
        break;
      case Op::Log:
        accumulate(node.a, g / a);
        break;
      case Op::Tanh:
        accumulate(node.a, g * (1.0 - self * self));
        break;
      case Op::Sigmoid:
        accumulate(node.a, g * (self * (1.0 - self)));
        break;
      case Op::Max:
        if (a.value() >= b.value())
          accumulate(node.a, g);
        else
          accumulate(node.b, g);
        break;
      case Op::MaxC:
        if (a.value() >= node.c) accumulate(node.a, g);
        break;
      case Op::MinC:
        if (a.value() <= node.c) accumulate(node.a, g);
        break;
      case Op::PowC:
        if (node.c != 0.0) accumulate(node.a, (g * pow(a, node.c - 1.0)) * node.c);
        break;
    }
  }

  std::vector<Var> out;
  out.reserve(wrt.size());
  for (const Var& w : wrt) {
    const auto k = static_cast<std::size_t>(w.index());
    out.push_back(k <= top && adj[k] >= 0 ? Var(this, adj[k]) : constant(0.0));
  }
  return out;
}

// ---------------------------------------------------------------------------

Var operator+(Var a, Var b) {
  Tape* t = same_tape(a, b);
  return t->push(Op::Add, a.index(), b.index(), a.value() + b.value());
}
Var operator-(Var a, Var b) {
  Tape* t = same_tape(a, b);
  return t->push(Op::Sub, a.index(), b.index(), a.value() - b.value());
}
Var operator*(Var a, Var b) {
  Tape* t = same_tape(a, b);
  return t->push(Op::Mul, a.index(), b.index(), a.value() * b.value());
}
Var operator/(Var a, Var b) {
  Tape* t = same_tape(a, b);
  return t->push(Op::Div, a.index(), b.index(), a.value() / b.value());
}
Var operator-(Var a) { return a.tape()->push(Op::Neg, a.index(), -1, -a.value()); }
Var operator+(Var a, double c) { return a.tape()->push(Op::AddC, a.index(), -1, a.value() + c, c); }
Var operator+(double c, Var a) { return a + c; }
Var operator-(Var a, double c) { return a + (-c); }
Var operator-(double c, Var a) { return (-a) + c; }
Var operator*(Var a, double c) { return a.tape()->push(Op::MulC, a.index(), -1, a.value() * c, c); }
Var operator*(double c, Var a) { return a * c; }
Var operator/(Var a, double c) { return a * (1.0 / c); }
Var operator/(double c, Var a) { return a.tape()->constant(c) / a; }
Var& operator+=(Var& a, Var b) {
  a = a + b;
  return a;
}

Var fma(Var acc, Var x, double c) {
  Tape* t = same_tape(acc, x);
  return t->push(Op::FmaC, acc.index(), x.index(), acc.value() + x.value() * c, c);
}
Var exp(Var a) { return a.tape()->push(Op::Exp, a.index(), -1, std::exp(a.value())); }
Var log(Var a) { return a.tape()->push(Op::Log, a.index(), -1, std::log(a.value())); }
Var tanh(Var a) { return a.tape()->push(Op::Tanh, a.index(), -1, std::tanh(a.value())); }
Var sigmoid(Var a) { return a.tape()->push(Op::Sigmoid, a.index(), -1, sigmoid_value(a.value())); }
Var max(Var a, Var b) {
  Tape* t = same_tape(a, b);
  return t->push(Op::Max, a.index(), b.index(), std::max(a.value(), b.value()));
}
Var max(Var a, double c) { return a.tape()->push(Op::MaxC, a.index(), -1, std::max(a.value(), c), c); }
Var min(Var a, double c) { return a.tape()->push(Op::MinC, a.index(), -1, std::min(a.value(), c), c); }
Var pow(Var a, double exponent) {
  return a.tape()->push(Op::PowC, a.index(), -1, std::pow(a.value(), exponent), exponent);
}

// ---------------------------------------------------------------------------

Vector gradient(const ScalarFunction& f, std::span<const double> theta) {
  Tape tape;
  const auto params = tape.variables(theta);
  const Var out = f(tape, params);
  tape.check_finite();
  return tape.gradient(out, params);
}

Vector hvp(const ScalarFunction& f, std::span<const double> theta, std::span<const double> v) {
  if (v.size() != theta.size()) throw ValidationError("hvp: direction has wrong dimension");
  Tape tape;
  const auto params = tape.variables(theta);
  const Var out = f(tape, params);
  tape.check_finite();
  const auto grad = tape.gradient_graph(out, params);
  Var directional = tape.constant(0.0);
  for (std::size_t i = 0; i < grad.size(); ++i) directional = fma(directional, grad[i], v[i]);
  tape.check_finite();
  return tape.gradient(directional, params);
}

Matrix exact_hessian(const ScalarFunction& f, std::span<const double> theta) {
  if (theta.size() > kDenseHessianCap) {
    std::ostringstream msg;
    msg << "exact_hessian: dimension " << theta.size() << " exceeds the dense cap of " << kDenseHessianCap
        << "; use an HvpOracle with hutchinson_trace / power_iteration_lambda_max instead";
    throw ValidationError(msg.str());
  }
  TapeHvpOracle oracle(f, theta);
  return oracle.materialize();
}

namespace {

Matrix symmetrized(Matrix h) {
  const double skew = asymmetry(h);
  const double scale = h.frobenius_norm();
  if (skew > 1e-8 * std::max(scale, 1e-300) && skew > 1e-300) {
    std::ostringstream msg;
    msg << "Hessian asymmetry " << skew << " exceeds 1e-8 * ||H|| = " << 1e-8 * scale;
    throw NumericError(msg.str());
  }
  for (std::size_t i = 0; i < h.rows(); ++i)
    for (std::size_t j = i + 1; j < h.cols(); ++j) {
      const double s = 0.5 * (h(i, j) + h(j, i));
      h(i, j) = h(j, i) = s;
    }
  return h;
}

}  // namespace

Matrix HvpOracle::materialize() const {
  const std::size_t d = dimension();
  Matrix h(d, d);
  Vector e(d, 0.0);
  for (std::size_t j = 0; j < d; ++j) {
    e[j] = 1.0;
    h.set_column(j, apply(e));
    e[j] = 0.0;
  }
  return symmetrized(std::move(h));
}

TapeHvpOracle::TapeHvpOracle(const ScalarFunction& f, std::span<const double> theta)
    : tape_(std::make_unique<Tape>()) {
  params_ = tape_->variables(theta);
  output_ = f(*tape_, params_);
  tape_->check_finite();
  grad_ = tape_->gradient_graph(output_, params_);
  tape_->check_finite();
}

Vector TapeHvpOracle::apply(std::span<const double> v) const {
  if (v.size() != params_.size()) throw ValidationError("HvpOracle: direction has wrong dimension");
  return tape_->reverse(grad_, v, params_);
}

Matrix TapeHvpOracle::materialize() const {
  const std::size_t d = dimension();
  Matrix h(d, d);
  for (std::size_t j = 0; j < d; ++j) {
    const double one = 1.0;
    h.set_column(j, tape_->reverse(std::span<const Var>(&grad_[j], 1), std::span<const double>(&one, 1), params_));
  }
  return symmetrized(std::move(h));
}

Vector TapeHvpOracle::gradient() const {
  Vector g(grad_.size());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = grad_[i].value();
  return g;
}

SumHvpOracle::SumHvpOracle(std::vector<std::unique_ptr<HvpOracle>> parts, std::vector<double> weights)
    : parts_(std::move(parts)), weights_(std::move(weights)) {
  if (parts_.empty() || parts_.size() != weights_.size())
    throw ValidationError("SumHvpOracle: need one weight per component and at least one component");
  dim_ = parts_.front()->dimension();
  for (const auto& p : parts_)
    if (p->dimension() != dim_) throw ValidationError("SumHvpOracle: component dimensions differ");
}

Vector SumHvpOracle::apply(std::span<const double> v) const {
  std::vector<Vector> pieces(parts_.size());
  parallel_for(parts_.size(), [&](std::size_t i) { pieces[i] = parts_[i]->apply(v); });
  Vector out(dim_, 0.0);
  for (std::size_t i = 0; i < pieces.size(); ++i)
    for (std::size_t k = 0; k < dim_; ++k) out[k] += weights_[i] * pieces[i][k];
  return out;
}

Matrix SumHvpOracle::materialize() const {
  std::vector<Matrix> pieces(parts_.size());
  parallel_for(parts_.size(), [&](std::size_t i) { pieces[i] = parts_[i]->materialize(); });
  Matrix h(dim_, dim_);
  for (std::size_t i = 0; i < pieces.size(); ++i) h = h + weights_[i] * pieces[i];
  return h;
}

DenseHvpOracle::DenseHvpOracle(Matrix h) : h_(std::move(h)) {
  if (!h_.square()) throw ValidationError("DenseHvpOracle: matrix is not square");
}

}  // namespace curvlab::ad
