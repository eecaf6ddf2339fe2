#include "prism/autograd.hpp"

#include <cmath>
#include <numbers>

#include "prism/error.hpp"

namespace prism::ad {

ParameterSet::ParameterSet(const ParameterSet& other) : index_(other.index_) {
  params_.reserve(other.params_.size());
  for (const auto& p : other.params_) params_.push_back(std::make_unique<Parameter>(*p));
}

ParameterSet& ParameterSet::operator=(const ParameterSet& other) {
  if (this != &other) {
    ParameterSet copy(other);
    *this = std::move(copy);
  }
  return *this;
}

Parameter& ParameterSet::add(const std::string& name, Matrix init) {
  if (index_.count(name)) fail(ErrorCategory::precondition, "duplicate parameter " + name);
  auto p = std::make_unique<Parameter>();
  p->name = name;
  p->grad = Matrix::Zero(init.rows(), init.cols());
  p->value = std::move(init);
  index_[name] = params_.size();
  params_.push_back(std::move(p));
  return *params_.back();
}

Parameter& ParameterSet::at(const std::string& name) {
  auto* p = find(name);
  if (!p) fail(ErrorCategory::precondition, "unknown parameter " + name);
  return *p;
}

const Parameter& ParameterSet::at(const std::string& name) const {
  const auto* p = find(name);
  if (!p) fail(ErrorCategory::precondition, "unknown parameter " + name);
  return *p;
}

Parameter* ParameterSet::find(const std::string& name) {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : params_[it->second].get();
}

const Parameter* ParameterSet::find(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : params_[it->second].get();
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p->value.size());
  return n;
}

void ParameterSet::zero_grad() {
  for (auto& p : params_) p->grad.setZero(p->value.rows(), p->value.cols());
}

void ParameterSet::set_trainable_prefix(const std::string& prefix, bool trainable) {
  for (auto& p : params_)
    if (p->name.compare(0, prefix.size(), prefix) == 0) p->trainable = trainable;
}

void ParameterSet::set_all_trainable(bool trainable) {
  for (auto& p : params_) p->trainable = trainable;
}

bool ParameterSet::all_finite() const {
  for (const auto& p : params_)
    if (!p->value.allFinite()) return false;
  return true;
}

const Matrix& Var::value() const { return tape_->node(id_).value; }

Var Tape::constant(Matrix value) { return push(std::move(value), false, nullptr); }

Var Tape::param(Parameter& p) {
  Var v = push(p.value, p.trainable, nullptr);
  if (p.trainable) nodes_.back().param = &p;
  return v;
}

Var Tape::push(Matrix value, bool needs_grad, Backward backward) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = needs_grad;
  n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

void Tape::accumulate(Var v, const Matrix& g) {
  Node& n = node(v.id());
  if (!n.needs_grad) return;
  if (n.grad.size() == 0)
    n.grad = g;
  else
    n.grad += g;
}

void Tape::backward(Var loss) {
  if (loss.tape() != this || loss.rows() != 1 || loss.cols() != 1)
    fail(ErrorCategory::precondition, "backward: loss must be a 1x1 node of this tape");
  if (!node(loss.id()).needs_grad) return;
  node(loss.id()).grad = Matrix::Ones(1, 1);
  for (int i = loss.id(); i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.needs_grad || n.grad.size() == 0) continue;
    if (n.backward) n.backward(*this, i);
    if (n.param) n.param->grad += n.grad;
  }
}

namespace {

bool any_grad(std::initializer_list<Var> vs) {
  for (const auto& v : vs)
    if (v.tape()->needs_grad(v)) return true;
  return false;
}

void check_same_tape(Var a, Var b) {
  if (a.tape() != b.tape()) fail(ErrorCategory::precondition, "vars from different tapes");
}

void check_shape(bool ok, const char* op) {
  if (!ok) fail(ErrorCategory::precondition, std::string("shape mismatch in ") + op);
}

}  // namespace

Var matmul(Var a, Var b) {
  check_same_tape(a, b);
  check_shape(a.cols() == b.rows(), "matmul");
  Tape& t = *a.tape();
  Matrix y = a.value() * b.value();
  return t.push(std::move(y), any_grad({a, b}), [a, b](Tape& t, int self) {
    const Matrix& g = t.node(self).grad;
    if (t.needs_grad(a)) t.accumulate(a, g * b.value().transpose());
    if (t.needs_grad(b)) t.accumulate(b, a.value().transpose() * g);
  });
}

Var matmul_nt(Var a, Var b) {
  check_same_tape(a, b);
  check_shape(a.cols() == b.cols(), "matmul_nt");
  Tape& t = *a.tape();
  Matrix y = a.value() * b.value().transpose();
  return t.push(std::move(y), any_grad({a, b}), [a, b](Tape& t, int self) {
    const Matrix& g = t.node(self).grad;
    if (t.needs_grad(a)) t.accumulate(a, g * b.value());
    if (t.needs_grad(b)) t.accumulate(b, g.transpose() * a.value());
  });
}

Var add(Var a, Var b) {
  check_same_tape(a, b);
  check_shape(a.rows() == b.rows() && a.cols() == b.cols(), "add");
  Tape& t = *a.tape();
  return t.push(a.value() + b.value(), any_grad({a, b}), [a, b](Tape& t, int self) {
    const Matrix& g = t.node(self).grad;
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

Var sub(Var a, Var b) {
  check_same_tape(a, b);
  check_shape(a.rows() == b.rows() && a.cols() == b.cols(), "sub");
  Tape& t = *a.tape();
  return t.push(a.value() - b.value(), any_grad({a, b}), [a, b](Tape& t, int self) {
    const Matrix& g = t.node(self).grad;
    t.accumulate(a, g);
    if (t.needs_grad(b)) t.accumulate(b, -g);
  });
}

Var add_rowwise(Var a, Var row) {
  check_same_tape(a, row);
  check_shape(row.rows() == 1 && row.cols() == a.cols(), "add_rowwise");
  Tape& t = *a.tape();
  Matrix y = a.value().rowwise() + row.value().row(0);
  return t.push(std::move(y), any_grad({a, row}), [a, row](Tape& t, int self) {
    const Matrix& g = t.node(self).grad;
    t.accumulate(a, g);
    if (t.needs_grad(row)) t.accumulate(row, g.colwise().sum());
  });
}

Var scale(Var a, double s) {
  Tape& t = *a.tape();
  return t.push(a.value() * s, any_grad({a}), [a, s](Tape& t, int self) {
    t.accumulate(a, t.node(self).grad * s);
  });
}

Var hadamard(Var a, Var b) {
  check_same_tape(a, b);
  check_shape(a.rows() == b.rows() && a.cols() == b.cols(), "hadamard");
  Tape& t = *a.tape();
  return t.push(a.value().cwiseProduct(b.value()), any_grad({a, b}), [a, b](Tape& t, int self) {
    const Matrix& g = t.node(self).grad;
    if (t.needs_grad(a)) t.accumulate(a, g.cwiseProduct(b.value()));
    if (t.needs_grad(b)) t.accumulate(b, g.cwiseProduct(a.value()));
  });
}

Var transpose(Var a) {
  Tape& t = *a.tape();
  return t.push(a.value().transpose(), any_grad({a}), [a](Tape& t, int self) {
    t.accumulate(a, t.node(self).grad.transpose());
  });
}

double gelu_value(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

Var gelu(Var a) {
  Tape& t = *a.tape();
  Matrix y = a.value().unaryExpr([](double x) { return gelu_value(x); });
  return t.push(std::move(y), any_grad({a}), [a](Tape& t, int self) {
    constexpr double inv_sqrt_2pi = 0.3989422804014327;
    Matrix d = a.value().unaryExpr([](double x) {
      const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
      return cdf + x * inv_sqrt_2pi * std::exp(-0.5 * x * x);
    });
    t.accumulate(a, t.node(self).grad.cwiseProduct(d));
  });
}

Var softmax_rows(Var a) {
  Tape& t = *a.tape();
  Matrix y = a.value();
  for (Index r = 0; r < y.rows(); ++r) {
    const double m = y.row(r).maxCoeff();
    y.row(r) = (y.row(r).array() - m).exp();
    y.row(r) /= y.row(r).sum();
  }
  return t.push(std::move(y), any_grad({a}), [a](Tape& t, int self) {
    const Matrix& g = t.node(self).grad;
    const Matrix& y = t.node(self).value;
    Matrix gy = g.cwiseProduct(y);
    Eigen::VectorXd dots = gy.rowwise().sum();
    Matrix dx = gy - (y.array().colwise() * dots.array()).matrix();
    t.accumulate(a, dx);
  });
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  check_same_tape(x, gamma);
  check_same_tape(x, beta);
  check_shape(gamma.rows() == 1 && gamma.cols() == x.cols() && beta.rows() == 1 &&
                  beta.cols() == x.cols(),
              "layer_norm");
  Tape& t = *x.tape();
  const Index n = x.rows(), d = x.cols();
  Matrix xhat(n, d);
  Eigen::VectorXd inv_sd(n);
  for (Index r = 0; r < n; ++r) {
    const double mu = x.value().row(r).mean();
    const double var = (x.value().row(r).array() - mu).square().mean();
    inv_sd(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (x.value().row(r).array() - mu) * inv_sd(r);
  }
  Matrix y = (xhat.array().rowwise() * gamma.value().row(0).array()).matrix();
  y.rowwise() += beta.value().row(0);
  return t.push(std::move(y), any_grad({x, gamma, beta}),
                [x, gamma, beta, xhat = std::move(xhat), inv_sd = std::move(inv_sd)](Tape& t, int self) {
                  const Matrix& g = t.node(self).grad;
                  if (t.needs_grad(gamma)) t.accumulate(gamma, g.cwiseProduct(xhat).colwise().sum());
                  if (t.needs_grad(beta)) t.accumulate(beta, g.colwise().sum());
                  if (t.needs_grad(x)) {
                    Matrix dxhat = (g.array().rowwise() * gamma.value().row(0).array()).matrix();
                    const double d = static_cast<double>(dxhat.cols());
                    Matrix dx(dxhat.rows(), dxhat.cols());
                    for (Index r = 0; r < dxhat.rows(); ++r) {
                      const double m1 = dxhat.row(r).sum() / d;
                      const double m2 = dxhat.row(r).dot(xhat.row(r)) / d;
                      dx.row(r) = inv_sd(r) * (dxhat.row(r).array() - m1 - xhat.row(r).array() * m2);
                    }
                    t.accumulate(x, dx);
                  }
                });
}

Var slice_cols(Var a, Index start, Index count) {
  check_shape(start >= 0 && count >= 0 && start + count <= a.cols(), "slice_cols");
  Tape& t = *a.tape();
  return t.push(a.value().middleCols(start, count), any_grad({a}),
                [a, start, count](Tape& t, int self) {
                  Matrix g = Matrix::Zero(a.rows(), a.cols());
                  g.middleCols(start, count) = t.node(self).grad;
                  t.accumulate(a, g);
                });
}

Var concat_cols(const std::vector<Var>& parts) {
  check_shape(!parts.empty(), "concat_cols");
  Tape& t = *parts.front().tape();
  const Index rows = parts.front().rows();
  Index cols = 0;
  bool grad = false;
  for (const auto& p : parts) {
    check_same_tape(parts.front(), p);
    check_shape(p.rows() == rows, "concat_cols");
    cols += p.cols();
    grad = grad || t.needs_grad(p);
  }
  Matrix y(rows, cols);
  Index off = 0;
  for (const auto& p : parts) {
    y.middleCols(off, p.cols()) = p.value();
    off += p.cols();
  }
  return t.push(std::move(y), grad, [parts](Tape& t, int self) {
    const Matrix& g = t.node(self).grad;
    Index off = 0;
    for (const auto& p : parts) {
      if (t.needs_grad(p)) t.accumulate(p, g.middleCols(off, p.cols()));
      off += p.cols();
    }
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  check_shape(!parts.empty(), "concat_rows");
  Tape& t = *parts.front().tape();
  const Index cols = parts.front().cols();
  Index rows = 0;
  bool grad = false;
  for (const auto& p : parts) {
    check_same_tape(parts.front(), p);
    check_shape(p.cols() == cols, "concat_rows");
    rows += p.rows();
    grad = grad || t.needs_grad(p);
  }
  Matrix y(rows, cols);
  Index off = 0;
  for (const auto& p : parts) {
    y.middleRows(off, p.rows()) = p.value();
    off += p.rows();
  }
  return t.push(std::move(y), grad, [parts](Tape& t, int self) {
    const Matrix& g = t.node(self).grad;
    Index off = 0;
    for (const auto& p : parts) {
      if (t.needs_grad(p)) t.accumulate(p, g.middleRows(off, p.rows()));
      off += p.rows();
    }
  });
}

Var gather_rows(Var a, const std::vector<Index>& rows) {
  Tape& t = *a.tape();
  Matrix y(static_cast<Index>(rows.size()), a.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    check_shape(rows[i] >= 0 && rows[i] < a.rows(), "gather_rows");
    y.row(static_cast<Index>(i)) = a.value().row(rows[i]);
  }
  return t.push(std::move(y), any_grad({a}), [a, rows](Tape& t, int self) {
    const Matrix& g = t.node(self).grad;
    Matrix ga = Matrix::Zero(a.rows(), a.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) ga.row(rows[i]) += g.row(static_cast<Index>(i));
    t.accumulate(a, ga);
  });
}

Var mean_rows(Var a) {
  Tape& t = *a.tape();
  const double n = static_cast<double>(a.rows());
  return t.push(a.value().colwise().mean(), any_grad({a}), [a, n](Tape& t, int self) {
    const Matrix& g = t.node(self).grad;
    t.accumulate(a, g.replicate(a.rows(), 1) / n);
  });
}

Var sum_all(Var a) {
  Tape& t = *a.tape();
  Matrix y(1, 1);
  y(0, 0) = a.value().sum();
  return t.push(std::move(y), any_grad({a}), [a](Tape& t, int self) {
    t.accumulate(a, Matrix::Constant(a.rows(), a.cols(), t.node(self).grad(0, 0)));
  });
}

Var l1_row_mean(Var pred, const Matrix& target) {
  check_shape(pred.rows() == target.rows() && pred.cols() == target.cols() && pred.rows() > 0,
              "l1_row_mean");
  Tape& t = *pred.tape();
  Matrix diff = pred.value() - target;
  const double n = static_cast<double>(pred.rows());
  Matrix y(1, 1);
  y(0, 0) = diff.cwiseAbs().sum() / n;
  return t.push(std::move(y), any_grad({pred}), [pred, diff = std::move(diff), n](Tape& t, int self) {
    const double g = t.node(self).grad(0, 0);
    Matrix d = diff.unaryExpr([](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
    t.accumulate(pred, d * (g / n));
  });
}

Var cross_entropy(Var logits, const std::vector<int>& labels) {
  check_shape(static_cast<std::size_t>(logits.rows()) == labels.size() && !labels.empty(),
              "cross_entropy");
  Tape& t = *logits.tape();
  const Index n = logits.rows(), c = logits.cols();
  Matrix p(n, c);
  double loss = 0.0;
  for (Index r = 0; r < n; ++r) {
    const int y = labels[static_cast<std::size_t>(r)];
    check_shape(y >= 0 && y < c, "cross_entropy label");
    const double m = logits.value().row(r).maxCoeff();
    p.row(r) = (logits.value().row(r).array() - m).exp();
    const double z = p.row(r).sum();
    p.row(r) /= z;
    loss -= logits.value()(r, y) - m - std::log(z);
  }
  Matrix out(1, 1);
  out(0, 0) = loss / static_cast<double>(n);
  return t.push(std::move(out), any_grad({logits}),
                [logits, labels, p = std::move(p)](Tape& t, int self) {
                  const double g = t.node(self).grad(0, 0);
                  Matrix d = p;
                  for (std::size_t r = 0; r < labels.size(); ++r) d(static_cast<Index>(r), labels[r]) -= 1.0;
                  t.accumulate(logits, d * (g / static_cast<double>(labels.size())));
                });
}

}  // namespace prism::ad
