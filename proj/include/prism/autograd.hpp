#pragma once

// Minimal reverse-mode differentiation over dense double matrices. A Tape
// records one forward evaluation; backward() accumulates gradients into the
// Parameters that were read through Tape::param().

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace prism::ad {

using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;
  bool trainable = true;
};

// Owns parameters with stable addresses, iterated in insertion order.
class ParameterSet {
 public:
  ParameterSet() = default;
  ParameterSet(const ParameterSet& other);
  ParameterSet& operator=(const ParameterSet& other);
  ParameterSet(ParameterSet&&) noexcept = default;
  ParameterSet& operator=(ParameterSet&&) noexcept = default;

  Parameter& add(const std::string& name, Matrix init);
  Parameter& at(const std::string& name);
  const Parameter& at(const std::string& name) const;
  Parameter* find(const std::string& name);
  const Parameter* find(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const;

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.cbegin(); }
  auto end() const { return params_.cend(); }

  void zero_grad();
  // Marks every parameter whose name starts with `prefix`.
  void set_trainable_prefix(const std::string& prefix, bool trainable);
  void set_all_trainable(bool trainable);

  bool all_finite() const;

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
  std::map<std::string, std::size_t> index_;
};

class Tape;

class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  const Matrix& value() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }
  int id() const { return id_; }
  Tape* tape() const { return tape_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, int self)>;

  struct Node {
    Matrix value;
    Matrix grad;
    bool needs_grad = false;
    Backward backward;
    Parameter* param = nullptr;
  };

  Var constant(Matrix value);
  // Untrainable parameters enter as constants.
  Var param(Parameter& p);
  Var param(ParameterSet& set, const std::string& name) { return param(set.at(name)); }

  Var push(Matrix value, bool needs_grad, Backward backward);

  // Seeds d(loss)/d(loss) = 1 for a 1x1 loss and accumulates into parameters.
  void backward(Var loss);

  Node& node(int id) { return nodes_[static_cast<std::size_t>(id)]; }
  const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }
  bool needs_grad(Var v) const { return node(v.id()).needs_grad; }
  // Adds g into the gradient slot of v if it participates in backprop.
  void accumulate(Var v, const Matrix& g);

  std::size_t size() const { return nodes_.size(); }

 private:
  std::vector<Node> nodes_;
};

Var matmul(Var a, Var b);     // a b
Var matmul_nt(Var a, Var b);  // a b^T
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var add_rowwise(Var a, Var row);  // broadcast a 1 x cols row over a
Var scale(Var a, double s);
Var hadamard(Var a, Var b);
Var transpose(Var a);
Var gelu(Var a);
Var softmax_rows(Var a);
Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-6);
Var slice_cols(Var a, Index start, Index count);
Var concat_cols(const std::vector<Var>& parts);
Var concat_rows(const std::vector<Var>& parts);
Var gather_rows(Var a, const std::vector<Index>& rows);
Var mean_rows(Var a);  // 1 x cols
Var sum_all(Var a);    // 1 x 1
// (1/rows) sum_i ||pred_i - target_i||_1 with a constant target.
Var l1_row_mean(Var pred, const Matrix& target);
// Mean softmax cross-entropy over rows of logits.
Var cross_entropy(Var logits, const std::vector<int>& labels);

double gelu_value(double x);

}  // namespace prism::ad
