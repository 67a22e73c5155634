#pragma once

#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "vqr/array.hpp"

namespace vqr::ad {

using NodeId = int;

enum class Op {
  leaf,
  matmul,
  add,
  mul,        // elementwise
  softplus,
  elu,
  relu,       // clamp at zero
  logsumexp,  // vector -> scalar, max-shift stabilized
  sum,        // any -> scalar
  scale,      // multiply by compile-time-constant scalar
  dot,        // vector . vector -> scalar
  square_norm // sum of squares -> scalar
};

const char* op_name(Op op);

struct Node {
  DenseArray value;
  DenseArray adjoint;    // lazily sized, reused across sweeps
  Op op = Op::leaf;
  NodeId parent0 = -1;
  NodeId parent1 = -1;
  double attr = 0.0;     // scale factor
  bool adjoint_set = false;
  bool watched = false;
};

// Reverse-mode tape over dense arrays. Node ids are assigned in creation
// (topological) order; reset() rewinds the tape while keeping node storage
// so repeated evaluations of an identically-shaped graph do not allocate.
class Tape {
 public:
  NodeId leaf(const DenseArray& v, bool watched = false);
  NodeId leaf(DenseArray&& v, bool watched = false);

  NodeId apply(Op op, NodeId a);
  NodeId apply(Op op, NodeId a, NodeId b);
  NodeId scale(NodeId a, double factor);

  NodeId matmul(NodeId a, NodeId b) { return apply(Op::matmul, a, b); }
  NodeId add(NodeId a, NodeId b) { return apply(Op::add, a, b); }
  NodeId mul(NodeId a, NodeId b) { return apply(Op::mul, a, b); }
  NodeId softplus(NodeId a) { return apply(Op::softplus, a); }
  NodeId elu(NodeId a) { return apply(Op::elu, a); }
  NodeId relu(NodeId a) { return apply(Op::relu, a); }
  NodeId logsumexp(NodeId a) { return apply(Op::logsumexp, a); }
  NodeId sum(NodeId a) { return apply(Op::sum, a); }
  NodeId dot(NodeId a, NodeId b) { return apply(Op::dot, a, b); }
  NodeId square_norm(NodeId a) { return apply(Op::square_norm, a); }

  const DenseArray& value(NodeId id) const { return nodes_[id].value; }
  // Adjoint d(root)/d(node) after backward(); zero array if untouched.
  const DenseArray& adjoint(NodeId id);

  // Reverse sweep from a scalar root. Clears previous adjoints first, so
  // calling twice yields identical results.
  void backward(NodeId root);

  // Adjoints of all watched nodes, in id order.
  std::vector<std::pair<NodeId, DenseArray>> watched_adjoints();

  // Overwrite a leaf's value in place (shape must match). Combined with
  // recompute() this re-evaluates a fixed graph without rebuilding it.
  void set_leaf(NodeId id, std::span<const double> v);
  void recompute();

  void reset() { size_ = 0; }
  int size() const { return size_; }

 private:
  Node& fresh_node();
  void eval_node(Node& n);
  std::vector<Node> nodes_;
  int size_ = 0;
};

// Scalar graph builder: receives the tape and the id of the input leaf,
// returns the id of the scalar root.
using ScalarGraphBuilder = std::function<NodeId(Tape&, NodeId)>;

// Compares reverse-mode gradients against central finite differences
// (f(x+h e_i) - f(x-h e_i)) / 2h, coordinatewise. Returns the maximum
// relative error with denominator max(|analytic|, |numeric|, 1e-8).
double grad_check(const ScalarGraphBuilder& f, const DenseArray& point,
                  double step);

// Numerically stable scalar helpers shared with module code.
double softplus_value(double x);
double sigmoid_value(double x);

}  // namespace vqr::ad
