#include "vqr/tape.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace vqr::ad {

const char* op_name(Op op) {
  switch (op) {
    case Op::leaf: return "leaf";
    case Op::matmul: return "matmul";
    case Op::add: return "add";
    case Op::mul: return "elementwise-mul";
    case Op::softplus: return "softplus";
    case Op::elu: return "elu";
    case Op::relu: return "relu-clamp";
    case Op::logsumexp: return "logsumexp";
    case Op::sum: return "sum";
    case Op::scale: return "scale";
    case Op::dot: return "dot";
    case Op::square_norm: return "square-norm";
  }
  return "?";
}

double softplus_value(double x) {
  // max(x,0) + log1p(exp(-|x|)) avoids overflow on both tails
  return std::max(x, 0.0) + std::log1p(std::exp(-std::fabs(x)));
}

double sigmoid_value(double x) {
  if (x >= 0.0) {
    double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  double e = std::exp(x);
  return e / (1.0 + e);
}

namespace {

[[noreturn]] void shape_error(Op op, const DenseArray& a, const DenseArray* b) {
  std::string msg = std::string("tape: shape mismatch in op '") + op_name(op) +
                    "': " + a.shape_str();
  if (b) msg += " vs " + b->shape_str();
  throw std::invalid_argument(msg);
}

void resize_like(DenseArray& dst, const std::vector<std::size_t>& shape) {
  dst.shape = shape;
  dst.data.resize(dst.numel());
}

}  // namespace

Node& Tape::fresh_node() {
  if (size_ == static_cast<int>(nodes_.size())) nodes_.emplace_back();
  Node& n = nodes_[size_++];
  n.op = Op::leaf;
  n.parent0 = n.parent1 = -1;
  n.attr = 0.0;
  n.adjoint_set = false;
  n.watched = false;
  return n;
}

NodeId Tape::leaf(const DenseArray& v, bool watched) {
  Node& n = fresh_node();
  n.value.shape = v.shape;
  n.value.data = v.data;
  n.watched = watched;
  return size_ - 1;
}

NodeId Tape::leaf(DenseArray&& v, bool watched) {
  Node& n = fresh_node();
  n.value = std::move(v);
  n.watched = watched;
  return size_ - 1;
}

void Tape::set_leaf(NodeId id, std::span<const double> v) {
  Node& n = nodes_[id];
  if (n.op != Op::leaf || n.value.data.size() != v.size())
    throw std::invalid_argument("tape: set_leaf on incompatible node");
  std::copy(v.begin(), v.end(), n.value.data.begin());
}

void Tape::eval_node(Node& n) {
  const DenseArray& x = nodes_[n.parent0].value;
  switch (n.op) {
    case Op::softplus:
      for (std::size_t i = 0; i < x.data.size(); ++i)
        n.value.data[i] = softplus_value(x.data[i]);
      break;
    case Op::elu:
      for (std::size_t i = 0; i < x.data.size(); ++i)
        n.value.data[i] = x.data[i] > 0.0 ? x.data[i] : std::expm1(x.data[i]);
      break;
    case Op::relu:
      for (std::size_t i = 0; i < x.data.size(); ++i)
        n.value.data[i] = std::max(x.data[i], 0.0);
      break;
    case Op::logsumexp: {
      double m = *std::max_element(x.data.begin(), x.data.end());
      double s = 0.0;
      for (double v : x.data) s += std::exp(v - m);
      n.value.data[0] = m + std::log(s);
      break;
    }
    case Op::sum: {
      double s = 0.0;
      for (double v : x.data) s += v;
      n.value.data[0] = s;
      break;
    }
    case Op::square_norm: {
      double s = 0.0;
      for (double v : x.data) s += v * v;
      n.value.data[0] = s;
      break;
    }
    case Op::scale:
      for (std::size_t i = 0; i < x.data.size(); ++i)
        n.value.data[i] = n.attr * x.data[i];
      break;
    case Op::add: {
      const DenseArray& y = nodes_[n.parent1].value;
      for (std::size_t i = 0; i < x.data.size(); ++i)
        n.value.data[i] = x.data[i] + y.data[i];
      break;
    }
    case Op::mul: {
      const DenseArray& y = nodes_[n.parent1].value;
      for (std::size_t i = 0; i < x.data.size(); ++i)
        n.value.data[i] = x.data[i] * y.data[i];
      break;
    }
    case Op::dot: {
      const DenseArray& y = nodes_[n.parent1].value;
      double s = 0.0;
      for (std::size_t i = 0; i < x.data.size(); ++i) s += x.data[i] * y.data[i];
      n.value.data[0] = s;
      break;
    }
    case Op::matmul: {
      const DenseArray& y = nodes_[n.parent1].value;
      std::size_t m = x.shape[0], k = x.shape[1];
      if (y.rank() == 1) {
        for (std::size_t r = 0; r < m; ++r) {
          double s = 0.0;
          const double* row = x.data.data() + r * k;
          for (std::size_t c = 0; c < k; ++c) s += row[c] * y.data[c];
          n.value.data[r] = s;
        }
      } else {
        std::size_t p = y.shape[1];
        std::fill(n.value.data.begin(), n.value.data.end(), 0.0);
        for (std::size_t r = 0; r < m; ++r)
          for (std::size_t c = 0; c < k; ++c) {
            double xv = x.data[r * k + c];
            if (xv == 0.0) continue;
            const double* yrow = y.data.data() + c * p;
            double* orow = n.value.data.data() + r * p;
            for (std::size_t j = 0; j < p; ++j) orow[j] += xv * yrow[j];
          }
      }
      break;
    }
    case Op::leaf:
      break;
  }
}

void Tape::recompute() {
  for (int i = 0; i < size_; ++i)
    if (nodes_[i].op != Op::leaf) eval_node(nodes_[i]);
}

NodeId Tape::scale(NodeId a, double factor) {
  const DenseArray& x = nodes_[a].value;
  Node& n = fresh_node();
  n.op = Op::scale;
  n.parent0 = a;
  n.attr = factor;
  resize_like(n.value, x.shape);
  eval_node(n);
  return size_ - 1;
}

NodeId Tape::apply(Op op, NodeId a) {
  const DenseArray& x = nodes_[a].value;
  Node& n = fresh_node();
  n.op = op;
  n.parent0 = a;
  switch (op) {
    case Op::softplus:
    case Op::elu:
    case Op::relu:
      resize_like(n.value, x.shape);
      break;
    case Op::logsumexp:
      if (x.rank() != 1 || x.data.empty()) { --size_; shape_error(op, x, nullptr); }
      resize_like(n.value, {1});
      break;
    case Op::sum:
    case Op::square_norm:
      resize_like(n.value, {1});
      break;
    default:
      --size_;
      throw std::invalid_argument(std::string("tape: op '") + op_name(op) +
                                  "' is not unary");
  }
  eval_node(n);
  return size_ - 1;
}

NodeId Tape::apply(Op op, NodeId a, NodeId b) {
  const DenseArray& x = nodes_[a].value;
  const DenseArray& y = nodes_[b].value;
  Node& n = fresh_node();
  n.op = op;
  n.parent0 = a;
  n.parent1 = b;
  switch (op) {
    case Op::add:
    case Op::mul:
      if (!x.same_shape(y)) { --size_; shape_error(op, x, &y); }
      resize_like(n.value, x.shape);
      break;
    case Op::dot:
      if (x.rank() != 1 || !x.same_shape(y)) { --size_; shape_error(op, x, &y); }
      resize_like(n.value, {1});
      break;
    case Op::matmul: {
      if (x.rank() != 2) { --size_; shape_error(op, x, &y); }
      std::size_t m = x.shape[0], k = x.shape[1];
      if (y.rank() == 1) {
        if (y.shape[0] != k) { --size_; shape_error(op, x, &y); }
        resize_like(n.value, {m});
      } else if (y.rank() == 2) {
        if (y.shape[0] != k) { --size_; shape_error(op, x, &y); }
        resize_like(n.value, {m, y.shape[1]});
      } else {
        --size_; shape_error(op, x, &y);
      }
      break;
    }
    default:
      --size_;
      throw std::invalid_argument(std::string("tape: op '") + op_name(op) +
                                  "' is not binary");
  }
  eval_node(n);
  return size_ - 1;
}

const DenseArray& Tape::adjoint(NodeId id) {
  Node& n = nodes_[id];
  if (!n.adjoint_set) {
    n.adjoint.shape = n.value.shape;
    n.adjoint.data.assign(n.value.data.size(), 0.0);
    n.adjoint_set = true;
  }
  return n.adjoint;
}

void Tape::backward(NodeId root) {
  Node& r = nodes_[root];
  if (r.value.numel() != 1)
    throw std::invalid_argument("tape: backward requires a scalar root, got " +
                                r.value.shape_str());
  for (int i = 0; i <= root; ++i) nodes_[i].adjoint_set = false;

  auto bump = [&](NodeId id) -> DenseArray& {
    Node& n = nodes_[id];
    if (!n.adjoint_set) {
      n.adjoint.shape = n.value.shape;
      n.adjoint.data.assign(n.value.data.size(), 0.0);
      n.adjoint_set = true;
    }
    return n.adjoint;
  };

  bump(root).data[0] = 1.0;

  for (NodeId id = root; id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.adjoint_set || n.op == Op::leaf) continue;
    const DenseArray& g = n.adjoint;
    const DenseArray& x = nodes_[n.parent0].value;
    switch (n.op) {
      case Op::softplus: {
        DenseArray& gx = bump(n.parent0);
        for (std::size_t i = 0; i < x.data.size(); ++i)
          gx.data[i] += g.data[i] * sigmoid_value(x.data[i]);
        break;
      }
      case Op::elu: {
        DenseArray& gx = bump(n.parent0);
        for (std::size_t i = 0; i < x.data.size(); ++i)
          gx.data[i] += g.data[i] * (x.data[i] > 0.0 ? 1.0 : std::exp(x.data[i]));
        break;
      }
      case Op::relu: {
        DenseArray& gx = bump(n.parent0);
        for (std::size_t i = 0; i < x.data.size(); ++i)
          gx.data[i] += g.data[i] * (x.data[i] > 0.0 ? 1.0 : 0.0);
        break;
      }
      case Op::logsumexp: {
        DenseArray& gx = bump(n.parent0);
        double lse = n.value.data[0];
        double gs = g.data[0];
        for (std::size_t i = 0; i < x.data.size(); ++i)
          gx.data[i] += gs * std::exp(x.data[i] - lse);
        break;
      }
      case Op::sum: {
        DenseArray& gx = bump(n.parent0);
        double gs = g.data[0];
        for (std::size_t i = 0; i < x.data.size(); ++i) gx.data[i] += gs;
        break;
      }
      case Op::square_norm: {
        DenseArray& gx = bump(n.parent0);
        double gs = g.data[0];
        for (std::size_t i = 0; i < x.data.size(); ++i)
          gx.data[i] += 2.0 * gs * x.data[i];
        break;
      }
      case Op::scale: {
        DenseArray& gx = bump(n.parent0);
        for (std::size_t i = 0; i < x.data.size(); ++i)
          gx.data[i] += n.attr * g.data[i];
        break;
      }
      case Op::add: {
        DenseArray& gx = bump(n.parent0);
        for (std::size_t i = 0; i < g.data.size(); ++i) gx.data[i] += g.data[i];
        DenseArray& gy = bump(n.parent1);
        for (std::size_t i = 0; i < g.data.size(); ++i) gy.data[i] += g.data[i];
        break;
      }
      case Op::mul: {
        const DenseArray& y = nodes_[n.parent1].value;
        DenseArray& gx = bump(n.parent0);
        for (std::size_t i = 0; i < g.data.size(); ++i)
          gx.data[i] += g.data[i] * y.data[i];
        DenseArray& gy = bump(n.parent1);
        for (std::size_t i = 0; i < g.data.size(); ++i)
          gy.data[i] += g.data[i] * x.data[i];
        break;
      }
      case Op::dot: {
        const DenseArray& y = nodes_[n.parent1].value;
        double gs = g.data[0];
        DenseArray& gx = bump(n.parent0);
        for (std::size_t i = 0; i < x.data.size(); ++i)
          gx.data[i] += gs * y.data[i];
        DenseArray& gy = bump(n.parent1);
        for (std::size_t i = 0; i < x.data.size(); ++i)
          gy.data[i] += gs * x.data[i];
        break;
      }
      case Op::matmul: {
        const DenseArray& y = nodes_[n.parent1].value;
        std::size_t m = x.shape[0], k = x.shape[1];
        if (y.rank() == 1) {
          // z = A v : gA += outer(g, v), gv += A^T g
          DenseArray& ga = bump(n.parent0);
          for (std::size_t r = 0; r < m; ++r) {
            double gr = g.data[r];
            if (gr == 0.0) continue;
            double* arow = ga.data.data() + r * k;
            for (std::size_t c = 0; c < k; ++c) arow[c] += gr * y.data[c];
          }
          DenseArray& gv = bump(n.parent1);
          for (std::size_t r = 0; r < m; ++r) {
            double gr = g.data[r];
            if (gr == 0.0) continue;
            const double* arow = x.data.data() + r * k;
            for (std::size_t c = 0; c < k; ++c) gv.data[c] += gr * arow[c];
          }
        } else {
          std::size_t p = y.shape[1];
          // z = A B : gA += g B^T, gB += A^T g
          DenseArray& ga = bump(n.parent0);
          for (std::size_t r = 0; r < m; ++r)
            for (std::size_t c = 0; c < k; ++c) {
              double s = 0.0;
              const double* grow = g.data.data() + r * p;
              const double* brow = y.data.data() + c * p;
              for (std::size_t j = 0; j < p; ++j) s += grow[j] * brow[j];
              ga.data[r * k + c] += s;
            }
          DenseArray& gb = bump(n.parent1);
          for (std::size_t c = 0; c < k; ++c)
            for (std::size_t j = 0; j < p; ++j) {
              double s = 0.0;
              for (std::size_t r = 0; r < m; ++r)
                s += x.data[r * k + c] * g.data[r * p + j];
              gb.data[c * p + j] += s;
            }
        }
        break;
      }
      case Op::leaf:
        break;
    }
  }
}

std::vector<std::pair<NodeId, DenseArray>> Tape::watched_adjoints() {
  std::vector<std::pair<NodeId, DenseArray>> out;
  for (int i = 0; i < size_; ++i)
    if (nodes_[i].watched) out.emplace_back(i, adjoint(i));
  return out;
}

double grad_check(const ScalarGraphBuilder& f, const DenseArray& point,
                  double step) {
  if (step <= 0.0) throw std::invalid_argument("grad_check: step must be > 0");
  Tape tape;
  NodeId x = tape.leaf(point, /*watched=*/true);
  NodeId root = f(tape, x);
  tape.backward(root);
  DenseArray analytic = tape.adjoint(x);

  auto eval = [&](const DenseArray& p) {
    Tape t;
    NodeId xi = t.leaf(p);
    return t.value(f(t, xi)).data[0];
  };

  double max_rel = 0.0;
  DenseArray probe = point;
  for (std::size_t i = 0; i < point.data.size(); ++i) {
    probe.data[i] = point.data[i] + step;
    double fp = eval(probe);
    probe.data[i] = point.data[i] - step;
    double fm = eval(probe);
    probe.data[i] = point.data[i];
    double numeric = (fp - fm) / (2.0 * step);
    double denom = std::max({std::fabs(analytic.data[i]), std::fabs(numeric), 1e-8});
    max_rel = std::max(max_rel, std::fabs(analytic.data[i] - numeric) / denom);
  }
  return max_rel;
}

}  // namespace vqr::ad
