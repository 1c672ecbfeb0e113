#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "kinaero/grad/tensor.hpp"

namespace kinaero::grad {

enum class OpKind : std::uint8_t {
  Leaf,
  MatMul,
  Affine,
  Add,
  Sub,
  Mul,
  Scale,
  AddScalar,
  Tanh,
  Exp,
  Log,
  Square,
  Clamp,
  Sum,
  Slice,
  Concat,
  Softmax,
  LogSoftmax,
  Reshape,
};

inline const char* op_name(OpKind op) {
  switch (op) {
    case OpKind::Leaf: return "leaf";
    case OpKind::MatMul: return "matmul";
    case OpKind::Affine: return "affine";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::Scale: return "scale";
    case OpKind::AddScalar: return "add_scalar";
    case OpKind::Tanh: return "tanh";
    case OpKind::Exp: return "exp";
    case OpKind::Log: return "log";
    case OpKind::Square: return "square";
    case OpKind::Clamp: return "clamp";
    case OpKind::Sum: return "sum";
    case OpKind::Slice: return "slice";
    case OpKind::Concat: return "concat";
    case OpKind::Softmax: return "softmax";
    case OpKind::LogSoftmax: return "log_softmax";
    case OpKind::Reshape: return "reshape";
  }
  return "?";
}

class Tape;

// Handle to a node on a Tape. Cheap to copy; only valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  std::uint32_t id = 0;
};

// Append-only reverse-mode tape. Nodes are evaluated eagerly when recorded and
// can be re-evaluated in recording order with forward() after leaf values are
// rebound, so one recorded graph can be replayed many times.
//
// Inputs of a node always precede it, so the tape is a DAG in topological
// order by construction.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  std::size_t size() const { return nodes_.size(); }

  void reserve(std::size_t n) { nodes_.reserve(n); }

  Var leaf(Tensor value, bool trainable) {
    check_finite(value, OpKind::Leaf);
    Node n;
    n.op = OpKind::Leaf;
    n.value = std::move(value);
    n.requires_grad = trainable;
    return push(std::move(n));
  }

  Var constant(Tensor value) { return leaf(std::move(value), false); }

  Var matmul(Var a, Var b) {
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    if (av.rank() > 2 || bv.rank() > 2 || av.cols() != bv.rows()) {
      throw ShapeError(std::string("matmul shape mismatch ") + shape_str(av.shape()) + " x " +
                       shape_str(bv.shape()));
    }
    Shape out = bv.rank() <= 1 ? Shape{av.rows()} : Shape{av.rows(), bv.cols()};
    return record(OpKind::MatMul, {a.id, b.id}, std::move(out));
  }

  // W x + b with x a vector; b may be omitted.
  Var affine(Var w, Var x, Var b) {
    const Tensor& wv = value(w);
    const Tensor& xv = value(x);
    const Tensor& bv = value(b);
    if (wv.rank() != 2 || xv.cols() != 1 || wv.cols() != xv.rows() || bv.size() != wv.rows()) {
      throw ShapeError(std::string("affine shape mismatch ") + shape_str(wv.shape()) + " x " +
                       shape_str(xv.shape()) + " + " + shape_str(bv.shape()));
    }
    return record(OpKind::Affine, {w.id, x.id, b.id}, Shape{wv.rows()});
  }

  Var add(Var a, Var b) { return binary(OpKind::Add, a, b); }
  Var sub(Var a, Var b) { return binary(OpKind::Sub, a, b); }
  Var mul(Var a, Var b) { return binary(OpKind::Mul, a, b); }

  Var scale(Var a, double c) { return record(OpKind::Scale, {a.id}, value(a).shape(), c); }
  Var add_scalar(Var a, double c) {
    return record(OpKind::AddScalar, {a.id}, value(a).shape(), c);
  }
  Var tanh(Var a) { return record(OpKind::Tanh, {a.id}, value(a).shape()); }
  Var exp(Var a) { return record(OpKind::Exp, {a.id}, value(a).shape()); }
  Var log(Var a) { return record(OpKind::Log, {a.id}, value(a).shape()); }
  Var square(Var a) { return record(OpKind::Square, {a.id}, value(a).shape()); }

  Var clamp(Var a, double lo, double hi) {
    if (!(lo < hi)) throw std::invalid_argument("clamp requires lo < hi");
    return record(OpKind::Clamp, {a.id}, value(a).shape(), lo, hi);
  }

  Var sum(Var a) { return record(OpKind::Sum, {a.id}, Shape{1}); }

  Var slice(Var a, std::size_t offset, std::size_t len) {
    if (offset + len > value(a).size()) throw ShapeError("slice out of range");
    return record(OpKind::Slice, {a.id}, Shape{len}, 0.0, 0.0, offset);
  }

  Var concat(std::span<const Var> parts) {
    if (parts.empty()) throw ShapeError("concat of nothing");
    std::vector<std::uint32_t> ids;
    std::size_t total = 0;
    for (Var p : parts) {
      ids.push_back(p.id);
      total += value(p).size();
    }
    return record(OpKind::Concat, std::move(ids), Shape{total});
  }

  // Softmax over consecutive groups of `group` elements of the flat data.
  Var softmax(Var a, std::size_t group) { return grouped(OpKind::Softmax, a, group); }
  Var log_softmax(Var a, std::size_t group) { return grouped(OpKind::LogSoftmax, a, group); }

  Var reshape(Var a, Shape shape) {
    if (shape_size(shape) != value(a).size()) throw ShapeError("reshape changes element count");
    return record(OpKind::Reshape, {a.id}, std::move(shape));
  }

  const Tensor& value(Var v) const { return node(v).value; }
  double scalar(Var v) const { return node(v).value[0]; }
  OpKind op(Var v) const { return node(v).op; }

  bool has_grad(Var v) const { return node(v).requires_grad; }

  // Gradient of the last backward() seed w.r.t. v. Only nodes downstream of a
  // trainable leaf carry gradients.
  std::span<const double> grad(Var v) const {
    const Node& n = node(v);
    if (!n.requires_grad) throw std::logic_error("node has no gradient (not trainable)");
    if (!backward_done_) throw std::logic_error("grad requested before backward");
    return n.grad;
  }

  // Rebind the value of a leaf. Invalidates derived values until forward().
  void set_value(Var v, std::span<const double> data) {
    Node& n = node(v);
    if (n.op != OpKind::Leaf) throw std::logic_error("set_value on non-leaf node");
    if (data.size() != n.value.size()) throw ShapeError("set_value size mismatch");
    std::copy(data.begin(), data.end(), n.value.values().begin());
    stale_ = true;
    backward_done_ = false;
  }

  void set_value(Var v, const Tensor& t) { set_value(v, t.data()); }

  // Re-evaluate every derived node in recording order.
  void forward() {
    for (Node& n : nodes_) {
      if (n.op == OpKind::Leaf) {
        check_finite(n.value, OpKind::Leaf);
        continue;
      }
      eval(n);
    }
    stale_ = false;
    backward_done_ = false;
  }

  bool stale() const { return stale_; }

  // Reverse sweep from a scalar output. Gradients are overwritten, not
  // accumulated across calls.
  void backward(Var output, double seed = 1.0) {
    if (stale_) throw std::logic_error("backward before forward: leaf values changed");
    Node& out = node(output);
    if (out.value.size() != 1) throw ShapeError("backward seed must be a scalar node");
    for (Node& n : nodes_) {
      if (n.requires_grad) std::fill(n.grad.begin(), n.grad.end(), 0.0);
    }
    if (out.requires_grad) out.grad[0] = seed;
    for (std::size_t i = output.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || n.op == OpKind::Leaf) continue;
      propagate(n);
    }
    backward_done_ = true;
  }

 private:
  struct Node {
    OpKind op = OpKind::Leaf;
    std::vector<std::uint32_t> in;
    Tensor value;
    std::vector<double> grad;
    double c0 = 0.0;
    double c1 = 0.0;
    std::size_t s0 = 0;
    bool requires_grad = false;
  };

  Node& node(Var v) {
    if (v.tape != this || v.id >= nodes_.size()) throw std::out_of_range("Var from another tape");
    return nodes_[v.id];
  }
  const Node& node(Var v) const {
    if (v.tape != this || v.id >= nodes_.size()) throw std::out_of_range("Var from another tape");
    return nodes_[v.id];
  }

  Var push(Node n) {
    if (n.requires_grad) n.grad.assign(n.value.size(), 0.0);
    nodes_.push_back(std::move(n));
    backward_done_ = false;
    return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
  }

  Var binary(OpKind op, Var a, Var b) {
    if (value(a).size() != value(b).size()) {
      throw ShapeError(std::string(op_name(op)) + " shape mismatch " +
                       shape_str(value(a).shape()) + " vs " + shape_str(value(b).shape()));
    }
    return record(op, {a.id, b.id}, value(a).shape());
  }

  Var grouped(OpKind op, Var a, std::size_t group) {
    if (group == 0 || value(a).size() % group != 0) throw ShapeError("softmax group mismatch");
    return record(op, {a.id}, value(a).shape(), 0.0, 0.0, group);
  }

  Var record(OpKind op, std::vector<std::uint32_t> in, Shape shape, double c0 = 0.0,
             double c1 = 0.0, std::size_t s0 = 0) {
    if (stale_) throw std::logic_error("recording on a stale tape; call forward() first");
    Node n;
    n.op = op;
    n.c0 = c0;
    n.c1 = c1;
    n.s0 = s0;
    for (std::uint32_t id : in) {
      if (id >= nodes_.size()) throw std::logic_error("input node does not precede output");
      n.requires_grad = n.requires_grad || nodes_[id].requires_grad;
    }
    n.in = std::move(in);
    n.value = Tensor(std::move(shape));
    eval(n);
    return push(std::move(n));
  }

  static void check_finite(const Tensor& t, OpKind op) {
    if (!t.all_finite()) {
      throw NonFiniteError(std::string("non-finite value produced by ") + op_name(op));
    }
  }

  const std::vector<double>& in_value(const Node& n, std::size_t k) const {
    return nodes_[n.in[k]].value.values();
  }

  void eval(Node& n) {
    std::vector<double>& out = n.value.values();
    switch (n.op) {
      case OpKind::Leaf:
        break;
      case OpKind::MatMul: {
        const Tensor& a = nodes_[n.in[0]].value;
        const Tensor& b = nodes_[n.in[1]].value;
        const std::size_t m = a.rows(), k = a.cols(), c = b.cols();
        std::fill(out.begin(), out.end(), 0.0);
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t p = 0; p < k; ++p) {
            const double aip = a[i * k + p];
            for (std::size_t j = 0; j < c; ++j) out[i * c + j] += aip * b[p * c + j];
          }
        }
        break;
      }
      case OpKind::Affine: {
        const Tensor& w = nodes_[n.in[0]].value;
        const auto& x = in_value(n, 1);
        const auto& b = in_value(n, 2);
        const std::size_t m = w.rows(), k = w.cols();
        for (std::size_t i = 0; i < m; ++i) {
          double acc = b[i];
          const double* row = &w[i * k];
          for (std::size_t p = 0; p < k; ++p) acc += row[p] * x[p];
          out[i] = acc;
        }
        break;
      }
      case OpKind::Add: {
        const auto& a = in_value(n, 0);
        const auto& b = in_value(n, 1);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
        break;
      }
      case OpKind::Sub: {
        const auto& a = in_value(n, 0);
        const auto& b = in_value(n, 1);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
        break;
      }
      case OpKind::Mul: {
        const auto& a = in_value(n, 0);
        const auto& b = in_value(n, 1);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
        break;
      }
      case OpKind::Scale: {
        const auto& a = in_value(n, 0);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * n.c0;
        break;
      }
      case OpKind::AddScalar: {
        const auto& a = in_value(n, 0);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + n.c0;
        break;
      }
      case OpKind::Tanh: {
        const auto& a = in_value(n, 0);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(a[i]);
        break;
      }
      case OpKind::Exp: {
        const auto& a = in_value(n, 0);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(a[i]);
        break;
      }
      case OpKind::Log: {
        const auto& a = in_value(n, 0);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(a[i]);
        break;
      }
      case OpKind::Square: {
        const auto& a = in_value(n, 0);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * a[i];
        break;
      }
      case OpKind::Clamp: {
        const auto& a = in_value(n, 0);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(a[i], n.c0, n.c1);
        break;
      }
      case OpKind::Sum: {
        const auto& a = in_value(n, 0);
        double acc = 0.0;
        for (double v : a) acc += v;
        out[0] = acc;
        break;
      }
      case OpKind::Slice: {
        const auto& a = in_value(n, 0);
        std::copy_n(a.begin() + static_cast<std::ptrdiff_t>(n.s0), out.size(), out.begin());
        break;
      }
      case OpKind::Concat: {
        std::size_t off = 0;
        for (std::size_t k = 0; k < n.in.size(); ++k) {
          const auto& a = in_value(n, k);
          std::copy(a.begin(), a.end(), out.begin() + static_cast<std::ptrdiff_t>(off));
          off += a.size();
        }
        break;
      }
      case OpKind::Softmax:
      case OpKind::LogSoftmax: {
        const auto& a = in_value(n, 0);
        const std::size_t g = n.s0;
        for (std::size_t base = 0; base < a.size(); base += g) {
          double mx = -std::numeric_limits<double>::infinity();
          for (std::size_t j = 0; j < g; ++j) mx = std::max(mx, a[base + j]);
          double z = 0.0;
          for (std::size_t j = 0; j < g; ++j) z += std::exp(a[base + j] - mx);
          if (n.op == OpKind::Softmax) {
            for (std::size_t j = 0; j < g; ++j) out[base + j] = std::exp(a[base + j] - mx) / z;
          } else {
            const double lz = mx + std::log(z);
            for (std::size_t j = 0; j < g; ++j) out[base + j] = a[base + j] - lz;
          }
        }
        break;
      }
      case OpKind::Reshape: {
        const auto& a = in_value(n, 0);
        std::copy(a.begin(), a.end(), out.begin());
        break;
      }
    }
    check_finite(n.value, n.op);
  }

  std::vector<double>* grad_of(const Node& n, std::size_t k) {
    Node& in = nodes_[n.in[k]];
    return in.requires_grad ? &in.grad : nullptr;
  }

  void propagate(const Node& n) {
    const std::vector<double>& g = n.grad;
    const std::vector<double>& y = n.value.values();
    switch (n.op) {
      case OpKind::Leaf:
        break;
      case OpKind::MatMul: {
        const Tensor& a = nodes_[n.in[0]].value;
        const Tensor& b = nodes_[n.in[1]].value;
        const std::size_t m = a.rows(), k = a.cols(), c = b.cols();
        if (auto* ga = grad_of(n, 0)) {
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              double acc = 0.0;
              for (std::size_t j = 0; j < c; ++j) acc += g[i * c + j] * b[p * c + j];
              (*ga)[i * k + p] += acc;
            }
        }
        if (auto* gb = grad_of(n, 1)) {
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              const double aip = a[i * k + p];
              for (std::size_t j = 0; j < c; ++j) (*gb)[p * c + j] += aip * g[i * c + j];
            }
        }
        break;
      }
      case OpKind::Affine: {
        const Tensor& w = nodes_[n.in[0]].value;
        const auto& x = in_value(n, 1);
        const std::size_t m = w.rows(), k = w.cols();
        if (auto* gw = grad_of(n, 0)) {
          for (std::size_t i = 0; i < m; ++i) {
            const double gi = g[i];
            if (gi == 0.0) continue;
            double* row = &(*gw)[i * k];
            for (std::size_t p = 0; p < k; ++p) row[p] += gi * x[p];
          }
        }
        if (auto* gx = grad_of(n, 1)) {
          for (std::size_t i = 0; i < m; ++i) {
            const double gi = g[i];
            const double* row = &w[i * k];
            for (std::size_t p = 0; p < k; ++p) (*gx)[p] += row[p] * gi;
          }
        }
        if (auto* gb = grad_of(n, 2)) {
          for (std::size_t i = 0; i < m; ++i) (*gb)[i] += g[i];
        }
        break;
      }
      case OpKind::Add:
        if (auto* ga = grad_of(n, 0))
          for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
        if (auto* gb = grad_of(n, 1))
          for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i];
        break;
      case OpKind::Sub:
        if (auto* ga = grad_of(n, 0))
          for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
        if (auto* gb = grad_of(n, 1))
          for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] -= g[i];
        break;
      case OpKind::Mul: {
        const auto& a = in_value(n, 0);
        const auto& b = in_value(n, 1);
        if (auto* ga = grad_of(n, 0))
          for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * b[i];
        if (auto* gb = grad_of(n, 1))
          for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * a[i];
        break;
      }
      case OpKind::Scale:
        if (auto* ga = grad_of(n, 0))
          for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * n.c0;
        break;
      case OpKind::AddScalar:
      case OpKind::Reshape:
        if (auto* ga = grad_of(n, 0))
          for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
        break;
      case OpKind::Tanh:
        if (auto* ga = grad_of(n, 0))
          for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * (1.0 - y[i] * y[i]);
        break;
      case OpKind::Exp:
        if (auto* ga = grad_of(n, 0))
          for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * y[i];
        break;
      case OpKind::Log: {
        const auto& a = in_value(n, 0);
        if (auto* ga = grad_of(n, 0))
          for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] / a[i];
        break;
      }
      case OpKind::Square: {
        const auto& a = in_value(n, 0);
        if (auto* ga = grad_of(n, 0))
          for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += 2.0 * g[i] * a[i];
        break;
      }
      case OpKind::Clamp: {
        const auto& a = in_value(n, 0);
        if (auto* ga = grad_of(n, 0))
          for (std::size_t i = 0; i < g.size(); ++i)
            if (a[i] > n.c0 && a[i] < n.c1) (*ga)[i] += g[i];
        break;
      }
      case OpKind::Sum:
        if (auto* ga = grad_of(n, 0))
          for (double& v : *ga) v += g[0];
        break;
      case OpKind::Slice:
        if (auto* ga = grad_of(n, 0))
          for (std::size_t i = 0; i < g.size(); ++i) (*ga)[n.s0 + i] += g[i];
        break;
      case OpKind::Concat: {
        std::size_t off = 0;
        for (std::size_t k = 0; k < n.in.size(); ++k) {
          const std::size_t len = nodes_[n.in[k]].value.size();
          if (auto* ga = grad_of(n, k))
            for (std::size_t i = 0; i < len; ++i) (*ga)[i] += g[off + i];
          off += len;
        }
        break;
      }
      case OpKind::Softmax: {
        auto* ga = grad_of(n, 0);
        if (!ga) break;
        const std::size_t grp = n.s0;
        for (std::size_t base = 0; base < y.size(); base += grp) {
          double dot = 0.0;
          for (std::size_t j = 0; j < grp; ++j) dot += g[base + j] * y[base + j];
          for (std::size_t j = 0; j < grp; ++j)
            (*ga)[base + j] += y[base + j] * (g[base + j] - dot);
        }
        break;
      }
      case OpKind::LogSoftmax: {
        auto* ga = grad_of(n, 0);
        if (!ga) break;
        const std::size_t grp = n.s0;
        for (std::size_t base = 0; base < y.size(); base += grp) {
          double gsum = 0.0;
          for (std::size_t j = 0; j < grp; ++j) gsum += g[base + j];
          for (std::size_t j = 0; j < grp; ++j)
            (*ga)[base + j] += g[base + j] - std::exp(y[base + j]) * gsum;
        }
        break;
      }
    }
  }

  std::vector<Node> nodes_;
  bool stale_ = false;
  bool backward_done_ = false;
};

inline Var operator+(Var a, Var b) { return a.tape->add(a, b); }
inline Var operator-(Var a, Var b) { return a.tape->sub(a, b); }
inline Var operator*(Var a, Var b) { return a.tape->mul(a, b); }
inline Var operator*(Var a, double c) { return a.tape->scale(a, c); }
inline Var operator*(double c, Var a) { return a.tape->scale(a, c); }
inline Var operator+(Var a, double c) { return a.tape->add_scalar(a, c); }
inline Var operator-(Var a, double c) { return a.tape->add_scalar(a, -c); }

inline Var tanh(Var a) { return a.tape->tanh(a); }
inline Var exp(Var a) { return a.tape->exp(a); }
inline Var log(Var a) { return a.tape->log(a); }
inline Var square(Var a) { return a.tape->square(a); }
inline Var sum(Var a) { return a.tape->sum(a); }

}  // namespace kinaero::grad
