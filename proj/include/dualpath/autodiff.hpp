#pragma once

// Reverse-mode automatic differentiation over small dense tensors.
//
// Graphs are built eagerly: every op computes its value when it is created
// and remembers its inputs. `grad` walks the graph in reverse topological
// order. When called with create_graph = true the gradient computation is
// itself recorded, so gradients can be differentiated again (the critic's
// gradient penalty needs this).

#include <cstddef>
#include <memory>
#include <span>
#include <vector>

#include "dualpath/tensor.hpp"

namespace dualpath::ad {

enum class OpKind {
  leaf,
  constant,
  matmul,
  add,
  sub,
  mul,
  div,
  neg,
  relu,
  tanh,
  sigmoid,
  softmax,
  log_softmax,
  log,
  exp,
  sqrt,
  square,
  sum,
  sum_rows,
  sum_cols,
  mean,
  norm2,
  concat,
  slice,
  pad,
  scale,
  transpose,
  expand,
  reduce_to,
};

const char* op_name(OpKind op);

struct Node;

/// Handle to a node in the computation graph. Copies share the node.
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  const Tensor& value() const;
  /// Gradient accumulated by `backward`; zero-filled until then.
  const Tensor& grad() const;
  const Shape& shape() const;
  OpKind op() const;
  bool requires_grad() const;
  bool defined() const { return node_ != nullptr; }

  /// Replaces the value of a leaf; call `forward` on a root to propagate.
  void set_value(Tensor value);
  void zero_grad();

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& ptr() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

/// Disables graph recording on this thread for the guard's lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

Var leaf(Tensor value, bool requires_grad = true);
Var constant(Tensor value);
Var detach(const Var& x);

Var matmul(const Var& a, const Var& b);
Var transpose(const Var& x);

// Elementwise binary ops broadcast scalars, rows ([1,n] or {n}) and
// columns ([m,1]) against [m,n].
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var neg(const Var& x);
Var scale(const Var& x, double factor);

Var relu(const Var& x);
Var tanh(const Var& x);
Var sigmoid(const Var& x);
Var log(const Var& x);
Var exp(const Var& x);
Var sqrt(const Var& x);
Var square(const Var& x);

/// Row-wise softmax over the last dimension.
Var softmax(const Var& x);
Var log_softmax(const Var& x);

/// Sum of every element, shape {1}.
Var sum(const Var& x);
/// Sum over rows, [m,n] -> [1,n].
Var sum_rows(const Var& x);
/// Sum over columns, [m,n] -> [m,1].
Var sum_cols(const Var& x);
Var mean(const Var& x);
/// Row-wise Euclidean norm, [m,n] -> [m,1]. The gradient at a zero row is 0.
Var norm2(const Var& x);

/// Column-wise concatenation; all parts share the row count.
Var concat(std::span<const Var> parts);
/// Columns [begin, end).
Var slice(const Var& x, std::size_t begin, std::size_t end);
/// Embeds x at column offset `left` inside a zero tensor with `total` columns.
Var pad(const Var& x, std::size_t left, std::size_t total);
Var expand(const Var& x, const Shape& shape);
/// Sums a broadcast tensor back down to `shape`.
Var reduce_to(const Var& x, const Shape& shape);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator/(const Var& a, const Var& b) { return div(a, b); }
inline Var operator-(const Var& x) { return neg(x); }
inline Var operator*(const Var& x, double c) { return scale(x, c); }
inline Var operator*(double c, const Var& x) { return scale(x, c); }

/// Recomputes every node reachable from `root` from current leaf values.
Tensor forward(const Var& root);

/// d root / d wrt[i]. `root` must hold exactly one element. Inputs that do not
/// influence the root get a zero gradient.
std::vector<Var> grad(const Var& root, std::span<const Var> wrt, bool create_graph = false);

/// Accumulates d root / d leaf into every reachable leaf's grad().
void backward(const Var& root);

}  // namespace dualpath::ad
