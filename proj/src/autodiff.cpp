#include "dualpath/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "dualpath/errors.hpp"

namespace dualpath::ad {

struct Node {
  OpKind op = OpKind::constant;
  std::vector<std::shared_ptr<Node>> inputs;
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  // Op parameters.
  double factor = 1.0;
  std::size_t begin = 0;
  std::size_t end = 0;
  Shape target;
};

namespace {

thread_local bool g_grad_enabled = true;

[[noreturn]] void shape_fail(OpKind op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string("shape mismatch in ") + op_name(op) + ": " + to_string(a) + " vs " + to_string(b));
}

// --- value kernels --------------------------------------------------------

Tensor matmul_values(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  Tensor out({m, n});
  const double* ad = a.data().data();
  const double* bd = b.data().data();
  double* od = out.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* orow = od + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ad[i * k + p];
      if (av == 0.0) continue;
      const double* brow = bd + p * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  return out;
}

template <class F>
Tensor map_values(const Tensor& x, F f) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  return out;
}

template <class F>
Tensor zip_values(const Tensor& a, const Tensor& b, F f) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i], b[i]);
  return out;
}

Shape row_reduced(const Tensor& x) {
  return x.rank() == 2 ? Shape{1, x.cols()} : Shape{x.cols()};
}

Shape col_reduced(const Tensor& x) {
  return x.rank() == 2 ? Shape{x.rows(), 1} : Shape{1};
}

Shape with_cols(const Tensor& x, std::size_t cols) {
  return x.rank() == 2 ? Shape{x.rows(), cols} : Shape{cols};
}

bool broadcastable(const Shape& from, const Shape& to) {
  if (from == to) return true;
  if (numel(from) == 1) return true;
  const std::size_t fr = from.size() == 2 ? from[0] : 1, fc = from.back();
  const std::size_t tr = to.size() == 2 ? to[0] : 1, tc = to.back();
  return (fr == 1 || fr == tr) && (fc == 1 || fc == tc);
}

Tensor expand_values(const Tensor& x, const Shape& shape) {
  Tensor out(shape);
  const std::size_t r = out.rows(), c = out.cols();
  if (x.size() == 1) {
    std::fill(out.storage().begin(), out.storage().end(), x[0]);
    return out;
  }
  const std::size_t xr = x.rows(), xc = x.cols();
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out.at(i, j) = x.at(xr == 1 ? 0 : i, xc == 1 ? 0 : j);
  }
  return out;
}

Tensor reduce_values(const Tensor& g, const Shape& shape) {
  Tensor out(shape);
  if (out.size() == 1) {
    double s = 0.0;
    for (double v : g.data()) s += v;
    out[0] = s;
    return out;
  }
  const std::size_t r = g.rows(), c = g.cols();
  const std::size_t xr = out.rows(), xc = out.cols();
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out.at(xr == 1 ? 0 : i, xc == 1 ? 0 : j) += g.at(i, j);
  }
  return out;
}

void compute(Node& n) {
  auto in = [&](std::size_t i) -> const Tensor& { return n.inputs[i]->value; };
  switch (n.op) {
    case OpKind::leaf:
    case OpKind::constant:
      return;
    case OpKind::matmul:
      n.value = matmul_values(in(0), in(1));
      return;
    case OpKind::add:
      n.value = zip_values(in(0), in(1), [](double a, double b) { return a + b; });
      return;
    case OpKind::sub:
      n.value = zip_values(in(0), in(1), [](double a, double b) { return a - b; });
      return;
    case OpKind::mul:
      n.value = zip_values(in(0), in(1), [](double a, double b) { return a * b; });
      return;
    case OpKind::div:
      n.value = zip_values(in(0), in(1), [](double a, double b) { return a / b; });
      return;
    case OpKind::neg:
      n.value = map_values(in(0), [](double a) { return -a; });
      return;
    case OpKind::scale: {
      const double f = n.factor;
      n.value = map_values(in(0), [f](double a) { return a * f; });
      return;
    }
    case OpKind::relu:
      n.value = map_values(in(0), [](double a) { return a > 0.0 ? a : 0.0; });
      return;
    case OpKind::tanh:
      n.value = map_values(in(0), [](double a) { return std::tanh(a); });
      return;
    case OpKind::sigmoid:
      n.value = map_values(in(0), [](double a) {
        if (a >= 0) return 1.0 / (1.0 + std::exp(-a));
        const double e = std::exp(a);
        return e / (1.0 + e);
      });
      return;
    case OpKind::log:
      n.value = map_values(in(0), [](double a) { return std::log(a); });
      return;
    case OpKind::exp:
      n.value = map_values(in(0), [](double a) { return std::exp(a); });
      return;
    case OpKind::sqrt:
      n.value = map_values(in(0), [](double a) { return std::sqrt(a); });
      return;
    case OpKind::square:
      n.value = map_values(in(0), [](double a) { return a * a; });
      return;
    case OpKind::softmax:
    case OpKind::log_softmax: {
      const Tensor& x = in(0);
      Tensor out(x.shape());
      const std::size_t r = x.rows(), c = x.cols();
      for (std::size_t i = 0; i < r; ++i) {
        double mx = x.at(i, 0);
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, x.at(i, j));
        double z = 0.0;
        for (std::size_t j = 0; j < c; ++j) z += std::exp(x.at(i, j) - mx);
        if (n.op == OpKind::softmax) {
          for (std::size_t j = 0; j < c; ++j) out.at(i, j) = std::exp(x.at(i, j) - mx) / z;
        } else {
          const double lse = mx + std::log(z);
          for (std::size_t j = 0; j < c; ++j) out.at(i, j) = x.at(i, j) - lse;
        }
      }
      n.value = std::move(out);
      return;
    }
    case OpKind::sum: {
      double s = 0.0;
      for (double v : in(0).data()) s += v;
      n.value = Tensor::scalar(s);
      return;
    }
    case OpKind::mean: {
      double s = 0.0;
      for (double v : in(0).data()) s += v;
      n.value = Tensor::scalar(s / static_cast<double>(in(0).size()));
      return;
    }
    case OpKind::sum_rows: {
      const Tensor& x = in(0);
      Tensor out(row_reduced(x));
      for (std::size_t i = 0; i < x.rows(); ++i)
        for (std::size_t j = 0; j < x.cols(); ++j) out[j] += x.at(i, j);
      n.value = std::move(out);
      return;
    }
    case OpKind::sum_cols:
    case OpKind::norm2: {
      const Tensor& x = in(0);
      Tensor out(col_reduced(x));
      for (std::size_t i = 0; i < x.rows(); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < x.cols(); ++j) {
          const double v = x.at(i, j);
          s += n.op == OpKind::norm2 ? v * v : v;
        }
        out[i] = n.op == OpKind::norm2 ? std::sqrt(s) : s;
      }
      n.value = std::move(out);
      return;
    }
    case OpKind::concat: {
      std::size_t total = 0;
      for (const auto& p : n.inputs) total += p->value.cols();
      Tensor out(with_cols(in(0), total));
      std::size_t off = 0;
      for (const auto& p : n.inputs) {
        const Tensor& x = p->value;
        for (std::size_t i = 0; i < x.rows(); ++i)
          for (std::size_t j = 0; j < x.cols(); ++j) out.at(i, off + j) = x.at(i, j);
        off += x.cols();
      }
      n.value = std::move(out);
      return;
    }
    case OpKind::slice: {
      const Tensor& x = in(0);
      Tensor out(with_cols(x, n.end - n.begin));
      for (std::size_t i = 0; i < x.rows(); ++i)
        for (std::size_t j = n.begin; j < n.end; ++j) out.at(i, j - n.begin) = x.at(i, j);
      n.value = std::move(out);
      return;
    }
    case OpKind::pad: {
      const Tensor& x = in(0);
      Tensor out(with_cols(x, n.end));
      for (std::size_t i = 0; i < x.rows(); ++i)
        for (std::size_t j = 0; j < x.cols(); ++j) out.at(i, n.begin + j) = x.at(i, j);
      n.value = std::move(out);
      return;
    }
    case OpKind::transpose: {
      const Tensor& x = in(0);
      Tensor out({x.cols(), x.rows()});
      for (std::size_t i = 0; i < x.rows(); ++i)
        for (std::size_t j = 0; j < x.cols(); ++j) out.at(j, i) = x.at(i, j);
      n.value = std::move(out);
      return;
    }
    case OpKind::expand:
      n.value = expand_values(in(0), n.target);
      return;
    case OpKind::reduce_to:
      n.value = reduce_values(in(0), n.target);
      return;
  }
}

std::shared_ptr<Node> make_node(OpKind op, std::vector<std::shared_ptr<Node>> inputs) {
  auto n = std::make_shared<Node>();
  n->op = op;
  bool rg = false;
  for (const auto& p : inputs) rg = rg || p->requires_grad;
  n->requires_grad = rg && g_grad_enabled;
  n->inputs = std::move(inputs);
  return n;
}

Var finish(std::shared_ptr<Node> n) {
  compute(*n);
  // With recording disabled nothing will revisit this node: drop the inputs
  // so the graph does not keep intermediate tensors alive.
  if (!g_grad_enabled) {
    n->inputs.clear();
    n->op = OpKind::constant;
  }
  return Var(std::move(n));
}

Var unary(OpKind op, const Var& x) { return finish(make_node(op, {x.ptr()})); }

Var same_shape_binary(OpKind op, const Var& a, const Var& b) {
  if (a.shape() != b.shape()) shape_fail(op, a.shape(), b.shape());
  return finish(make_node(op, {a.ptr(), b.ptr()}));
}

Shape broadcast_shape(OpKind op, const Shape& a, const Shape& b) {
  if (a == b) return a;
  const std::size_t ar = a.size() == 2 ? a[0] : 1, ac = a.back();
  const std::size_t br = b.size() == 2 ? b[0] : 1, bc = b.back();
  const std::size_t r = std::max(ar, br), c = std::max(ac, bc);
  Shape out = (a.size() == 2 || b.size() == 2) ? Shape{r, c} : Shape{c};
  if (!broadcastable(a, out) || !broadcastable(b, out)) shape_fail(op, a, b);
  return out;
}

Var broadcast_binary(OpKind op, const Var& a, const Var& b) {
  const Shape out = broadcast_shape(op, a.shape(), b.shape());
  const Var ea = a.shape() == out ? a : expand(a, out);
  const Var eb = b.shape() == out ? b : expand(b, out);
  return same_shape_binary(op, ea, eb);
}

Var ones_like(const Tensor& t) { return constant(Tensor(t.shape(), 1.0)); }

// Gradient of each input given the upstream gradient `g`.
std::vector<Var> backprop(const std::shared_ptr<Node>& self, const Var& g) {
  const Var out(self);
  auto in = [&](std::size_t i) { return Var(self->inputs[i]); };
  switch (self->op) {
    case OpKind::leaf:
    case OpKind::constant:
      return {};
    case OpKind::matmul:
      return {matmul(g, transpose(in(1))), matmul(transpose(in(0)), g)};
    case OpKind::add:
      return {g, g};
    case OpKind::sub:
      return {g, neg(g)};
    case OpKind::mul:
      return {mul(g, in(1)), mul(g, in(0))};
    case OpKind::div:
      return {div(g, in(1)), neg(div(mul(g, out), in(1)))};
    case OpKind::neg:
      return {neg(g)};
    case OpKind::scale:
      return {scale(g, self->factor)};
    case OpKind::relu: {
      Tensor mask = map_values(self->inputs[0]->value, [](double a) { return a > 0.0 ? 1.0 : 0.0; });
      return {mul(g, constant(std::move(mask)))};
    }
    case OpKind::tanh:
      return {mul(g, sub(ones_like(self->value), square(out)))};
    case OpKind::sigmoid:
      return {mul(g, mul(out, sub(ones_like(self->value), out)))};
    case OpKind::log:
      return {div(g, in(0))};
    case OpKind::exp:
      return {mul(g, out)};
    case OpKind::sqrt:
      return {div(scale(g, 0.5), out)};
    case OpKind::square:
      return {scale(mul(g, in(0)), 2.0)};
    case OpKind::softmax:
      return {mul(out, sub(g, sum_cols(mul(g, out))))};
    case OpKind::log_softmax:
      return {sub(g, mul(exp(out), sum_cols(g)))};
    case OpKind::sum:
    case OpKind::sum_rows:
    case OpKind::sum_cols:
      return {expand(g, self->inputs[0]->value.shape())};
    case OpKind::mean:
      return {expand(scale(g, 1.0 / static_cast<double>(self->inputs[0]->value.size())),
                     self->inputs[0]->value.shape())};
    case OpKind::norm2: {
      // Rows with zero norm have x = 0 there, so dividing by 1 yields 0.
      Tensor zero_mask = map_values(self->value, [](double v) { return v == 0.0 ? 1.0 : 0.0; });
      const Var safe = add(out, constant(std::move(zero_mask)));
      return {mul(in(0), div(g, safe))};
    }
    case OpKind::concat: {
      std::vector<Var> grads;
      std::size_t off = 0;
      for (const auto& p : self->inputs) {
        const std::size_t w = p->value.cols();
        grads.push_back(slice(g, off, off + w));
        off += w;
      }
      return grads;
    }
    case OpKind::slice:
      return {pad(g, self->begin, self->inputs[0]->value.cols())};
    case OpKind::pad:
      return {slice(g, self->begin, self->begin + self->inputs[0]->value.cols())};
    case OpKind::transpose:
      return {transpose(g)};
    case OpKind::expand:
      return {reduce_to(g, self->inputs[0]->value.shape())};
    case OpKind::reduce_to:
      return {expand(g, self->inputs[0]->value.shape())};
  }
  return {};
}

std::vector<std::shared_ptr<Node>> topo_order(const std::shared_ptr<Node>& root) {
  std::vector<std::shared_ptr<Node>> order;
  std::unordered_map<const Node*, bool> seen;
  std::vector<std::pair<std::shared_ptr<Node>, std::size_t>> stack;
  stack.emplace_back(root, 0);
  seen[root.get()] = true;
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      auto child = node->inputs[next++];
      if (child->requires_grad && !seen[child.get()]) {
        seen[child.get()] = true;
        stack.emplace_back(std::move(child), 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

std::unordered_map<const Node*, Var> run_backward(const Var& root, bool create_graph) {
  if (root.value().size() != 1) {
    throw ContractError("backward requires a scalar root, got shape " + to_string(root.shape()));
  }
  std::unordered_map<const Node*, Var> grads;
  if (!root.requires_grad()) return grads;
  const bool prev = g_grad_enabled;
  g_grad_enabled = create_graph;
  try {
    const auto order = topo_order(root.ptr());
    grads[root.node()] = constant(Tensor(root.shape(), 1.0));
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      const auto& node = *it;
      auto found = grads.find(node.get());
      if (found == grads.end() || node->inputs.empty()) continue;
      const Var g = found->second;
      auto input_grads = backprop(node, g);
      for (std::size_t i = 0; i < input_grads.size(); ++i) {
        const auto& input = node->inputs[i];
        if (!input->requires_grad) continue;
        auto slot = grads.find(input.get());
        if (slot == grads.end()) {
          grads.emplace(input.get(), input_grads[i]);
        } else {
          slot->second = add(slot->second, input_grads[i]);
        }
      }
    }
  } catch (...) {
    g_grad_enabled = prev;
    throw;
  }
  g_grad_enabled = prev;
  return grads;
}

}  // namespace

const char* op_name(OpKind op) {
  switch (op) {
    case OpKind::leaf: return "leaf";
    case OpKind::constant: return "constant";
    case OpKind::matmul: return "matmul";
    case OpKind::add: return "add";
    case OpKind::sub: return "sub";
    case OpKind::mul: return "mul";
    case OpKind::div: return "div";
    case OpKind::neg: return "neg";
    case OpKind::relu: return "relu";
    case OpKind::tanh: return "tanh";
    case OpKind::sigmoid: return "sigmoid";
    case OpKind::softmax: return "softmax";
    case OpKind::log_softmax: return "log_softmax";
    case OpKind::log: return "log";
    case OpKind::exp: return "exp";
    case OpKind::sqrt: return "sqrt";
    case OpKind::square: return "square";
    case OpKind::sum: return "sum";
    case OpKind::sum_rows: return "sum_rows";
    case OpKind::sum_cols: return "sum_cols";
    case OpKind::mean: return "mean";
    case OpKind::norm2: return "norm2";
    case OpKind::concat: return "concat";
    case OpKind::slice: return "slice";
    case OpKind::pad: return "pad";
    case OpKind::scale: return "scale";
    case OpKind::transpose: return "transpose";
    case OpKind::expand: return "expand";
    case OpKind::reduce_to: return "reduce_to";
  }
  return "?";
}

const Tensor& Var::value() const { return node_->value; }

const Tensor& Var::grad() const {
  if (node_->grad.size() != node_->value.size()) node_->grad = Tensor(node_->value.shape());
  return node_->grad;
}

const Shape& Var::shape() const { return node_->value.shape(); }
OpKind Var::op() const { return node_->op; }
bool Var::requires_grad() const { return node_->requires_grad; }

void Var::set_value(Tensor value) {
  if (node_->op != OpKind::leaf && node_->op != OpKind::constant) {
    throw ContractError("set_value is only valid on leaves");
  }
  if (value.shape() != node_->value.shape()) shape_fail(OpKind::leaf, node_->value.shape(), value.shape());
  node_->value = std::move(value);
}

void Var::zero_grad() { node_->grad = Tensor(node_->value.shape()); }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

Var leaf(Tensor value, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->op = OpKind::leaf;
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  return Var(std::move(n));
}

Var constant(Tensor value) {
  auto n = std::make_shared<Node>();
  n->op = OpKind::constant;
  n->value = std::move(value);
  return Var(std::move(n));
}

Var detach(const Var& x) { return constant(x.value()); }

Var matmul(const Var& a, const Var& b) {
  if (a.value().rank() != 2 || b.value().rank() != 2 || a.shape()[1] != b.shape()[0]) {
    shape_fail(OpKind::matmul, a.shape(), b.shape());
  }
  return finish(make_node(OpKind::matmul, {a.ptr(), b.ptr()}));
}

Var transpose(const Var& x) {
  if (x.value().rank() != 2) throw ShapeError("transpose requires rank 2, got " + to_string(x.shape()));
  return unary(OpKind::transpose, x);
}

Var add(const Var& a, const Var& b) { return broadcast_binary(OpKind::add, a, b); }
Var sub(const Var& a, const Var& b) { return broadcast_binary(OpKind::sub, a, b); }
Var mul(const Var& a, const Var& b) { return broadcast_binary(OpKind::mul, a, b); }
Var div(const Var& a, const Var& b) { return broadcast_binary(OpKind::div, a, b); }
Var neg(const Var& x) { return unary(OpKind::neg, x); }

Var scale(const Var& x, double factor) {
  auto n = make_node(OpKind::scale, {x.ptr()});
  n->factor = factor;
  return finish(std::move(n));
}

Var relu(const Var& x) { return unary(OpKind::relu, x); }
Var tanh(const Var& x) { return unary(OpKind::tanh, x); }
Var sigmoid(const Var& x) { return unary(OpKind::sigmoid, x); }
Var log(const Var& x) { return unary(OpKind::log, x); }
Var exp(const Var& x) { return unary(OpKind::exp, x); }
Var sqrt(const Var& x) { return unary(OpKind::sqrt, x); }
Var square(const Var& x) { return unary(OpKind::square, x); }
Var softmax(const Var& x) { return unary(OpKind::softmax, x); }
Var log_softmax(const Var& x) { return unary(OpKind::log_softmax, x); }
Var sum(const Var& x) { return unary(OpKind::sum, x); }
Var sum_rows(const Var& x) { return unary(OpKind::sum_rows, x); }
Var sum_cols(const Var& x) { return unary(OpKind::sum_cols, x); }
Var mean(const Var& x) { return unary(OpKind::mean, x); }
Var norm2(const Var& x) { return unary(OpKind::norm2, x); }

Var concat(std::span<const Var> parts) {
  if (parts.empty()) throw ContractError("concat of zero tensors");
  std::vector<std::shared_ptr<Node>> inputs;
  for (const auto& p : parts) {
    if (p.value().rows() != parts[0].value().rows() || p.value().rank() != parts[0].value().rank()) {
      shape_fail(OpKind::concat, parts[0].shape(), p.shape());
    }
    inputs.push_back(p.ptr());
  }
  return finish(make_node(OpKind::concat, std::move(inputs)));
}

Var slice(const Var& x, std::size_t begin, std::size_t end) {
  if (begin >= end || end > x.value().cols()) {
    throw ShapeError("slice [" + std::to_string(begin) + "," + std::to_string(end) + ") out of range for " +
                     to_string(x.shape()));
  }
  auto n = make_node(OpKind::slice, {x.ptr()});
  n->begin = begin;
  n->end = end;
  return finish(std::move(n));
}

Var pad(const Var& x, std::size_t left, std::size_t total) {
  if (left + x.value().cols() > total) {
    throw ShapeError("pad of " + to_string(x.shape()) + " at " + std::to_string(left) + " exceeds " +
                     std::to_string(total) + " columns");
  }
  auto n = make_node(OpKind::pad, {x.ptr()});
  n->begin = left;
  n->end = total;
  return finish(std::move(n));
}

Var expand(const Var& x, const Shape& shape) {
  if (!broadcastable(x.shape(), shape)) shape_fail(OpKind::expand, x.shape(), shape);
  auto n = make_node(OpKind::expand, {x.ptr()});
  n->target = shape;
  return finish(std::move(n));
}

Var reduce_to(const Var& x, const Shape& shape) {
  if (!broadcastable(shape, x.shape())) shape_fail(OpKind::reduce_to, x.shape(), shape);
  auto n = make_node(OpKind::reduce_to, {x.ptr()});
  n->target = shape;
  return finish(std::move(n));
}

Tensor forward(const Var& root) {
  // Recompute in topological order over every node, including ones that do
  // not require gradients but still hold inputs.
  std::vector<Node*> order;
  std::unordered_map<const Node*, bool> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.node(), 0}};
  seen[root.node()] = true;
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (!seen[child]) {
        seen[child] = true;
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (Node* n : order) compute(*n);
  return root.value();
}

std::vector<Var> grad(const Var& root, std::span<const Var> wrt, bool create_graph) {
  auto grads = run_backward(root, create_graph);
  std::vector<Var> out;
  out.reserve(wrt.size());
  for (const auto& w : wrt) {
    auto it = grads.find(w.node());
    out.push_back(it != grads.end() ? it->second : constant(Tensor(w.shape())));
  }
  return out;
}

void backward(const Var& root) {
  auto grads = run_backward(root, false);
  for (auto& [node, g] : grads) {
    if (node->op != OpKind::leaf) continue;
    auto* n = const_cast<Node*>(node);
    if (n->grad.size() != n->value.size()) n->grad = Tensor(n->value.shape());
    for (std::size_t i = 0; i < n->grad.size(); ++i) n->grad[i] += g.value()[i];
  }
}

}  // namespace dualpath::ad
