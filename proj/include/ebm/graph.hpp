#pragma once

// Static computation graphs over dense tensors with reverse-mode differentiation.
//
// A Graph is built once per forward pass through the free functions below
// (matmul, softmax, layer_norm, ...). Every operand shape is validated when the
// node is created; leaf shapes are validated again when values are bound in
// evaluate(). Node ids are assigned in creation order, so operands always
// precede their consumers and the graph is acyclic by construction.

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "ebm/error.hpp"
#include "ebm/tensor.hpp"

namespace ebm {

enum class LeafKind { Parameter, Input };

enum class OpKind {
  Leaf,
  Constant,
  Add,
  Mul,
  MatMul,
  Transpose,
  Reshape,
  Concat,
  Slice,
  Exp,
  Log,
  Tanh,
  Relu,
  Softmax,
  LayerNorm,
  ReduceSum,
  ReduceMean,
  Scale,
};

inline const char* op_name(OpKind op) {
  switch (op) {
    case OpKind::Leaf: return "leaf";
    case OpKind::Constant: return "constant";
    case OpKind::Add: return "add";
    case OpKind::Mul: return "mul";
    case OpKind::MatMul: return "matmul";
    case OpKind::Transpose: return "transpose";
    case OpKind::Reshape: return "reshape";
    case OpKind::Concat: return "concat";
    case OpKind::Slice: return "slice";
    case OpKind::Exp: return "exp";
    case OpKind::Log: return "log";
    case OpKind::Tanh: return "tanh";
    case OpKind::Relu: return "relu";
    case OpKind::Softmax: return "softmax";
    case OpKind::LayerNorm: return "layer_norm";
    case OpKind::ReduceSum: return "reduce_sum";
    case OpKind::ReduceMean: return "reduce_mean";
    case OpKind::Scale: return "scale";
  }
  return "?";
}

template <typename Scalar>
class Graph;

// Handle to a node. The owning Graph must outlive the handle and must not move.
template <typename Scalar>
struct Var {
  Graph<Scalar>* graph = nullptr;
  int id = -1;

  const Shape& shape() const { return graph->node(id).shape; }
  bool valid() const { return graph != nullptr && id >= 0; }
};

template <typename Scalar>
class Graph {
 public:
  struct Node {
    OpKind op = OpKind::Leaf;
    std::vector<int> inputs;
    Shape shape;
    std::string name;  // leaves only
    LeafKind leaf_kind = LeafKind::Input;
    int axis = -1;
    std::size_t begin = 0;
    std::size_t end = 0;
    Scalar factor = Scalar(1);
    std::shared_ptr<const Tensor<Scalar>> constant;
  };

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var<Scalar> leaf(const std::string& name, Shape shape, LeafKind kind = LeafKind::Input) {
    if (leaf_ids_.count(name)) throw ShapeError("duplicate leaf '" + name + "'");
    Node n;
    n.op = OpKind::Leaf;
    n.shape = std::move(shape);
    n.name = name;
    n.leaf_kind = kind;
    int id = push(std::move(n));
    leaf_ids_.emplace(name, id);
    return {this, id};
  }

  // Returns the existing leaf of that name, creating it on first use.
  Var<Scalar> shared_leaf(const std::string& name, const Shape& shape, LeafKind kind) {
    auto it = leaf_ids_.find(name);
    if (it == leaf_ids_.end()) return leaf(name, shape, kind);
    if (nodes_[it->second].shape != shape)
      throw ShapeError("leaf '" + name + "' redeclared with shape " + shape_string(shape));
    return {this, it->second};
  }

  Var<Scalar> constant(Tensor<Scalar> value) {
    Node n;
    n.op = OpKind::Constant;
    n.shape = value.shape();
    n.constant = std::make_shared<const Tensor<Scalar>>(std::move(value));
    return {this, push(std::move(n))};
  }

  Var<Scalar> append(Node n) { return {this, push(std::move(n))}; }

  const Node& node(int id) const { return nodes_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const { return nodes_.size(); }

  int find_leaf(const std::string& name) const {
    auto it = leaf_ids_.find(name);
    return it == leaf_ids_.end() ? -1 : it->second;
  }

  std::vector<std::string> leaf_names(LeafKind kind) const {
    std::vector<std::string> names;
    for (const auto& n : nodes_)
      if (n.op == OpKind::Leaf && n.leaf_kind == kind) names.push_back(n.name);
    return names;
  }

  std::string describe(int id) const {
    const Node& n = node(id);
    std::string s = "node " + std::to_string(id) + " (" + op_name(n.op);
    if (n.op == OpKind::Leaf) s += " '" + n.name + "'";
    return s + ")";
  }

 private:
  int push(Node n) {
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
  std::unordered_map<std::string, int> leaf_ids_;
};

// Name -> tensor bindings for graph leaves. Tensors bound with bind() are
// referenced, not copied, and must outlive the evaluation.
template <typename Scalar>
class LeafValues {
 public:
  void bind(const std::string& name, const Tensor<Scalar>& value) { refs_[name] = &value; }
  void set(const std::string& name, Tensor<Scalar> value) {
    owned_.push_back(std::move(value));
    refs_[name] = &owned_.back();
  }
  const Tensor<Scalar>* find(const std::string& name) const {
    auto it = refs_.find(name);
    return it == refs_.end() ? nullptr : it->second;
  }

 private:
  std::unordered_map<std::string, const Tensor<Scalar>*> refs_;
  std::deque<Tensor<Scalar>> owned_;
};

// Forward values of every node in a graph.
template <typename Scalar>
class Evaluation {
 public:
  const Tensor<Scalar>& operator[](int id) const { return *refs_.at(static_cast<std::size_t>(id)); }
  const Tensor<Scalar>& operator[](Var<Scalar> v) const { return (*this)[v.id]; }
  std::size_t size() const { return refs_.size(); }

 private:
  template <typename S>
  friend Evaluation<S> evaluate(const Graph<S>&, const LeafValues<S>&);

  std::vector<const Tensor<Scalar>*> refs_;
  std::deque<Tensor<Scalar>> owned_;
};

namespace detail {

template <typename Scalar>
Var<Scalar> same_graph(Var<Scalar> a, Var<Scalar> b) {
  if (!a.valid() || !b.valid() || a.graph != b.graph)
    throw ShapeError("operands belong to different graphs");
  return a;
}

template <typename Scalar>
[[noreturn]] void shape_fail(const Graph<Scalar>& g, OpKind op, const std::string& what) {
  throw ShapeError("node " + std::to_string(g.size()) + " (" + op_name(op) + "): " + what);
}

// Splits a shape around an axis into (outer, length, inner) extents.
struct AxisSplit {
  std::size_t outer = 1, length = 1, inner = 1;
};

inline AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.length = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

inline std::size_t resolve_axis(int axis, std::size_t rank) {
  int r = static_cast<int>(rank);
  int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) throw ShapeError("axis " + std::to_string(axis) + " out of range for rank " + std::to_string(rank));
  return static_cast<std::size_t>(a);
}

template <typename Scalar>
Var<Scalar> unary(Var<Scalar> x, OpKind op) {
  typename Graph<Scalar>::Node n;
  n.op = op;
  n.inputs = {x.id};
  n.shape = x.shape();
  return x.graph->append(std::move(n));
}

}  // namespace detail

// ---- graph-building free functions ----------------------------------------

template <typename Scalar>
Var<Scalar> add(Var<Scalar> a, Var<Scalar> b) {
  auto& g = *detail::same_graph(a, b).graph;
  if (a.shape() != b.shape())
    detail::shape_fail(g, OpKind::Add, "operand shapes " + shape_string(a.shape()) + " and " + shape_string(b.shape()) + " differ");
  typename Graph<Scalar>::Node n;
  n.op = OpKind::Add;
  n.inputs = {a.id, b.id};
  n.shape = a.shape();
  return g.append(std::move(n));
}

// Elementwise product; either operand may be a rank-0 scalar.
template <typename Scalar>
Var<Scalar> mul(Var<Scalar> a, Var<Scalar> b) {
  auto& g = *detail::same_graph(a, b).graph;
  typename Graph<Scalar>::Node n;
  n.op = OpKind::Mul;
  n.inputs = {a.id, b.id};
  if (a.shape() == b.shape()) {
    n.shape = a.shape();
  } else if (a.shape().empty()) {
    n.shape = b.shape();
  } else if (b.shape().empty()) {
    n.shape = a.shape();
  } else {
    detail::shape_fail(g, OpKind::Mul, "operand shapes " + shape_string(a.shape()) + " and " + shape_string(b.shape()) + " differ");
  }
  return g.append(std::move(n));
}

template <typename Scalar>
Var<Scalar> scale(Var<Scalar> x, Scalar factor) {
  auto n = typename Graph<Scalar>::Node{};
  n.op = OpKind::Scale;
  n.inputs = {x.id};
  n.shape = x.shape();
  n.factor = factor;
  return x.graph->append(std::move(n));
}

template <typename Scalar>
Var<Scalar> matmul(Var<Scalar> a, Var<Scalar> b) {
  auto& g = *detail::same_graph(a, b).graph;
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0])
    detail::shape_fail(g, OpKind::MatMul, "cannot contract " + shape_string(sa) + " with " + shape_string(sb));
  typename Graph<Scalar>::Node n;
  n.op = OpKind::MatMul;
  n.inputs = {a.id, b.id};
  n.shape = {sa[0], sb[1]};
  return g.append(std::move(n));
}

template <typename Scalar>
Var<Scalar> transpose(Var<Scalar> x) {
  if (x.shape().size() != 2) detail::shape_fail(*x.graph, OpKind::Transpose, "needs rank 2, got " + shape_string(x.shape()));
  auto n = typename Graph<Scalar>::Node{};
  n.op = OpKind::Transpose;
  n.inputs = {x.id};
  n.shape = {x.shape()[1], x.shape()[0]};
  return x.graph->append(std::move(n));
}

template <typename Scalar>
Var<Scalar> reshape(Var<Scalar> x, Shape shape) {
  if (shape_size(shape) != shape_size(x.shape()))
    detail::shape_fail(*x.graph, OpKind::Reshape, "cannot reshape " + shape_string(x.shape()) + " to " + shape_string(shape));
  for (auto d : shape)
    if (d == 0) detail::shape_fail(*x.graph, OpKind::Reshape, "zero dimension in " + shape_string(shape));
  auto n = typename Graph<Scalar>::Node{};
  n.op = OpKind::Reshape;
  n.inputs = {x.id};
  n.shape = std::move(shape);
  return x.graph->append(std::move(n));
}

template <typename Scalar>
Var<Scalar> concat(const std::vector<Var<Scalar>>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat of zero operands");
  auto& g = *parts.front().graph;
  const Shape& first = parts.front().shape();
  std::size_t ax = detail::resolve_axis(axis, first.size());
  Shape out = first;
  out[ax] = 0;
  typename Graph<Scalar>::Node n;
  for (const auto& p : parts) {
    detail::same_graph(parts.front(), p);
    Shape s = p.shape();
    if (s.size() != first.size()) detail::shape_fail(g, OpKind::Concat, "rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i)
      if (i != ax && s[i] != first[i])
        detail::shape_fail(g, OpKind::Concat, "shape " + shape_string(s) + " incompatible with " + shape_string(first));
    out[ax] += s[ax];
    n.inputs.push_back(p.id);
  }
  n.op = OpKind::Concat;
  n.axis = static_cast<int>(ax);
  n.shape = std::move(out);
  return g.append(std::move(n));
}

// Half-open range [begin, end) along an axis.
template <typename Scalar>
Var<Scalar> slice(Var<Scalar> x, int axis, std::size_t begin, std::size_t end) {
  std::size_t ax = detail::resolve_axis(axis, x.shape().size());
  if (begin >= end || end > x.shape()[ax])
    detail::shape_fail(*x.graph, OpKind::Slice,
                       "range [" + std::to_string(begin) + "," + std::to_string(end) + ") invalid for " + shape_string(x.shape()));
  auto n = typename Graph<Scalar>::Node{};
  n.op = OpKind::Slice;
  n.inputs = {x.id};
  n.axis = static_cast<int>(ax);
  n.begin = begin;
  n.end = end;
  n.shape = x.shape();
  n.shape[ax] = end - begin;
  return x.graph->append(std::move(n));
}

template <typename Scalar> Var<Scalar> exp(Var<Scalar> x) { return detail::unary(x, OpKind::Exp); }
template <typename Scalar> Var<Scalar> log(Var<Scalar> x) { return detail::unary(x, OpKind::Log); }
template <typename Scalar> Var<Scalar> tanh(Var<Scalar> x) { return detail::unary(x, OpKind::Tanh); }
template <typename Scalar> Var<Scalar> relu(Var<Scalar> x) { return detail::unary(x, OpKind::Relu); }

template <typename Scalar>
Var<Scalar> softmax(Var<Scalar> x, int axis) {
  if (x.shape().empty()) detail::shape_fail(*x.graph, OpKind::Softmax, "needs rank >= 1");
  auto n = typename Graph<Scalar>::Node{};
  n.op = OpKind::Softmax;
  n.inputs = {x.id};
  n.axis = static_cast<int>(detail::resolve_axis(axis, x.shape().size()));
  n.shape = x.shape();
  return x.graph->append(std::move(n));
}

// Normalizes each slice along the last axis to zero mean and unit variance.
template <typename Scalar>
Var<Scalar> layer_norm(Var<Scalar> x, Scalar epsilon = Scalar(1e-5)) {
  if (x.shape().empty()) detail::shape_fail(*x.graph, OpKind::LayerNorm, "needs rank >= 1");
  auto n = typename Graph<Scalar>::Node{};
  n.op = OpKind::LayerNorm;
  n.inputs = {x.id};
  n.factor = epsilon;
  n.shape = x.shape();
  return x.graph->append(std::move(n));
}

namespace detail {
template <typename Scalar>
Var<Scalar> reduce(Var<Scalar> x, OpKind op, std::optional<int> axis) {
  auto n = typename Graph<Scalar>::Node{};
  n.op = op;
  n.inputs = {x.id};
  if (!axis) {
    n.axis = -1;
    n.shape = {};
  } else {
    std::size_t ax = resolve_axis(*axis, x.shape().size());
    n.axis = static_cast<int>(ax);
    n.shape = x.shape();
    n.shape.erase(n.shape.begin() + static_cast<std::ptrdiff_t>(ax));
  }
  return x.graph->append(std::move(n));
}
}  // namespace detail

// Without an axis the result is a rank-0 scalar.
template <typename Scalar>
Var<Scalar> reduce_sum(Var<Scalar> x, std::optional<int> axis = std::nullopt) {
  return detail::reduce(x, OpKind::ReduceSum, axis);
}
template <typename Scalar>
Var<Scalar> reduce_mean(Var<Scalar> x, std::optional<int> axis = std::nullopt) {
  return detail::reduce(x, OpKind::ReduceMean, axis);
}

template <typename Scalar> Var<Scalar> operator+(Var<Scalar> a, Var<Scalar> b) { return add(a, b); }
template <typename Scalar> Var<Scalar> operator-(Var<Scalar> a) { return scale(a, Scalar(-1)); }
template <typename Scalar> Var<Scalar> operator-(Var<Scalar> a, Var<Scalar> b) { return add(a, scale(b, Scalar(-1))); }
template <typename Scalar> Var<Scalar> operator*(Var<Scalar> a, Var<Scalar> b) { return mul(a, b); }
template <typename Scalar> Var<Scalar> operator*(Scalar s, Var<Scalar> a) { return scale(a, s); }

// softplus(z) = relu(z) + log(1 + exp(-|z|)), which never overflows.
template <typename Scalar>
Var<Scalar> softplus(Var<Scalar> z) {
  Graph<Scalar>& g = *z.graph;
  Var<Scalar> abs_z = relu(z) + relu(-z);
  Var<Scalar> one = g.constant(Tensor<Scalar>::constant(z.shape(), Scalar(1)));
  return relu(z) + log(one + exp(-abs_z));
}

// ---- forward evaluation ------------------------------------------------------

template <typename Scalar>
Evaluation<Scalar> evaluate(const Graph<Scalar>& graph, const LeafValues<Scalar>& leaves) {
  using T = Tensor<Scalar>;
  Evaluation<Scalar> ev;
  ev.refs_.resize(graph.size(), nullptr);
  auto in = [&](const typename Graph<Scalar>::Node& n, std::size_t k) -> const T& {
    return *ev.refs_[static_cast<std::size_t>(n.inputs[k])];
  };

  for (std::size_t id = 0; id < graph.size(); ++id) {
    const auto& n = graph.node(static_cast<int>(id));
    if (n.op == OpKind::Leaf) {
      const T* v = leaves.find(n.name);
      if (!v) throw Error("unbound leaf '" + n.name + "' at " + graph.describe(static_cast<int>(id)));
      if (v->shape() != n.shape)
        throw ShapeError(graph.describe(static_cast<int>(id)) + " expects shape " + shape_string(n.shape) +
                         ", bound value has " + shape_string(v->shape()));
      ev.refs_[id] = v;
      continue;
    }
    if (n.op == OpKind::Constant) {
      ev.refs_[id] = n.constant.get();
      continue;
    }
    if (n.op == OpKind::Reshape) {
      ev.owned_.push_back(in(n, 0).reshaped(n.shape));
      ev.refs_[id] = &ev.owned_.back();
      continue;
    }

    T out(n.shape);
    switch (n.op) {
      case OpKind::Add:
        out.vec() = in(n, 0).vec() + in(n, 1).vec();
        break;
      case OpKind::Mul: {
        const T& a = in(n, 0);
        const T& b = in(n, 1);
        if (a.shape() == b.shape())
          out.array() = a.array() * b.array();
        else if (a.shape().empty())
          out.vec() = a.item() * b.vec();
        else
          out.vec() = b.item() * a.vec();
        break;
      }
      case OpKind::Scale:
        out.vec() = n.factor * in(n, 0).vec();
        break;
      case OpKind::MatMul:
        out.matrix().noalias() = in(n, 0).matrix() * in(n, 1).matrix();
        break;
      case OpKind::Transpose:
        out.matrix() = in(n, 0).matrix().transpose();
        break;
      case OpKind::Concat: {
        auto split = detail::split_axis(n.shape, static_cast<std::size_t>(n.axis));
        std::size_t offset = 0;
        for (std::size_t k = 0; k < n.inputs.size(); ++k) {
          const T& p = in(n, k);
          std::size_t len = p.shape()[static_cast<std::size_t>(n.axis)];
          std::size_t block = len * split.inner;
          for (std::size_t o = 0; o < split.outer; ++o)
            std::copy_n(p.data() + o * block, block, out.data() + o * split.length * split.inner + offset * split.inner);
          offset += len;
        }
        break;
      }
      case OpKind::Slice: {
        const T& x = in(n, 0);
        auto split = detail::split_axis(x.shape(), static_cast<std::size_t>(n.axis));
        std::size_t block = (n.end - n.begin) * split.inner;
        for (std::size_t o = 0; o < split.outer; ++o)
          std::copy_n(x.data() + o * split.length * split.inner + n.begin * split.inner, block, out.data() + o * block);
        break;
      }
      case OpKind::Exp:
        out.array() = in(n, 0).array().exp();
        break;
      case OpKind::Log:
        out.array() = in(n, 0).array().log();
        break;
      case OpKind::Tanh:
        out.array() = in(n, 0).array().tanh();
        break;
      case OpKind::Relu:
        out.array() = in(n, 0).array().max(Scalar(0));
        break;
      case OpKind::Softmax: {
        const T& x = in(n, 0);
        auto split = detail::split_axis(x.shape(), static_cast<std::size_t>(n.axis));
        for (std::size_t o = 0; o < split.outer; ++o)
          for (std::size_t i = 0; i < split.inner; ++i) {
            std::size_t base = o * split.length * split.inner + i;
            Scalar mx = -std::numeric_limits<Scalar>::infinity();
            for (std::size_t k = 0; k < split.length; ++k) mx = std::max(mx, x[base + k * split.inner]);
            Scalar total = 0;
            for (std::size_t k = 0; k < split.length; ++k) {
              Scalar e = std::exp(x[base + k * split.inner] - mx);
              out[base + k * split.inner] = e;
              total += e;
            }
            for (std::size_t k = 0; k < split.length; ++k) out[base + k * split.inner] /= total;
          }
        break;
      }
      case OpKind::LayerNorm: {
        const T& x = in(n, 0);
        std::size_t len = x.shape().back();
        std::size_t rows = x.size() / len;
        for (std::size_t r = 0; r < rows; ++r) {
          const Scalar* src = x.data() + r * len;
          Scalar* dst = out.data() + r * len;
          Scalar mean = 0;
          for (std::size_t k = 0; k < len; ++k) mean += src[k];
          mean /= static_cast<Scalar>(len);
          Scalar var = 0;
          for (std::size_t k = 0; k < len; ++k) var += (src[k] - mean) * (src[k] - mean);
          var /= static_cast<Scalar>(len);
          Scalar inv = Scalar(1) / std::sqrt(var + n.factor);
          for (std::size_t k = 0; k < len; ++k) dst[k] = (src[k] - mean) * inv;
        }
        break;
      }
      case OpKind::ReduceSum:
      case OpKind::ReduceMean: {
        const T& x = in(n, 0);
        if (n.axis < 0) {
          out[0] = x.vec().sum();
          if (n.op == OpKind::ReduceMean) out[0] /= static_cast<Scalar>(x.size());
        } else {
          auto split = detail::split_axis(x.shape(), static_cast<std::size_t>(n.axis));
          for (std::size_t o = 0; o < split.outer; ++o)
            for (std::size_t i = 0; i < split.inner; ++i) {
              Scalar acc = 0;
              for (std::size_t k = 0; k < split.length; ++k) acc += x[(o * split.length + k) * split.inner + i];
              if (n.op == OpKind::ReduceMean) acc /= static_cast<Scalar>(split.length);
              out[o * split.inner + i] = acc;
            }
        }
        break;
      }
      default:
        throw Error("unhandled op at " + graph.describe(static_cast<int>(id)));
    }
    ev.owned_.push_back(std::move(out));
    ev.refs_[id] = &ev.owned_.back();
  }
  return ev;
}

// ---- reverse mode ------------------------------------------------------------

// Exact reverse-mode gradients of a scalar node with respect to named leaves.
// Leaves with no path to the output receive a zero tensor of their shape.
template <typename Scalar>
std::map<std::string, Tensor<Scalar>> gradients(const Graph<Scalar>& graph, const Evaluation<Scalar>& values,
                                                Var<Scalar> output, const std::vector<std::string>& wrt) {
  using T = Tensor<Scalar>;
  if (shape_size(output.shape()) != 1)
    throw ShapeError("gradient output " + graph.describe(output.id) + " is not scalar: " + shape_string(output.shape()));
  if (values.size() != graph.size()) throw Error("evaluation does not belong to this graph");

  const std::size_t count = static_cast<std::size_t>(output.id) + 1;
  std::vector<char> needs(count, 0);
  std::set<int> targets;
  for (const auto& name : wrt) {
    int id = graph.find_leaf(name);
    if (id < 0) throw Error("no leaf named '" + name + "'");
    targets.insert(id);
    if (static_cast<std::size_t>(id) < count) needs[static_cast<std::size_t>(id)] = 1;
  }
  for (std::size_t id = 0; id < count; ++id) {
    for (int in : graph.node(static_cast<int>(id)).inputs)
      if (needs[static_cast<std::size_t>(in)]) needs[id] = 1;
  }

  std::vector<T> adj(count);
  std::vector<char> has(count, 0);
  auto accumulate = [&](int id, auto&& fill) {
    auto k = static_cast<std::size_t>(id);
    if (!needs[k]) return;
    if (!has[k]) {
      adj[k] = T(graph.node(id).shape);
      has[k] = 1;
    }
    fill(adj[k]);
  };

  if (needs[count - 1]) {
    adj[count - 1] = T::constant(output.shape(), Scalar(1));
    has[count - 1] = 1;
  }

  for (std::size_t rid = count; rid-- > 0;) {
    if (!has[rid]) continue;
    const auto& n = graph.node(static_cast<int>(rid));
    const T& g = adj[rid];
    const T& y = values[static_cast<int>(rid)];
    auto x = [&](std::size_t k) -> const T& { return values[n.inputs[k]]; };
    switch (n.op) {
      case OpKind::Leaf:
      case OpKind::Constant:
        break;
      case OpKind::Add:
        accumulate(n.inputs[0], [&](T& a) { a.vec() += g.vec(); });
        accumulate(n.inputs[1], [&](T& a) { a.vec() += g.vec(); });
        break;
      case OpKind::Mul: {
        const T& a = x(0);
        const T& b = x(1);
        if (a.shape() == b.shape()) {
          accumulate(n.inputs[0], [&](T& d) { d.array() += g.array() * b.array(); });
          accumulate(n.inputs[1], [&](T& d) { d.array() += g.array() * a.array(); });
        } else if (a.shape().empty()) {
          accumulate(n.inputs[0], [&](T& d) { d[0] += g.vec().dot(b.vec()); });
          accumulate(n.inputs[1], [&](T& d) { d.vec() += a.item() * g.vec(); });
        } else {
          accumulate(n.inputs[0], [&](T& d) { d.vec() += b.item() * g.vec(); });
          accumulate(n.inputs[1], [&](T& d) { d[0] += g.vec().dot(a.vec()); });
        }
        break;
      }
      case OpKind::Scale:
        accumulate(n.inputs[0], [&](T& d) { d.vec() += n.factor * g.vec(); });
        break;
      case OpKind::MatMul:
        accumulate(n.inputs[0], [&](T& d) { d.matrix().noalias() += g.matrix() * x(1).matrix().transpose(); });
        accumulate(n.inputs[1], [&](T& d) { d.matrix().noalias() += x(0).matrix().transpose() * g.matrix(); });
        break;
      case OpKind::Transpose:
        accumulate(n.inputs[0], [&](T& d) { d.matrix() += g.matrix().transpose(); });
        break;
      case OpKind::Reshape:
        accumulate(n.inputs[0], [&](T& d) { d.vec() += g.vec(); });
        break;
      case OpKind::Concat: {
        auto split = detail::split_axis(n.shape, static_cast<std::size_t>(n.axis));
        std::size_t offset = 0;
        for (std::size_t k = 0; k < n.inputs.size(); ++k) {
          std::size_t len = x(k).shape()[static_cast<std::size_t>(n.axis)];
          std::size_t block = len * split.inner;
          accumulate(n.inputs[k], [&](T& d) {
            for (std::size_t o = 0; o < split.outer; ++o) {
              const Scalar* src = g.data() + o * split.length * split.inner + offset * split.inner;
              Scalar* dst = d.data() + o * block;
              for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
            }
          });
          offset += len;
        }
        break;
      }
      case OpKind::Slice: {
        auto split = detail::split_axis(x(0).shape(), static_cast<std::size_t>(n.axis));
        std::size_t block = (n.end - n.begin) * split.inner;
        accumulate(n.inputs[0], [&](T& d) {
          for (std::size_t o = 0; o < split.outer; ++o) {
            Scalar* dst = d.data() + o * split.length * split.inner + n.begin * split.inner;
            const Scalar* src = g.data() + o * block;
            for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
          }
        });
        break;
      }
      case OpKind::Exp:
        accumulate(n.inputs[0], [&](T& d) { d.array() += g.array() * y.array(); });
        break;
      case OpKind::Log:
        accumulate(n.inputs[0], [&](T& d) { d.array() += g.array() / x(0).array(); });
        break;
      case OpKind::Tanh:
        accumulate(n.inputs[0], [&](T& d) { d.array() += g.array() * (Scalar(1) - y.array().square()); });
        break;
      case OpKind::Relu:
        // Subgradient 1/2 at zero keeps |z| = relu(z) + relu(-z) symmetric there.
        accumulate(n.inputs[0], [&](T& d) {
          const T& in = x(0);
          for (std::size_t i = 0; i < d.size(); ++i) {
            Scalar v = in[i];
            d[i] += g[i] * (v > 0 ? Scalar(1) : (v < 0 ? Scalar(0) : Scalar(0.5)));
          }
        });
        break;
      case OpKind::Softmax: {
        auto split = detail::split_axis(n.shape, static_cast<std::size_t>(n.axis));
        accumulate(n.inputs[0], [&](T& d) {
          for (std::size_t o = 0; o < split.outer; ++o)
            for (std::size_t i = 0; i < split.inner; ++i) {
              std::size_t base = o * split.length * split.inner + i;
              Scalar dot = 0;
              for (std::size_t k = 0; k < split.length; ++k) dot += g[base + k * split.inner] * y[base + k * split.inner];
              for (std::size_t k = 0; k < split.length; ++k) {
                std::size_t idx = base + k * split.inner;
                d[idx] += y[idx] * (g[idx] - dot);
              }
            }
        });
        break;
      }
      case OpKind::LayerNorm: {
        const T& in = x(0);
        std::size_t len = in.shape().back();
        std::size_t rows = in.size() / len;
        accumulate(n.inputs[0], [&](T& d) {
          for (std::size_t r = 0; r < rows; ++r) {
            const Scalar* src = in.data() + r * len;
            const Scalar* yr = y.data() + r * len;
            const Scalar* gr = g.data() + r * len;
            Scalar mean = 0;
            for (std::size_t k = 0; k < len; ++k) mean += src[k];
            mean /= static_cast<Scalar>(len);
            Scalar var = 0;
            for (std::size_t k = 0; k < len; ++k) var += (src[k] - mean) * (src[k] - mean);
            var /= static_cast<Scalar>(len);
            Scalar inv = Scalar(1) / std::sqrt(var + n.factor);
            Scalar g_mean = 0, gy_mean = 0;
            for (std::size_t k = 0; k < len; ++k) {
              g_mean += gr[k];
              gy_mean += gr[k] * yr[k];
            }
            g_mean /= static_cast<Scalar>(len);
            gy_mean /= static_cast<Scalar>(len);
            Scalar* dr = d.data() + r * len;
            for (std::size_t k = 0; k < len; ++k) dr[k] += inv * (gr[k] - g_mean - yr[k] * gy_mean);
          }
        });
        break;
      }
      case OpKind::ReduceSum:
      case OpKind::ReduceMean: {
        const T& in = x(0);
        if (n.axis < 0) {
          Scalar s = g[0];
          if (n.op == OpKind::ReduceMean) s /= static_cast<Scalar>(in.size());
          accumulate(n.inputs[0], [&](T& d) { d.array() += s; });
        } else {
          auto split = detail::split_axis(in.shape(), static_cast<std::size_t>(n.axis));
          Scalar div = n.op == OpKind::ReduceMean ? static_cast<Scalar>(split.length) : Scalar(1);
          accumulate(n.inputs[0], [&](T& d) {
            for (std::size_t o = 0; o < split.outer; ++o)
              for (std::size_t k = 0; k < split.length; ++k)
                for (std::size_t i = 0; i < split.inner; ++i)
                  d[(o * split.length + k) * split.inner + i] += g[o * split.inner + i] / div;
          });
        }
        break;
      }
    }
  }

  std::map<std::string, T> result;
  for (const auto& name : wrt) {
    int id = graph.find_leaf(name);
    auto k = static_cast<std::size_t>(id);
    if (k < count && has[k])
      result.emplace(name, std::move(adj[k]));
    else
      result.emplace(name, T(graph.node(id).shape));
  }
  return result;
}

// Central-difference check of d(output)/d(leaf). Returns the maximum over
// coordinates of |g_ad - g_fd| / max(1e-12, |g_ad| + |g_fd|).
template <typename Scalar>
Scalar finite_difference_check(const Graph<Scalar>& graph, const LeafValues<Scalar>& leaves, Var<Scalar> output,
                               const std::string& leaf, Scalar epsilon) {
  if (!(epsilon > Scalar(1e-8) && epsilon < Scalar(1e-2)))
    throw Error("finite-difference epsilon must lie in (1e-8, 1e-2)");
  const Tensor<Scalar>* base = leaves.find(leaf);
  if (!base) throw Error("unbound leaf '" + leaf + "'");

  auto ev = evaluate(graph, leaves);
  Tensor<Scalar> analytic = gradients(graph, ev, output, {leaf}).at(leaf);

  // Shadow binding of the probed leaf; everything else stays referenced.
  LeafValues<Scalar> probe = leaves;
  Tensor<Scalar> moved = *base;
  probe.bind(leaf, moved);

  Scalar worst = 0;
  for (std::size_t i = 0; i < moved.size(); ++i) {
    const Scalar orig = moved[i];
    moved[i] = orig + epsilon;
    Scalar up = evaluate(graph, probe)[output].item();
    moved[i] = orig - epsilon;
    Scalar down = evaluate(graph, probe)[output].item();
    moved[i] = orig;
    Scalar numeric = (up - down) / (Scalar(2) * epsilon);
    Scalar err = std::abs(analytic[i] - numeric) / std::max(Scalar(1e-12), std::abs(analytic[i]) + std::abs(numeric));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace ebm
