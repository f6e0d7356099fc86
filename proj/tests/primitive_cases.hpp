#pragma once

// Randomized single-primitive graphs shared by the unit and acceptance suites.
// Each case reduces the primitive's output to a scalar through a random
// weighting so that every output coordinate contributes to the gradient.

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "ebm/graph.hpp"
#include "ebm/random.hpp"

namespace ebm::testing {

struct PrimitiveCase {
  std::string name;
  std::unique_ptr<Graph<double>> graph;
  LeafValues<double> leaves;
  Var<double> output;
  std::vector<std::string> inputs;
};

inline TensorXd random_tensor(Rng& rng, const Shape& shape, double lo = -1.0, double hi = 1.0) {
  TensorXd t(shape);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = lo + (hi - lo) * uniform01(rng);
  return t;
}

using CaseBody = std::function<Var<double>(Graph<double>&, std::vector<Var<double>>&)>;

struct PrimitiveSpec {
  std::string name;
  std::vector<Shape> shapes;
  double lo = -1.0;
  double hi = 1.0;
  CaseBody body;
};

inline std::vector<PrimitiveSpec> primitive_specs() {
  using V = Var<double>;
  using G = Graph<double>;
  return {
      {"add", {{3, 4}, {3, 4}}, -1, 1, [](G&, std::vector<V>& x) { return add(x[0], x[1]); }},
      {"mul", {{3, 4}, {3, 4}}, -1, 1, [](G&, std::vector<V>& x) { return mul(x[0], x[1]); }},
      {"mul_scalar", {{}, {3, 4}}, -1, 1, [](G&, std::vector<V>& x) { return mul(x[0], x[1]); }},
      {"matmul", {{3, 4}, {4, 2}}, -1, 1, [](G&, std::vector<V>& x) { return matmul(x[0], x[1]); }},
      {"transpose", {{3, 4}}, -1, 1, [](G&, std::vector<V>& x) { return transpose(x[0]); }},
      {"reshape", {{3, 4}}, -1, 1, [](G&, std::vector<V>& x) { return reshape(x[0], Shape{2, 6}); }},
      {"concat", {{3, 2}, {3, 3}}, -1, 1, [](G&, std::vector<V>& x) { return concat<double>({x[0], x[1]}, 1); }},
      {"slice", {{4, 5}}, -1, 1, [](G&, std::vector<V>& x) { return slice(x[0], 1, 1, 4); }},
      {"exp", {{3, 4}}, -1, 1, [](G&, std::vector<V>& x) { return exp(x[0]); }},
      {"log", {{3, 4}}, 0.5, 2.0, [](G&, std::vector<V>& x) { return log(x[0]); }},
      {"tanh", {{3, 4}}, -1, 1, [](G&, std::vector<V>& x) { return tanh(x[0]); }},
      {"relu", {{3, 4}}, -1, 1, [](G&, std::vector<V>& x) { return relu(x[0]); }},
      {"softmax_rows", {{3, 4}}, -2, 2, [](G&, std::vector<V>& x) { return softmax(x[0], 1); }},
      {"softmax_cols", {{3, 4}}, -2, 2, [](G&, std::vector<V>& x) { return softmax(x[0], 0); }},
      {"layer_norm", {{3, 5}}, -1, 1, [](G&, std::vector<V>& x) { return layer_norm(x[0]); }},
      {"reduce_sum", {{3, 4}}, -1, 1, [](G&, std::vector<V>& x) { return reduce_sum(x[0], 0); }},
      {"reduce_mean", {{3, 4}}, -1, 1, [](G&, std::vector<V>& x) { return reduce_mean(x[0], 1); }},
      {"scale", {{3, 4}}, -1, 1, [](G&, std::vector<V>& x) { return scale(x[0], -2.5); }},
      {"softplus", {{3, 4}}, -3, 3, [](G&, std::vector<V>& x) { return softplus(x[0]); }},
  };
}

inline PrimitiveCase make_case(const PrimitiveSpec& spec, std::uint64_t seed) {
  PrimitiveCase c;
  c.name = spec.name;
  c.graph = std::make_unique<Graph<double>>();
  Rng rng = derive_rng(seed, {std::hash<std::string>{}(spec.name)});
  std::vector<Var<double>> xs;
  for (std::size_t i = 0; i < spec.shapes.size(); ++i) {
    std::string leaf = "x" + std::to_string(i);
    xs.push_back(c.graph->leaf(leaf, spec.shapes[i]));
    c.leaves.set(leaf, random_tensor(rng, spec.shapes[i], spec.lo, spec.hi));
    c.inputs.push_back(leaf);
  }
  Var<double> y = spec.body(*c.graph, xs);
  Var<double> w = c.graph->constant(random_tensor(rng, y.shape()));
  c.output = reduce_sum(mul(w, y));
  return c;
}

}  // namespace ebm::testing
