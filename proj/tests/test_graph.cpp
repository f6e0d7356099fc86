#include "doctest.h"

#include <cmath>

#include "ebm/graph.hpp"
#include "primitive_cases.hpp"

using namespace ebm;

TEST_CASE("matmul of ones contracts to the inner dimension") {
  Graph<double> g;
  auto a = g.leaf("a", {2, 3});
  auto b = g.leaf("b", {3, 1});
  auto c = matmul(a, b);
  LeafValues<double> lv;
  lv.set("a", TensorXd::constant({2, 3}, 1.0));
  lv.set("b", TensorXd::constant({3, 1}, 1.0));
  auto ev = evaluate(g, lv);
  CHECK(ev[c].shape() == Shape{2, 1});
  CHECK(ev[c][0] == 3.0);
  CHECK(ev[c][1] == 3.0);
}

TEST_CASE("softmax of equal logits is uniform") {
  Graph<double> g;
  auto x = g.leaf("x", {3});
  auto y = softmax(x, 0);
  LeafValues<double> lv;
  lv.set("x", TensorXd({3}, {0.0, 0.0, 0.0}));
  auto ev = evaluate(g, lv);
  for (std::size_t i = 0; i < 3; ++i) CHECK(ev[y][i] == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("softmax survives large logits") {
  Graph<double> g;
  auto x = g.leaf("x", {2});
  auto y = softmax(x, 0);
  LeafValues<double> lv;
  lv.set("x", TensorXd({2}, {1000.0, 0.0}));
  auto ev = evaluate(g, lv);
  CHECK(ev[y].all_finite());
  CHECK(ev[y][0] == 1.0);
}

TEST_CASE("softplus composite at 1") {
  // log(1 + e) = 1.3132616875182228 (high-precision evaluation)
  Graph<double> g;
  auto x = g.leaf("x", {});
  auto y = softplus(x);
  LeafValues<double> lv;
  lv.set("x", TensorXd::scalar(1.0));
  CHECK(evaluate(g, lv)[y].item() == doctest::Approx(1.3132616875182228).epsilon(1e-14));
}

TEST_CASE("softplus does not overflow and has gradient 1/2 at zero") {
  Graph<double> g;
  auto x = g.leaf("x", {3});
  auto out = reduce_sum(softplus(x));
  LeafValues<double> lv;
  lv.set("x", TensorXd({3}, {800.0, -800.0, 0.0}));
  auto ev = evaluate(g, lv);
  CHECK(ev[out].item() == doctest::Approx(800.0 + std::log(2.0)));
  auto grad = gradients(g, ev, out, {"x"}).at("x");
  CHECK(grad[0] == doctest::Approx(1.0));
  CHECK(grad[1] == doctest::Approx(0.0));
  CHECK(grad[2] == doctest::Approx(0.5));
}

TEST_CASE("gradient of sum of squares") {
  Graph<double> g;
  auto x = g.leaf("x", {3});
  auto out = reduce_sum(x * x);
  LeafValues<double> lv;
  lv.set("x", TensorXd({3}, {1.0, 2.0, 3.0}));
  auto ev = evaluate(g, lv);
  auto grad = gradients(g, ev, out, {"x"}).at("x");
  CHECK(grad[0] == 2.0);
  CHECK(grad[1] == 4.0);
  CHECK(grad[2] == 6.0);
}

TEST_CASE("softmax then pick first has the analytic Jacobian row") {
  // d softmax_0 / dx = s0 (delta - s) = [0.25, -0.25] at x = [0, 0]
  Graph<double> g;
  auto x = g.leaf("x", {2});
  auto out = reshape(slice(softmax(x, 0), 0, 0, 1), Shape{});
  LeafValues<double> lv;
  lv.set("x", TensorXd({2}, {0.0, 0.0}));
  auto ev = evaluate(g, lv);
  auto grad = gradients(g, ev, out, {"x"}).at("x");
  CHECK(grad[0] == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(grad[1] == doctest::Approx(-0.25).epsilon(1e-15));
}

TEST_CASE("disconnected leaf gets a zero gradient of its own shape") {
  Graph<double> g;
  auto x = g.leaf("x", {2});
  g.leaf("unused", {4, 3});
  auto out = reduce_sum(x);
  LeafValues<double> lv;
  lv.set("x", TensorXd({2}, {1.0, 2.0}));
  lv.set("unused", TensorXd::constant({4, 3}, 7.0));
  auto ev = evaluate(g, lv);
  auto grads = gradients(g, ev, out, {"x", "unused"});
  CHECK(grads.at("unused").shape() == Shape{4, 3});
  CHECK(grads.at("unused").vec().isZero(0.0));
}

TEST_CASE("non-scalar output is rejected") {
  Graph<double> g;
  auto x = g.leaf("x", {2});
  LeafValues<double> lv;
  lv.set("x", TensorXd({2}, {1.0, 2.0}));
  auto ev = evaluate(g, lv);
  CHECK_THROWS_AS(gradients(g, ev, x, {"x"}), ShapeError);
}

TEST_CASE("shape errors name the node") {
  Graph<double> g;
  auto a = g.leaf("a", {2, 3});
  auto b = g.leaf("b", {2, 3});
  CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("matmul"), ShapeError);
  CHECK_THROWS_AS(add(a, transpose(b)), ShapeError);

  auto c = add(a, b);
  (void)c;
  LeafValues<double> lv;
  lv.set("a", TensorXd({3, 2}));
  lv.set("b", TensorXd({2, 3}));
  CHECK_THROWS_WITH_AS(evaluate(g, lv), doctest::Contains("'a'"), ShapeError);
}

TEST_CASE("unbound leaf is an error") {
  Graph<double> g;
  auto a = g.leaf("a", {2});
  (void)a;
  LeafValues<double> lv;
  CHECK_THROWS_WITH_AS(evaluate(g, lv), doctest::Contains("unbound"), Error);
}

TEST_CASE("finite differences on a quadratic are essentially exact") {
  Graph<double> g;
  auto x = g.leaf("x", {4});
  auto out = reduce_sum(scale(x * x, 0.5) + x);
  LeafValues<double> lv;
  lv.set("x", TensorXd({4}, {0.3, -1.2, 2.5, 0.01}));
  CHECK(finite_difference_check(g, lv, out, std::string("x"), 1e-5) < 1e-7);
}

TEST_CASE("constant output has zero error") {
  Graph<double> g;
  auto x = g.leaf("x", {3});
  auto out = reduce_sum(scale(x, 0.0));
  LeafValues<double> lv;
  lv.set("x", TensorXd({3}, {1.0, 2.0, 3.0}));
  CHECK(finite_difference_check(g, lv, out, std::string("x"), 1e-5) == 0.0);
}

TEST_CASE("epsilon outside the admissible range is rejected") {
  Graph<double> g;
  auto x = g.leaf("x", {1});
  auto out = reduce_sum(x);
  LeafValues<double> lv;
  lv.set("x", TensorXd({1}, {1.0}));
  CHECK_THROWS(finite_difference_check(g, lv, out, std::string("x"), 0.1));
  CHECK_THROWS(finite_difference_check(g, lv, out, std::string("x"), 1e-9));
}

TEST_CASE("every primitive matches finite differences over random seeds") {
  for (const auto& spec : testing::primitive_specs()) {
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      auto c = testing::make_case(spec, seed);
      for (const auto& leaf : c.inputs)
        worst = std::max(worst, finite_difference_check(*c.graph, c.leaves, c.output, leaf, 1e-5));
    }
    INFO(spec.name);
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("evaluation is bitwise deterministic") {
  for (const auto& spec : testing::primitive_specs()) {
    auto c = testing::make_case(spec, 7);
    auto a = evaluate(*c.graph, c.leaves);
    auto b = evaluate(*c.graph, c.leaves);
    for (std::size_t id = 0; id < c.graph->size(); ++id) CHECK(a[static_cast<int>(id)] == b[static_cast<int>(id)]);
  }
}

TEST_CASE("gradients are linear in the output") {
  Rng rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    Graph<double> g;
    auto x = g.leaf("x", {3, 4});
    auto w = g.leaf("w", {4, 2});
    auto f = reduce_sum(tanh(matmul(x, w)));
    auto h = reduce_sum(softmax(matmul(x, w), 1) * matmul(x, w));
    const double alpha = 1.7, beta = -0.4;
    auto combo = add(scale(f, alpha), scale(h, beta));
    LeafValues<double> lv;
    lv.set("x", testing::random_tensor(rng, {3, 4}));
    lv.set("w", testing::random_tensor(rng, {4, 2}));
    auto ev = evaluate(g, lv);
    auto gf = gradients(g, ev, f, {"x", "w"});
    auto gh = gradients(g, ev, h, {"x", "w"});
    auto gc = gradients(g, ev, combo, {"x", "w"});
    for (const char* name : {"x", "w"}) {
      Eigen::VectorXd expect = alpha * gf.at(name).vec() + beta * gh.at(name).vec();
      CHECK((gc.at(name).vec() - expect).cwiseAbs().maxCoeff() < 1e-12);
    }
  }
}

TEST_CASE("concat and slice are inverse along an axis") {
  Rng rng(3);
  Graph<double> g;
  auto a = g.leaf("a", {2, 3, 2});
  auto b = g.leaf("b", {2, 1, 2});
  auto c = concat<double>({a, b}, 1);
  auto back_a = slice(c, 1, 0, 3);
  auto back_b = slice(c, 1, 3, 4);
  LeafValues<double> lv;
  lv.set("a", testing::random_tensor(rng, {2, 3, 2}));
  lv.set("b", testing::random_tensor(rng, {2, 1, 2}));
  auto ev = evaluate(g, lv);
  CHECK(ev[back_a] == *lv.find("a"));
  CHECK(ev[back_b] == *lv.find("b"));
}
