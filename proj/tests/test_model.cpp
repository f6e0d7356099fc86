#include "doctest.h"

#include <cmath>

#include "ebm/model.hpp"
#include "ebm/random.hpp"

using namespace ebm;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.vocab_size = 5;
  c.embed_dim = 8;
  c.hidden_dim = 8;
  c.heads = 2;
  c.encoder_layers = 1;
  c.decoder_layers = 1;
  c.head_hidden = 8;
  c.feature_dim = 4;
  return c;
}

// Initial parameters with every tensor (biases, scales, v) jittered off its
// structured starting value so that no gradient path is trivially inactive.
ModelParams jittered(const ModelConfig& c, std::uint64_t seed) {
  ModelParams p = init_params(c, seed);
  Rng rng(derive_seed(seed, {99}));
  for (auto& [name, t] : p.tensors)
    for (std::size_t i = 0; i < t.size(); ++i) t[i] += 0.2 * (uniform01(rng) - 0.5);
  return p;
}

FeatureSequence random_features(Rng& rng, std::size_t frames, std::size_t dim) {
  FeatureSequence y(frames, dim);
  for (Eigen::Index i = 0; i < y.size(); ++i) y.data()[i] = standard_normal(rng);
  return y;
}

TokenSequence tokens(std::initializer_list<int> ids) { return TokenSequence{std::vector<int>(ids)}; }

}  // namespace

TEST_CASE("config validation") {
  ModelConfig c = tiny_config();
  c.heads = 3;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = tiny_config();
  c.feature_dim = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("encode_text") {
  ModelParams p = jittered(tiny_config(), 1);
  SUBCASE("single token") {
    RowMatrixXd m = encode_text(p, tokens({3}));
    CHECK(m.rows() == 1);
    CHECK(m.cols() == 8);
    CHECK(m.allFinite());
  }
  SUBCASE("token order matters") {
    RowMatrixXd a = encode_text(p, tokens({1, 2, 3}));
    RowMatrixXd b = encode_text(p, tokens({2, 1, 3}));
    CHECK((a - b).cwiseAbs().maxCoeff() > 1e-6);
  }
  SUBCASE("deterministic") {
    RowMatrixXd a = encode_text(p, tokens({4, 0, 2, 2}));
    RowMatrixXd b = encode_text(p, tokens({4, 0, 2, 2}));
    CHECK(a == b);
  }
  SUBCASE("out of range id") {
    CHECK_THROWS_AS(encode_text(p, tokens({1, 5})), DataError);
    CHECK_THROWS_AS(encode_text(p, tokens({-1})), DataError);
    CHECK_THROWS_AS(encode_text(p, TokenSequence{}), DataError);
  }
}

TEST_CASE("decode_features") {
  ModelParams p = jittered(tiny_config(), 2);
  Rng rng(5);
  RowMatrixXd memory = encode_text(p, tokens({1, 2}));
  SUBCASE("single frame") {
    RowMatrixXd g = decode_features(p, memory, random_features(rng, 1, 4));
    CHECK(g.rows() == 1);
    CHECK(g.cols() == 8);
  }
  SUBCASE("first output depends on the last frame") {
    Graph<double> graph;
    ParamLeaves leaves_p(graph, p.config);
    auto mem = graph.leaf("memory", {2, 8});
    auto y = graph.leaf("Y", {6, 4});
    auto g = build_decoder(leaves_p, mem, y);
    auto probe = reshape(slice(slice(g, 0, 0, 1), 1, 0, 1), Shape{});
    LeafValues<double> lv;
    bind_params(lv, p);
    lv.set("memory", TensorXd::from_matrix(memory));
    lv.set("Y", TensorXd::from_matrix(random_features(rng, 6, 4)));
    auto ev = evaluate(graph, lv);
    RowMatrixXd grad = gradients(graph, ev, probe, {"Y"}).at("Y").matrix();
    CHECK(grad.row(5).cwiseAbs().maxCoeff() > 1e-8);
  }
  SUBCASE("duplicated frame stays finite") {
    FeatureSequence y = random_features(rng, 5, 4);
    FeatureSequence dup(6, 4);
    dup << y.topRows(3), y.row(2), y.bottomRows(2);
    RowMatrixXd g = decode_features(p, memory, dup);
    CHECK(g.rows() == 6);
    CHECK(g.allFinite());
  }
  SUBCASE("wrong feature width") {
    CHECK_THROWS_AS(decode_features(p, memory, random_features(rng, 3, 5)), ShapeError);
  }
}

TEST_CASE("frame_energies") {
  ModelConfig c = tiny_config();
  Rng rng(7);
  SUBCASE("zero head gives zero energies") {
    ModelParams p = jittered(c, 3);
    zero_head(p);
    Eigen::VectorXd e = frame_energies(p, random_features(rng, 5, 8));
    CHECK(e.isZero(0.0));
  }
  SUBCASE("identity hidden layers reduce to a^T g + b") {
    ModelParams p = jittered(c, 3);
    zero_head(p);
    p.at("head.fc1.w").matrix().setIdentity();
    p.at("head.fc2.w").matrix().setIdentity();
    p.at("head.out.w")[0] = 1.0;
    RowMatrixXd g = random_features(rng, 5, 8).cwiseAbs();
    Eigen::VectorXd e = frame_energies(p, g);
    for (Eigen::Index t = 0; t < 5; ++t) CHECK(e(t) == g(t, 0));
  }
  SUBCASE("per-frame independence") {
    ModelParams p = jittered(c, 3);
    RowMatrixXd g = random_features(rng, 5, 8);
    RowMatrixXd rev = g.colwise().reverse();
    Eigen::VectorXd e = frame_energies(p, g);
    Eigen::VectorXd er = frame_energies(p, rev);
    for (Eigen::Index t = 0; t < 5; ++t) CHECK(er(t) == e(4 - t));
  }
}

TEST_CASE("utterance_energy") {
  ModelParams p = init_params(tiny_config(), 4);
  SUBCASE("v = 0 gives the mean") {
    Eigen::VectorXd e(4);
    e << 1.0, -2.0, 3.5, 0.25;
    EnergyBreakdown b = utterance_energy(p, e);
    CHECK(b.energy == doctest::Approx(e.mean()).epsilon(1e-15));
    for (Eigen::Index t = 0; t < 4; ++t) CHECK(b.weights(t) == doctest::Approx(0.25).epsilon(1e-15));
  }
  SUBCASE("constant frame energies") {
    p.at("energy.v")[0] = 3.7;
    Eigen::VectorXd e = Eigen::VectorXd::Constant(6, -1.25);
    CHECK(utterance_energy(p, e).energy == doctest::Approx(-1.25).epsilon(1e-15));
  }
  SUBCASE("two frames, v = 1") {
    // alpha_0 = 1 / (1 + e^10); E = 10 (1 - alpha_0)
    p.at("energy.v")[0] = 1.0;
    Eigen::VectorXd e(2);
    e << 0.0, 10.0;
    EnergyBreakdown b = utterance_energy(p, e);
    CHECK(b.weights(0) == doctest::Approx(4.5397868702434395e-05).epsilon(1e-12));
    CHECK(b.weights(1) == doctest::Approx(0.99995460213129757).epsilon(1e-12));
    CHECK(b.energy == doctest::Approx(9.9995460213129757).epsilon(1e-12));
  }
}

TEST_CASE("energy") {
  Rng rng(8);
  SUBCASE("zero head") {
    ModelParams p = jittered(tiny_config(), 5);
    zero_head(p);
    CHECK(energy(p, tokens({1, 2, 3}), random_features(rng, 7, 4)).energy == 0.0);
  }
  SUBCASE("desk-size model is finite") {
    ModelConfig c;
    ModelParams p = init_params(c, 6);
    EnergyBreakdown b = energy(p, tokens({0, 1, 2, 3, 4}), random_features(rng, 40, 16));
    CHECK(std::isfinite(b.energy));
    CHECK(b.frame_energies.size() == 40);
    CHECK(b.frame_energies.allFinite());
  }
}

TEST_CASE("breakdown invariants over random inputs") {
  ModelConfig c = tiny_config();
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    ModelParams p = jittered(c, seed);
    p.at("energy.v")[0] = 2.0 * static_cast<double>(seed % 5) - 4.0;
    Rng rng(seed);
    std::size_t len = 1 + uniform_index(rng, 5);
    TokenSequence x;
    for (std::size_t i = 0; i < len; ++i) x.ids.push_back(static_cast<int>(uniform_index(rng, c.vocab_size)));
    EnergyBreakdown b = energy(p, x, random_features(rng, 1 + uniform_index(rng, 12), 4));
    CHECK(std::abs(b.weights.sum() - 1.0) < 1e-12);
    CHECK(b.weights.minCoeff() >= 0.0);
    CHECK(std::abs(b.energy - b.weights.dot(b.frame_energies)) < 1e-12);
  }
}

TEST_CASE("energy_grad_features") {
  ModelConfig c = tiny_config();
  Rng rng(9);
  SUBCASE("zero head gives zero gradient") {
    ModelParams p = jittered(c, 1);
    zero_head(p);
    RowMatrixXd g = energy_grad_features(p, tokens({1, 2}), random_features(rng, 6, 4));
    CHECK(g.rows() == 6);
    CHECK(g.cols() == 4);
    CHECK(g.isZero(0.0));
  }
  SUBCASE("matches finite differences") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      ModelParams p = jittered(c, seed);
      Graph<double> graph;
      ParamLeaves pl(graph, c);
      auto y = graph.leaf("Y", {7, 4});
      EnergyVars vars = build_energy(pl, tokens({0, 3, 1}), y);
      LeafValues<double> lv;
      bind_params(lv, p);
      lv.set("Y", TensorXd::from_matrix(random_features(rng, 7, 4)));
      CHECK(finite_difference_check(graph, lv, vars.energy, std::string("Y"), 1e-5) < 1e-4);
    }
  }
  SUBCASE("agrees with the cached-memory surface") {
    ModelParams p = jittered(c, 2);
    TokenSequence x = tokens({4, 4, 1});
    FeatureSequence y = random_features(rng, 9, 4);
    ModelEnergy surface(p, x);
    RowMatrixXd grad;
    double e = surface.energy_and_gradient(y, grad);
    CHECK(e == energy(p, x, y).energy);
    CHECK(grad == energy_grad_features(p, x, y));
    CHECK(surface.energy(y) == e);
  }
}

TEST_CASE("frame energies are non-causal in the features") {
  ModelConfig c = tiny_config();
  ModelParams p = jittered(c, 12);
  Rng rng(12);
  Graph<double> graph;
  ParamLeaves pl(graph, c);
  auto y = graph.leaf("Y", {6, 4});
  EnergyVars vars = build_energy(pl, tokens({1, 2}), y);
  auto first = reshape(slice(vars.frames, 0, 0, 1), Shape{});
  LeafValues<double> lv;
  bind_params(lv, p);
  lv.set("Y", TensorXd::from_matrix(random_features(rng, 6, 4)));
  auto ev = evaluate(graph, lv);
  RowMatrixXd grad = gradients(graph, ev, first, {"Y"}).at("Y").matrix();
  CHECK(grad.bottomRows(5).cwiseAbs().maxCoeff() > 1e-8);
}
