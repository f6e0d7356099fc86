#include "ebm/model.hpp"

#include <cmath>

#include "ebm/random.hpp"

namespace ebm {

namespace {

using V = Var<double>;

std::string layer_prefix(const char* stack, std::size_t i) { return std::string(stack) + ".L" + std::to_string(i); }

void add_attention_shapes(std::map<std::string, Shape>& s, const std::string& prefix, std::size_t d) {
  s[prefix + ".wq"] = {d, d};
  s[prefix + ".wk"] = {d, d};
  s[prefix + ".wv"] = {d, d};
  s[prefix + ".wo"] = {d, d};
  s[prefix + ".bo"] = {1, d};
}

void add_linear_shapes(std::map<std::string, Shape>& s, const std::string& prefix, std::size_t in, std::size_t out) {
  s[prefix + ".w"] = {in, out};
  s[prefix + ".b"] = {1, out};
}

V ones_column(Graph<double>& g, std::size_t rows) { return g.constant(TensorXd::constant({rows, 1}, 1.0)); }

// x W + 1 b
V linear(ParamLeaves& p, V x, const std::string& prefix) {
  V y = matmul(x, p(prefix + ".w"));
  return y + matmul(ones_column(p.graph(), x.shape()[0]), p(prefix + ".b"));
}

V attention(ParamLeaves& p, V queries, V keys_values, const std::string& prefix) {
  const std::size_t d = p.config().embed_dim;
  const std::size_t heads = p.config().heads;
  const std::size_t dk = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dk));

  V q = matmul(queries, p(prefix + ".wq"));
  V k = matmul(keys_values, p(prefix + ".wk"));
  V v = matmul(keys_values, p(prefix + ".wv"));
  std::vector<V> outs;
  for (std::size_t h = 0; h < heads; ++h) {
    V qh = heads == 1 ? q : slice(q, 1, h * dk, (h + 1) * dk);
    V kh = heads == 1 ? k : slice(k, 1, h * dk, (h + 1) * dk);
    V vh = heads == 1 ? v : slice(v, 1, h * dk, (h + 1) * dk);
    V scores = scale(matmul(qh, transpose(kh)), inv_sqrt);
    outs.push_back(matmul(softmax(scores, 1), vh));
  }
  V joined = heads == 1 ? outs.front() : concat(outs, 1);
  V out = matmul(joined, p(prefix + ".wo"));
  return out + matmul(ones_column(p.graph(), queries.shape()[0]), p(prefix + ".bo"));
}

V feed_forward(ParamLeaves& p, V x, const std::string& prefix) {
  V h = relu(linear(p, x, prefix + ".ffn1"));
  return linear(p, h, prefix + ".ffn2");
}

TensorXd as_tensor(const RowMatrixXd& m) { return TensorXd::from_matrix(m); }

}  // namespace

void ModelConfig::validate() const {
  if (vocab_size < 1 || embed_dim < 1 || hidden_dim < 1 || heads < 1 || head_hidden < 1 || feature_dim < 1)
    throw ConfigError("model dimensions must all be >= 1");
  if (embed_dim % heads != 0)
    throw ConfigError("embed_dim " + std::to_string(embed_dim) + " is not divisible by heads " + std::to_string(heads));
}

const TensorXd& ModelParams::at(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw Error("unknown parameter '" + name + "'");
  return it->second;
}

TensorXd& ModelParams::at(const std::string& name) {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw Error("unknown parameter '" + name + "'");
  return it->second;
}

std::vector<std::string> ModelParams::names() const {
  std::vector<std::string> out;
  for (const auto& [name, _] : tensors) out.push_back(name);
  return out;
}

std::size_t ModelParams::count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : tensors) n += t.size();
  return n;
}

bool ModelParams::all_finite() const {
  for (const auto& [_, t] : tensors)
    if (!t.all_finite()) return false;
  return true;
}

std::map<std::string, Shape> parameter_shapes(const ModelConfig& c) {
  c.validate();
  const std::size_t d = c.embed_dim;
  std::map<std::string, Shape> s;
  s["enc.embedding"] = {c.vocab_size, d};
  s["enc.pos_alpha"] = {};
  for (std::size_t i = 0; i < c.encoder_layers; ++i) {
    std::string pre = layer_prefix("enc", i);
    add_attention_shapes(s, pre + ".self", d);
    add_linear_shapes(s, pre + ".ffn1", d, c.hidden_dim);
    add_linear_shapes(s, pre + ".ffn2", c.hidden_dim, d);
  }
  add_linear_shapes(s, "dec.prenet1", c.feature_dim, d);
  add_linear_shapes(s, "dec.prenet2", d, d);
  s["dec.pos_alpha"] = {};
  for (std::size_t i = 0; i < c.decoder_layers; ++i) {
    std::string pre = layer_prefix("dec", i);
    add_attention_shapes(s, pre + ".self", d);
    add_attention_shapes(s, pre + ".cross", d);
    add_linear_shapes(s, pre + ".ffn1", d, c.hidden_dim);
    add_linear_shapes(s, pre + ".ffn2", c.hidden_dim, d);
  }
  add_linear_shapes(s, "dec.out", d, d);
  add_linear_shapes(s, "head.fc1", d, c.head_hidden);
  add_linear_shapes(s, "head.fc2", c.head_hidden, c.head_hidden);
  add_linear_shapes(s, "head.out", c.head_hidden, 1);
  s["energy.v"] = {};
  return s;
}

ModelParams init_params(const ModelConfig& config, std::uint64_t seed) {
  ModelParams params;
  params.config = config;
  Rng rng(derive_seed(seed, {0x1417}));
  for (const auto& [name, shape] : parameter_shapes(config)) {
    TensorXd t(shape);
    const bool weight = name == "enc.embedding" || name.ends_with(".w") || name.ends_with(".wq") ||
                        name.ends_with(".wk") || name.ends_with(".wv") || name.ends_with(".wo");
    if (name.ends_with("pos_alpha")) {
      t[0] = 1.0;
    } else if (weight) {
      const double bound = name == "enc.embedding" ? 1.0 : 1.0 / std::sqrt(static_cast<double>(shape[0]));
      for (std::size_t i = 0; i < t.size(); ++i) t[i] = bound * (2.0 * uniform01(rng) - 1.0);
    }
    params.tensors.emplace(name, std::move(t));
  }
  return params;
}

void zero_head(ModelParams& params) {
  for (auto& [name, t] : params.tensors)
    if (name.starts_with("head.")) t.set_zero();
}

ParamLeaves::ParamLeaves(Graph<double>& graph, const ModelConfig& config)
    : graph_(graph), config_(config), shapes_(parameter_shapes(config)) {}

Var<double> ParamLeaves::operator()(const std::string& name) {
  auto it = shapes_.find(name);
  if (it == shapes_.end()) throw Error("unknown parameter '" + name + "'");
  return graph_.shared_leaf(name, it->second, LeafKind::Parameter);
}

Var<double> sinusoidal_positions(Graph<double>& graph, std::size_t length, std::size_t dim) {
  TensorXd pe({length, dim});
  for (std::size_t pos = 0; pos < length; ++pos)
    for (std::size_t i = 0; i < dim; ++i) {
      double rate = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(dim));
      double angle = static_cast<double>(pos) * rate;
      pe[pos * dim + i] = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  return graph.constant(std::move(pe));
}

void check_tokens(const ModelConfig& config, const TokenSequence& tokens) {
  if (tokens.ids.empty()) throw DataError("token sequence is empty");
  for (int id : tokens.ids)
    if (id < 0 || static_cast<std::size_t>(id) >= config.vocab_size)
      throw DataError("token id " + std::to_string(id) + " outside vocabulary of size " + std::to_string(config.vocab_size));
}

Var<double> build_encoder(ParamLeaves& p, const TokenSequence& tokens) {
  const ModelConfig& c = p.config();
  check_tokens(c, tokens);
  Graph<double>& g = p.graph();
  const std::size_t len = tokens.size();
  TensorXd one_hot({len, c.vocab_size});
  for (std::size_t i = 0; i < len; ++i) one_hot[i * c.vocab_size + static_cast<std::size_t>(tokens.ids[i])] = 1.0;

  V x = matmul(g.constant(std::move(one_hot)), p("enc.embedding"));
  x = x + mul(p("enc.pos_alpha"), sinusoidal_positions(g, len, c.embed_dim));
  for (std::size_t i = 0; i < c.encoder_layers; ++i) {
    std::string pre = layer_prefix("enc", i);
    x = layer_norm(x + attention(p, x, x, pre + ".self"));
    x = layer_norm(x + feed_forward(p, x, pre));
  }
  return x;
}

Var<double> build_decoder(ParamLeaves& p, Var<double> memory, Var<double> features) {
  const ModelConfig& c = p.config();
  if (features.shape().size() != 2 || features.shape()[1] != c.feature_dim)
    throw ShapeError("decoder expects [T, " + std::to_string(c.feature_dim) + "] features, got " +
                     shape_string(features.shape()));
  if (memory.shape().size() != 2 || memory.shape()[1] != c.embed_dim)
    throw ShapeError("decoder expects [L, " + std::to_string(c.embed_dim) + "] memory, got " + shape_string(memory.shape()));
  Graph<double>& g = p.graph();
  const std::size_t frames = features.shape()[0];

  V x = relu(linear(p, features, "dec.prenet1"));
  x = linear(p, x, "dec.prenet2");
  x = x + mul(p("dec.pos_alpha"), sinusoidal_positions(g, frames, c.embed_dim));
  for (std::size_t i = 0; i < c.decoder_layers; ++i) {
    std::string pre = layer_prefix("dec", i);
    x = layer_norm(x + attention(p, x, x, pre + ".self"));
    x = layer_norm(x + attention(p, x, memory, pre + ".cross"));
    x = layer_norm(x + feed_forward(p, x, pre));
  }
  return linear(p, x, "dec.out");
}

Var<double> build_frame_energies(ParamLeaves& p, Var<double> g) {
  V h = relu(linear(p, g, "head.fc1"));
  h = relu(linear(p, h, "head.fc2"));
  V e = linear(p, h, "head.out");
  return reshape(e, Shape{g.shape()[0]});
}

EnergyVars build_utterance_energy(ParamLeaves& p, Var<double> frame_energies) {
  V weights = softmax(mul(p("energy.v"), frame_energies), 0);
  V total = reduce_sum(weights * frame_energies);
  return {total, frame_energies, weights};
}

EnergyVars build_energy(ParamLeaves& p, const TokenSequence& tokens, Var<double> features) {
  V memory = build_encoder(p, tokens);
  V g = build_decoder(p, memory, features);
  return build_utterance_energy(p, build_frame_energies(p, g));
}

void bind_params(LeafValues<double>& leaves, const ModelParams& params) {
  for (const auto& [name, t] : params.tensors) leaves.bind(name, t);
}

RowMatrixXd encode_text(const ModelParams& params, const TokenSequence& tokens) {
  Graph<double> g;
  ParamLeaves p(g, params.config);
  V memory = build_encoder(p, tokens);
  LeafValues<double> leaves;
  bind_params(leaves, params);
  return evaluate(g, leaves)[memory].matrix();
}

RowMatrixXd decode_features(const ModelParams& params, const RowMatrixXd& memory, const FeatureSequence& features) {
  Graph<double> g;
  ParamLeaves p(g, params.config);
  V mem = g.leaf("memory", {static_cast<std::size_t>(memory.rows()), static_cast<std::size_t>(memory.cols())});
  V y = g.leaf("Y", {static_cast<std::size_t>(features.rows()), static_cast<std::size_t>(features.cols())});
  V out = build_decoder(p, mem, y);
  LeafValues<double> leaves;
  bind_params(leaves, params);
  leaves.set("memory", as_tensor(memory));
  leaves.set("Y", as_tensor(features));
  return evaluate(g, leaves)[out].matrix();
}

Eigen::VectorXd frame_energies(const ModelParams& params, const RowMatrixXd& gmat) {
  Graph<double> g;
  ParamLeaves p(g, params.config);
  V in = g.leaf("g", {static_cast<std::size_t>(gmat.rows()), static_cast<std::size_t>(gmat.cols())});
  V e = build_frame_energies(p, in);
  LeafValues<double> leaves;
  bind_params(leaves, params);
  leaves.set("g", as_tensor(gmat));
  return evaluate(g, leaves)[e].vec();
}

EnergyBreakdown utterance_energy(const ModelParams& params, const Eigen::VectorXd& frame_energies) {
  Graph<double> g;
  ParamLeaves p(g, params.config);
  V e = g.leaf("e", {static_cast<std::size_t>(frame_energies.size())});
  EnergyVars vars = build_utterance_energy(p, e);
  LeafValues<double> leaves;
  bind_params(leaves, params);
  leaves.set("e", TensorXd({static_cast<std::size_t>(frame_energies.size())},
                          std::span<const double>(frame_energies.data(), static_cast<std::size_t>(frame_energies.size()))));
  auto ev = evaluate(g, leaves);
  return {ev[vars.energy].item(), ev[vars.frames].vec(), ev[vars.weights].vec()};
}

EnergyBreakdown energy(const ModelParams& params, const TokenSequence& tokens, const FeatureSequence& features) {
  Graph<double> g;
  ParamLeaves p(g, params.config);
  V y = g.leaf("Y", {static_cast<std::size_t>(features.rows()), static_cast<std::size_t>(features.cols())});
  EnergyVars vars = build_energy(p, tokens, y);
  LeafValues<double> leaves;
  bind_params(leaves, params);
  leaves.set("Y", as_tensor(features));
  auto ev = evaluate(g, leaves);
  return {ev[vars.energy].item(), ev[vars.frames].vec(), ev[vars.weights].vec()};
}

RowMatrixXd energy_grad_features(const ModelParams& params, const TokenSequence& tokens, const FeatureSequence& features) {
  Graph<double> g;
  ParamLeaves p(g, params.config);
  V y = g.leaf("Y", {static_cast<std::size_t>(features.rows()), static_cast<std::size_t>(features.cols())});
  EnergyVars vars = build_energy(p, tokens, y);
  LeafValues<double> leaves;
  bind_params(leaves, params);
  leaves.set("Y", as_tensor(features));
  auto ev = evaluate(g, leaves);
  return gradients(g, ev, vars.energy, {"Y"}).at("Y").matrix();
}

ModelEnergy::ModelEnergy(const ModelParams& params, const TokenSequence& tokens)
    : params_(params), memory_(TensorXd::from_matrix(encode_text(params, tokens))) {}

double ModelEnergy::energy(const FeatureSequence& features) const {
  Graph<double> g;
  ParamLeaves p(g, params_.config);
  V mem = g.leaf("memory", memory_.shape());
  V y = g.leaf("Y", {static_cast<std::size_t>(features.rows()), static_cast<std::size_t>(features.cols())});
  EnergyVars vars = build_utterance_energy(p, build_frame_energies(p, build_decoder(p, mem, y)));
  LeafValues<double> leaves;
  bind_params(leaves, params_);
  leaves.bind("memory", memory_);
  leaves.set("Y", as_tensor(features));
  return evaluate(g, leaves)[vars.energy].item();
}

double ModelEnergy::energy_and_gradient(const FeatureSequence& features, RowMatrixXd& gradient) const {
  Graph<double> g;
  ParamLeaves p(g, params_.config);
  V mem = g.leaf("memory", memory_.shape());
  V y = g.leaf("Y", {static_cast<std::size_t>(features.rows()), static_cast<std::size_t>(features.cols())});
  EnergyVars vars = build_utterance_energy(p, build_frame_energies(p, build_decoder(p, mem, y)));
  LeafValues<double> leaves;
  bind_params(leaves, params_);
  leaves.bind("memory", memory_);
  leaves.set("Y", as_tensor(features));
  auto ev = evaluate(g, leaves);
  gradient = gradients(g, ev, vars.energy, {"Y"}).at("Y").matrix();
  return ev[vars.energy].item();
}

double QuadraticEnergy::energy(const FeatureSequence& features) const { return 0.5 * features.squaredNorm(); }

double QuadraticEnergy::energy_and_gradient(const FeatureSequence& features, RowMatrixXd& gradient) const {
  gradient = features;
  return 0.5 * features.squaredNorm();
}

}  // namespace ebm
