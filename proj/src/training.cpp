#include "ebm/training.hpp"

#include <cmath>
#include <cstdio>

#include "ebm/binary_io.hpp"
#include "json.hpp"

namespace ebm {

using nlohmann::json;
using V = Var<double>;

namespace {

double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

TensorXd as_tensor(const RowMatrixXd& m) { return TensorXd::from_matrix(m); }

json model_config_json(const ModelConfig& c) {
  return {{"vocab_size", c.vocab_size},       {"embed_dim", c.embed_dim},           {"hidden_dim", c.hidden_dim},
          {"heads", c.heads},                 {"encoder_layers", c.encoder_layers}, {"decoder_layers", c.decoder_layers},
          {"head_hidden", c.head_hidden},     {"feature_dim", c.feature_dim}};
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.embed_dim = j.at("embed_dim").get<std::size_t>();
  c.hidden_dim = j.at("hidden_dim").get<std::size_t>();
  c.heads = j.at("heads").get<std::size_t>();
  c.encoder_layers = j.at("encoder_layers").get<std::size_t>();
  c.decoder_layers = j.at("decoder_layers").get<std::size_t>();
  c.head_hidden = j.at("head_hidden").get<std::size_t>();
  c.feature_dim = j.at("feature_dim").get<std::size_t>();
  return c;
}

void write_tensor(io::Writer& w, const std::string& name, const TensorXd& t) {
  w.str(name);
  w.u32(static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) w.u64(d);
  for (std::size_t i = 0; i < t.size(); ++i) w.f64(t[i]);
}

std::pair<std::string, TensorXd> read_tensor(io::Reader& r) {
  std::string name = r.str();
  std::uint32_t rank = r.u32();
  if (rank > 8) throw FormatError(r.origin() + ": tensor '" + name + "' has implausible rank " + std::to_string(rank));
  Shape shape(rank);
  std::uint64_t count = 1;
  for (auto& d : shape) {
    d = r.u64();
    if (d != 0 && count > r.remaining() / d) throw FormatError(r.origin() + ": truncated file");
    count *= d;
  }
  if (count > r.remaining() / sizeof(double)) throw FormatError(r.origin() + ": truncated file");
  TensorXd t(shape);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = r.f64();
  return {std::move(name), std::move(t)};
}

}  // namespace

double nce_loss(double energy_pos, double energy_neg) {
  if (!std::isfinite(energy_pos) || !std::isfinite(energy_neg))
    throw NumericError("nce_loss needs finite energies (got " + std::to_string(energy_pos) + ", " +
                       std::to_string(energy_neg) + ")");
  return softplus(energy_pos) + softplus(-energy_neg);
}

V nce_loss(V energy_pos, V energy_neg) { return softplus(energy_pos) + softplus(-energy_neg); }

AdamState AdamState::zeros_like(const ParamMap& params) {
  AdamState s;
  for (const auto& [name, t] : params) {
    s.m.emplace(name, TensorXd(t.shape()));
    s.v.emplace(name, TensorXd(t.shape()));
  }
  return s;
}

void adam_step(ParamMap& params, const ParamMap& grads, AdamState& state, double learning_rate) {
  for (const auto& [name, g] : grads) {
    auto p = params.find(name);
    if (p == params.end()) throw ShapeError("gradient for unknown parameter '" + name + "'");
    if (p->second.shape() != g.shape())
      throw ShapeError("gradient shape " + shape_string(g.shape()) + " does not match parameter '" + name + "' " +
                       shape_string(p->second.shape()));
    auto m = state.m.find(name);
    if (m == state.m.end()) m = state.m.emplace(name, TensorXd(g.shape())).first;
    auto v = state.v.find(name);
    if (v == state.v.end()) v = state.v.emplace(name, TensorXd(g.shape())).first;
    if (m->second.shape() != g.shape() || v->second.shape() != g.shape())
      throw ShapeError("Adam moment shape does not match parameter '" + name + "'");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (const auto& [name, g] : grads) {
    auto gv = g.array();
    auto m = state.m.at(name).array();
    auto v = state.v.at(name).array();
    m = state.beta1 * m + (1.0 - state.beta1) * gv;
    v = state.beta2 * v + (1.0 - state.beta2) * gv.square();
    params.at(name).array() -= learning_rate * (m / c1) / ((v / c2).sqrt() + state.epsilon);
  }
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning rate must be > 0");
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (negatives_per_positive < 1) throw ConfigError("negatives per positive must be >= 1");
  negatives.validate();
}

V build_batch_loss(ParamLeaves& p, const std::vector<TrainingItem>& batch, std::vector<V>* pos_energies,
                   std::vector<V>* neg_energies) {
  if (batch.empty()) throw DataError("batch is empty");
  Graph<double>& g = p.graph();
  std::vector<V> terms;
  for (const auto& item : batch) {
    if (item.tokens == nullptr) throw DataError("training item '" + item.id + "' has no text");
    if (item.negatives.empty()) throw DataError("training item '" + item.id + "' has no negatives");
    V memory = build_encoder(p, *item.tokens);
    auto energy_of = [&](const FeatureSequence& y) {
      return build_utterance_energy(p, build_frame_energies(p, build_decoder(p, memory, g.constant(as_tensor(y))))).energy;
    };
    V pos = energy_of(item.positive);
    if (pos_energies) pos_energies->push_back(pos);
    for (const auto& neg_y : item.negatives) {
      V neg = energy_of(neg_y);
      if (neg_energies) neg_energies->push_back(neg);
      terms.push_back(nce_loss(pos, neg));
    }
  }
  V total = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) total = total + terms[i];
  return scale(total, 1.0 / static_cast<double>(terms.size()));
}

BatchResult batch_loss(const ModelParams& params, const std::vector<TrainingItem>& batch, bool with_gradients) {
  Graph<double> g;
  ParamLeaves p(g, params.config);
  std::vector<V> pos, neg;
  V loss = build_batch_loss(p, batch, &pos, &neg);
  LeafValues<double> leaves;
  bind_params(leaves, params);
  auto ev = evaluate(g, leaves);

  BatchResult r;
  r.loss = ev[loss].item();
  for (V v : pos) r.energy_pos_mean += ev[v].item();
  for (V v : neg) r.energy_neg_mean += ev[v].item();
  r.energy_pos_mean /= static_cast<double>(pos.size());
  r.energy_neg_mean /= static_cast<double>(neg.size());

  if (!std::isfinite(r.loss)) {
    std::size_t k = 0;
    for (std::size_t i = 0; i < batch.size(); ++i)
      for (std::size_t j = 0; j < batch[i].negatives.size(); ++j, ++k) {
        double ep = ev[pos[i]].item(), en = ev[neg[k]].item();
        if (!std::isfinite(ep) || !std::isfinite(en) || !std::isfinite(softplus(ep) + softplus(-en)))
          throw NumericError("non-finite energy for utterance '" + batch[i].id + "' (E+ = " + std::to_string(ep) +
                             ", E- = " + std::to_string(en) + ")");
      }
    throw NumericError("non-finite batch loss");
  }
  if (with_gradients) {
    std::vector<std::string> names = params.names();
    auto grads = gradients(g, ev, loss, names);
    for (auto& [name, t] : grads) r.gradients.emplace(name, std::move(t));
  }
  return r;
}

Checkpoint initial_checkpoint(const ModelConfig& model, std::uint64_t seed) {
  Checkpoint c;
  c.params = init_params(model, derive_seed(seed, {1}));
  c.adam = AdamState::zeros_like(c.params.tensors);
  c.iteration = 0;
  c.rng_state = rng_state(derive_rng(seed, {2}));
  return c;
}

std::string serialize_checkpoint(const Checkpoint& c) {
  json header = {{"model", model_config_json(c.params.config)},
                 {"iteration", c.iteration},
                 {"rng_state", c.rng_state},
                 {"adam", {{"step", c.adam.step}}}};
  io::Writer w;
  w.bytes("EBMC");
  w.u32(Checkpoint::kFormatVersion);
  w.str(header.dump());
  // Adam hyperparameters travel as raw f64 so they round-trip bit-exactly.
  w.f64(c.adam.beta1);
  w.f64(c.adam.beta2);
  w.f64(c.adam.epsilon);
  std::size_t blocks = c.params.tensors.size() + c.adam.m.size() + c.adam.v.size();
  w.u32(static_cast<std::uint32_t>(blocks));
  for (const auto& [name, t] : c.params.tensors) write_tensor(w, name, t);
  for (const auto& [name, t] : c.adam.m) write_tensor(w, "adam.m." + name, t);
  for (const auto& [name, t] : c.adam.v) write_tensor(w, "adam.v." + name, t);
  return w.buffer();
}

Checkpoint parse_checkpoint(std::string bytes, const std::string& origin) {
  io::Reader r(std::move(bytes), origin);
  r.expect_magic("EBMC");
  std::uint32_t version = r.u32();
  if (version != Checkpoint::kFormatVersion)
    throw FormatError(origin + ": checkpoint version " + std::to_string(version) + " is not supported (expected " +
                      std::to_string(Checkpoint::kFormatVersion) + ")");
  Checkpoint c;
  try {
    json header = json::parse(r.str());
    c.params.config = model_config_from_json(header.at("model"));
    c.iteration = header.at("iteration").get<std::uint64_t>();
    c.rng_state = header.at("rng_state").get<std::string>();
    c.adam.step = header.at("adam").at("step").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw FormatError(origin + ": corrupt checkpoint header: " + e.what());
  }
  c.adam.beta1 = r.f64();
  c.adam.beta2 = r.f64();
  c.adam.epsilon = r.f64();
  std::uint32_t blocks = r.u32();
  for (std::uint32_t b = 0; b < blocks; ++b) {
    auto [name, t] = read_tensor(r);
    if (name.rfind("adam.m.", 0) == 0)
      c.adam.m.emplace(name.substr(7), std::move(t));
    else if (name.rfind("adam.v.", 0) == 0)
      c.adam.v.emplace(name.substr(7), std::move(t));
    else
      c.params.tensors.emplace(std::move(name), std::move(t));
  }
  if (r.remaining() != 0) throw FormatError(origin + ": trailing bytes after checkpoint payload");

  auto shapes = parameter_shapes(c.params.config);
  if (shapes.size() != c.params.tensors.size())
    throw FormatError(origin + ": checkpoint holds " + std::to_string(c.params.tensors.size()) + " tensors, model expects " +
                      std::to_string(shapes.size()));
  for (const auto& [name, shape] : shapes) {
    auto it = c.params.tensors.find(name);
    if (it == c.params.tensors.end()) throw FormatError(origin + ": checkpoint lacks parameter '" + name + "'");
    if (it->second.shape() != shape)
      throw FormatError(origin + ": parameter '" + name + "' has shape " + shape_string(it->second.shape()) + ", expected " +
                        shape_string(shape));
  }
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  io::write_file(path, serialize_checkpoint(checkpoint));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw DataError("checkpoint not found: " + path.string());
  return parse_checkpoint(io::read_file(path), path.string());
}

std::string loss_trace_header() { return "iteration,loss,E_pos_mean,E_neg_mean"; }

std::string loss_trace_row(const LossRecord& r) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%llu,%.17g,%.17g,%.17g", static_cast<unsigned long long>(r.iteration), r.loss,
                r.energy_pos_mean, r.energy_neg_mean);
  return buf;
}

std::vector<FeatureSequence> draw_negatives(const TrainConfig& config, const Utterance& utt, const HypothesisSource& source,
                                            std::uint64_t iteration, std::size_t item) {
  std::vector<FeatureSequence> out;
  for (std::size_t k = 0; k < config.negatives_per_positive; ++k) {
    Rng rng = derive_rng(config.negatives.seed, {config.seed, iteration, item, k});
    out.push_back(draw_negative(config.negatives, utt.features, source, rng, utt.id));
  }
  return out;
}

Checkpoint train(const TrainConfig& config, const std::vector<Utterance>& data, const HypothesisSource& source,
                 Checkpoint state, std::vector<LossRecord>* trace, const TrainHooks& hooks) {
  config.validate();
  if (data.empty()) throw DataError("training set is empty");
  Rng rng = rng_from_state(state.rng_state);
  for (const auto& u : data) check_tokens(state.params.config, u.tokens);

  while (state.iteration < config.iterations) {
    const std::uint64_t it = state.iteration + 1;
    std::vector<TrainingItem> batch;
    batch.reserve(config.batch_size);
    for (std::size_t b = 0; b < config.batch_size; ++b) {
      const Utterance& u = data[uniform_index(rng, data.size())];
      batch.push_back({u.id, &u.tokens, u.features, draw_negatives(config, u, source, it, b)});
    }
    BatchResult r = batch_loss(state.params, batch, true);
    for (const auto& [name, g] : r.gradients)
      if (!g.all_finite())
        throw NumericError("non-finite gradient for '" + name + "' at iteration " + std::to_string(it) +
                           " (batch starts with utterance '" + batch.front().id + "')");
    adam_step(state.params.tensors, r.gradients, state.adam, config.learning_rate);
    state.iteration = it;
    state.rng_state = rng_state(rng);

    LossRecord rec{it, r.loss, r.energy_pos_mean, r.energy_neg_mean};
    if (trace) trace->push_back(rec);
    if (hooks.on_iteration) hooks.on_iteration(rec);
    if (hooks.on_checkpoint && config.checkpoint_interval > 0 && it % config.checkpoint_interval == 0)
      hooks.on_checkpoint(state);
  }
  return state;
}

MarginReport margin_accuracy(const ModelParams& params, const std::vector<Utterance>& data, const NegativeSpec& spec,
                             const HypothesisSource& source, std::uint64_t seed) {
  MarginReport rep;
  std::size_t wins = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Utterance& u = data[i];
    Rng rng = derive_rng(seed, {0x6d61, i});
    FeatureSequence neg = draw_negative(spec, u.features, source, rng, u.id);
    ModelEnergy surface(params, u.tokens);
    double ep = surface.energy(u.features);
    double en = surface.energy(neg);
    if (ep < en) ++wins;
    rep.mean_margin += en - ep;
  }
  rep.pairs = data.size();
  if (rep.pairs) {
    rep.accuracy = static_cast<double>(wins) / static_cast<double>(rep.pairs);
    rep.mean_margin /= static_cast<double>(rep.pairs);
  }
  return rep;
}

}  // namespace ebm
