#pragma once

// Attention-based energy network E(x, Y): a bidirectional text encoder, a
// decoder over feature frames that cross-attends to the encoder memory without
// any causal mask, a per-frame energy head and a softmax-weighted pooling of
// frame energies into one utterance energy.

#include <Eigen/Core>

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ebm/graph.hpp"
#include "ebm/tensor.hpp"

namespace ebm {

struct TokenSequence {
  std::vector<int> ids;

  std::size_t size() const { return ids.size(); }
};

// T x F matrix of feature frames (one row per frame).
using FeatureSequence = RowMatrixXd;

struct ModelConfig {
  std::size_t vocab_size = 8;
  std::size_t embed_dim = 32;     // attention width
  std::size_t hidden_dim = 32;    // feed-forward inner width
  std::size_t heads = 2;
  std::size_t encoder_layers = 1;
  std::size_t decoder_layers = 2;
  std::size_t head_hidden = 64;   // frame-energy MLP width
  std::size_t feature_dim = 16;

  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

using ParamMap = std::map<std::string, TensorXd>;

struct ModelParams {
  ModelConfig config;
  ParamMap tensors;

  const TensorXd& at(const std::string& name) const;
  TensorXd& at(const std::string& name);
  std::vector<std::string> names() const;
  std::size_t count() const;  // total scalar parameters
  bool all_finite() const;
};

// Shapes of every parameter tensor for a configuration.
std::map<std::string, Shape> parameter_shapes(const ModelConfig& config);

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases, unit
// positional scales and a zero weighting scalar.
ModelParams init_params(const ModelConfig& config, std::uint64_t seed);

// Sets every frame-energy head tensor to zero, making E identically 0.
void zero_head(ModelParams& params);

struct EnergyBreakdown {
  double energy = 0.0;
  Eigen::VectorXd frame_energies;
  Eigen::VectorXd weights;
};

// Graph construction -------------------------------------------------------

// Parameter leaves of one graph; each named tensor becomes one shared leaf.
class ParamLeaves {
 public:
  ParamLeaves(Graph<double>& graph, const ModelConfig& config);
  Var<double> operator()(const std::string& name);
  Graph<double>& graph() { return graph_; }
  const ModelConfig& config() const { return config_; }

 private:
  Graph<double>& graph_;
  ModelConfig config_;
  std::map<std::string, Shape> shapes_;
};

Var<double> sinusoidal_positions(Graph<double>& graph, std::size_t length, std::size_t dim);

Var<double> build_encoder(ParamLeaves& p, const TokenSequence& tokens);
Var<double> build_decoder(ParamLeaves& p, Var<double> memory, Var<double> features);
Var<double> build_frame_energies(ParamLeaves& p, Var<double> g);

struct EnergyVars {
  Var<double> energy;   // rank-0
  Var<double> frames;   // [T]
  Var<double> weights;  // [T]
};
EnergyVars build_utterance_energy(ParamLeaves& p, Var<double> frame_energies);

// Full text+features -> energy subgraph. `features` must be a [T, F] node.
EnergyVars build_energy(ParamLeaves& p, const TokenSequence& tokens, Var<double> features);

void bind_params(LeafValues<double>& leaves, const ModelParams& params);

// Standalone operations ------------------------------------------------------

void check_tokens(const ModelConfig& config, const TokenSequence& tokens);

RowMatrixXd encode_text(const ModelParams& params, const TokenSequence& tokens);
RowMatrixXd decode_features(const ModelParams& params, const RowMatrixXd& memory, const FeatureSequence& features);
Eigen::VectorXd frame_energies(const ModelParams& params, const RowMatrixXd& g);
EnergyBreakdown utterance_energy(const ModelParams& params, const Eigen::VectorXd& frame_energies);
EnergyBreakdown energy(const ModelParams& params, const TokenSequence& tokens, const FeatureSequence& features);
RowMatrixXd energy_grad_features(const ModelParams& params, const TokenSequence& tokens, const FeatureSequence& features);

// Energy and feature gradient for repeated queries with a fixed text: the
// encoder memory is computed once.
class EnergySurface {
 public:
  virtual ~EnergySurface() = default;
  virtual double energy(const FeatureSequence& features) const = 0;
  virtual double energy_and_gradient(const FeatureSequence& features, RowMatrixXd& gradient) const = 0;
};

class ModelEnergy final : public EnergySurface {
 public:
  ModelEnergy(const ModelParams& params, const TokenSequence& tokens);
  double energy(const FeatureSequence& features) const override;
  double energy_and_gradient(const FeatureSequence& features, RowMatrixXd& gradient) const override;

 private:
  const ModelParams& params_;
  TensorXd memory_;
};

// E(Y) = 0.5 * ||Y||^2, whose Langevin stationary law is the unit Gaussian.
class QuadraticEnergy final : public EnergySurface {
 public:
  double energy(const FeatureSequence& features) const override;
  double energy_and_gradient(const FeatureSequence& features, RowMatrixXd& gradient) const override;
};

}  // namespace ebm
