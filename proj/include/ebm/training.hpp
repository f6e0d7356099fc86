#pragma once

// NCE objective, Adam and the training loop over (positive, negative) pairs,
// plus checkpoint persistence.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "ebm/data.hpp"
#include "ebm/model.hpp"
#include "ebm/negatives.hpp"
#include "ebm/random.hpp"

namespace ebm {

// softplus(E_pos) + softplus(-E_neg).
double nce_loss(double energy_pos, double energy_neg);

// The same objective as a graph node.
Var<double> nce_loss(Var<double> energy_pos, Var<double> energy_neg);

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t step = 0;
  ParamMap m;
  ParamMap v;

  static AdamState zeros_like(const ParamMap& params);
};

// Bias-corrected Adam update of every tensor that has a gradient.
void adam_step(ParamMap& params, const ParamMap& grads, AdamState& state, double learning_rate);

struct TrainConfig {
  double learning_rate = 1e-4;
  std::size_t batch_size = 16;
  std::size_t iterations = 5000;
  std::size_t negatives_per_positive = 1;
  std::size_t checkpoint_interval = 1000;  // 0 disables intermediate checkpoints
  std::uint64_t seed = 1;
  NegativeSpec negatives;

  void validate() const;
};

struct TrainingItem {
  std::string id;
  const TokenSequence* tokens = nullptr;
  FeatureSequence positive;
  std::vector<FeatureSequence> negatives;
};

struct BatchResult {
  double loss = 0.0;
  double energy_pos_mean = 0.0;
  double energy_neg_mean = 0.0;
  ParamMap gradients;  // empty unless requested
};

// Mean NCE loss over every (positive, negative) pair of the batch. The text of
// each item is encoded once and shared by its positive and negatives.
Var<double> build_batch_loss(ParamLeaves& p, const std::vector<TrainingItem>& batch, std::vector<Var<double>>* pos_energies = nullptr,
                             std::vector<Var<double>>* neg_energies = nullptr);

BatchResult batch_loss(const ModelParams& params, const std::vector<TrainingItem>& batch, bool with_gradients);

struct Checkpoint {
  static constexpr std::uint32_t kFormatVersion = 1;

  ModelParams params;
  AdamState adam;
  std::uint64_t iteration = 0;
  std::string rng_state;  // batch-sampling engine
};

Checkpoint initial_checkpoint(const ModelConfig& model, std::uint64_t seed);

std::string serialize_checkpoint(const Checkpoint& checkpoint);
Checkpoint parse_checkpoint(std::string bytes, const std::string& origin = "<memory>");
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

struct LossRecord {
  std::uint64_t iteration = 0;
  double loss = 0.0;
  double energy_pos_mean = 0.0;
  double energy_neg_mean = 0.0;
};

std::string loss_trace_header();
std::string loss_trace_row(const LossRecord& record);

struct TrainHooks {
  std::function<void(const Checkpoint&)> on_checkpoint;
  std::function<void(const LossRecord&)> on_iteration;
};

// Draws the negatives of one positive; seeds derive from (seed, iteration,
// item index, negative index), so a batch does not depend on evaluation order.
std::vector<FeatureSequence> draw_negatives(const TrainConfig& config, const Utterance& utt, const HypothesisSource& source,
                                            std::uint64_t iteration, std::size_t item);

// Runs config.iterations - start.iteration further updates from `start`.
// Non-finite losses abort with a NumericError naming the utterance.
Checkpoint train(const TrainConfig& config, const std::vector<Utterance>& data, const HypothesisSource& source,
                 Checkpoint start, std::vector<LossRecord>* trace = nullptr, const TrainHooks& hooks = {});

struct MarginReport {
  double accuracy = 0.0;  // fraction with E(x, Y+) < E(x, Y-)
  double mean_margin = 0.0;
  std::size_t pairs = 0;
};

// One fresh negative per utterance drawn with `spec` from a stream seeded by `seed`.
MarginReport margin_accuracy(const ModelParams& params, const std::vector<Utterance>& data, const NegativeSpec& spec,
                             const HypothesisSource& source, std::uint64_t seed);

}  // namespace ebm
