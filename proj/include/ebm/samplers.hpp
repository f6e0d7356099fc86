#pragma once

// Inference-time refinement of feature sequences by following the energy
// gradient: full Langevin MCMC, its noiseless Adam-driven simplification and
// an annealed score-based update.

#include <cstdint>
#include <string>
#include <vector>

#include "ebm/data.hpp"
#include "ebm/model.hpp"
#include "ebm/random.hpp"

namespace ebm {

enum class SamplerVariant { Langevin, SimplifiedAdam, AnnealedScore };

SamplerVariant parse_variant(const std::string& text);
std::string variant_name(SamplerVariant v);

struct SamplerConfig {
  SamplerVariant variant = SamplerVariant::SimplifiedAdam;
  double step_size = 1e-2;       // lambda
  double noise_variance = 1.0;   // mu (Langevin only)
  std::size_t steps = 100;       // N
  double anneal_start = 0.1;     // annealed variant: geometric schedule
  double anneal_end = 1e-3;
  std::uint64_t seed = 1;
  bool record_states = false;    // keep every intermediate Y in the trace

  static double default_step_size(SamplerVariant v);
  void validate() const;
};

struct SamplerTrace {
  std::vector<double> energies;      // N + 1 values, index 0 is the initial state
  std::vector<double> update_norms;  // N + 1 values, index 0 is 0
  std::vector<FeatureSequence> states;  // N + 1 states when recorded
  FeatureSequence final;

  std::size_t steps() const { return energies.size() - 1; }
  std::string to_csv() const;  // step,energy,update_norm
};

// Y - lambda grad E + sqrt(2 lambda) z, z ~ N(0, mu I).
FeatureSequence langevin_step(const EnergySurface& surface, const FeatureSequence& y, double step_size,
                              double noise_variance, Rng& rng);

SamplerTrace langevin_run(const EnergySurface& surface, const FeatureSequence& y0, const SamplerConfig& config, Rng& rng);
SamplerTrace simplified_adam_run(const EnergySurface& surface, const FeatureSequence& y0, const SamplerConfig& config);

// lambda_1 .. lambda_N, geometric from anneal_start to anneal_end.
std::vector<double> anneal_schedule(const SamplerConfig& config);
// Y' = (Y + lambda_n S) / sqrt(1 - lambda_n) + sqrt(lambda_n) z with S = -grad E.
SamplerTrace annealed_score_run(const EnergySurface& surface, const FeatureSequence& y0,
                                const std::vector<double>& schedule, Rng& rng,
                                bool record_states = false);
SamplerTrace annealed_score_run(const EnergySurface& surface, const FeatureSequence& y0, const SamplerConfig& config, Rng& rng);

// Dispatches on config.variant.
SamplerTrace run_sampler(const EnergySurface& surface, const FeatureSequence& y0, const SamplerConfig& config, Rng& rng);

// Per-cell draw from N(mean_f, var_f) for a sequence of `frames` frames.
FeatureSequence gaussian_prior(const FeatureStats& stats, std::size_t frames, Rng& rng);

}  // namespace ebm
