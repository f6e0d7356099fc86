#pragma once

// Batch commands behind the `ebm` CLI. Each takes a fully merged RunConfig,
// writes its artifacts (plus `resolved-config.toml`) to its output directory
// and returns the in-memory results for callers that want them.

#include <array>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ebm/config.hpp"
#include "ebm/data.hpp"
#include "ebm/metrics.hpp"
#include "ebm/samplers.hpp"
#include "ebm/training.hpp"

namespace ebm {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumeric = 4;

int exit_code_for(const std::exception& error);

inline constexpr const char* kResolvedConfigName = "resolved-config.toml";
inline constexpr const char* kWorkersEnv = "EBM_WORKERS";

void write_resolved_config(const std::filesystem::path& dir, const RunConfig& config, const std::string& command);

// ---- config translation -----------------------------------------------------

SyntheticTaskSpec task_spec(const RunConfig& config);
std::array<double, 3> split_fractions(const RunConfig& config);
ModelConfig model_config(const RunConfig& config, std::size_t feature_dim);
// `fill` resolves "min" against the training-set minimum.
TrainConfig train_config(const RunConfig& config, const FeatureStats& stats);
HypothesisSource training_source(const RunConfig& config);
SamplerConfig sampler_config(const RunConfig& config);
std::size_t worker_count(const RunConfig& config);

// Pairs hypotheses with references by id; any id missing on either side is a
// DataError listing them.
MetricsReport evaluate_sets(const std::vector<Utterance>& references, const std::vector<Utterance>& hypotheses,
                            std::size_t cepstral_order = 0);

// ---- commands ---------------------------------------------------------------

struct GenDataResult {
  std::filesystem::path dir;
  std::array<std::size_t, 3> sizes{};  // train, val, test
};
GenDataResult cmd_gen_data(const RunConfig& config);

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<LossRecord> trace;  // records produced by this invocation
  std::filesystem::path checkpoint_path;
  std::filesystem::path trace_path;
};
TrainResult cmd_train(const RunConfig& config);

// Refines every utterance of `utterances` from its own seed stream
// derive_rng(seed, {index}).
std::vector<SamplerTrace> refine_utterances(const ModelParams& params, const std::vector<Utterance>& utterances,
                                            const SamplerConfig& sampler, const std::optional<FeatureStats>& prior);

struct RefineResult {
  std::filesystem::path manifest_path;
  std::vector<Utterance> refined;
  std::vector<SamplerTrace> traces;
  std::optional<MetricsReport> metrics;  // when refine.reference is set
};
RefineResult cmd_refine(const RunConfig& config);

MetricsReport cmd_eval(const RunConfig& config);

struct CompareSeries {
  std::string variant;
  std::vector<double> energy_mean;  // per step, N + 1 values
  std::vector<double> mcd_median;
};
struct CompareResult {
  std::vector<CompareSeries> series;
  std::filesystem::path csv_path;
  std::filesystem::path energy_svg;
  std::filesystem::path mcd_svg;
};
CompareResult cmd_compare_samplers(const RunConfig& config);

struct AblationRow {
  std::string group;      // hypothesis | single | combination
  std::string condition;  // e.g. "RM:0.30+TM:0.05"
  bool ok = false;
  std::string error;
  double mcd_median = 0.0;
  SummaryStat mcd;
  SummaryStat ffe;
  SummaryStat log_f0_rmse;
};
struct AblationResult {
  std::vector<AblationRow> rows;
  std::filesystem::path csv_path;

  const AblationRow* find(const std::string& group, const std::string& condition) const;
  std::string to_csv() const;
};
AblationResult cmd_ablate(const RunConfig& config);

}  // namespace ebm
