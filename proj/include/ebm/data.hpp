#pragma once

// Synthetic text-to-feature task, feature/F0/text file formats, dataset
// manifests and the hypothesis degradation operator.
//
// Synthetic utterances are piecewise-constant per token: every token k owns a
// seeded spectral prototype, repeated for `frames_per_token` frames, plus
// Gaussian observation noise. Channel 0 is the pitch channel: it carries
// log(F0 / 100 Hz) on voiced frames and a fixed low level on unvoiced ones, so
// any feature sequence (reference, degraded or refined) has a readable F0.

#include <Eigen/Core>

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ebm/model.hpp"
#include "ebm/random.hpp"

namespace ebm {

using F0Track = Eigen::VectorXd;  // Hz per frame, 0 = unvoiced

inline constexpr std::size_t kPitchChannel = 0;
inline constexpr double kUnvoicedLevel = -2.0;
inline constexpr double kVoicingThreshold = -1.0;
inline constexpr double kPitchReferenceHz = 100.0;

// All count computations (mask sizes, split sizes, warped lengths) round half up.
inline std::size_t round_half_up(double x) { return x <= 0.0 ? 0 : static_cast<std::size_t>(std::floor(x + 0.5)); }

struct SyntheticTaskSpec {
  std::size_t vocab_size = 8;
  std::size_t frames_per_token = 5;
  std::size_t feature_dim = 16;
  double noise = 0.05;
  std::size_t min_tokens = 4;
  std::size_t max_tokens = 10;
  std::uint64_t seed = 1;

  void validate() const;
};

struct Utterance {
  std::string id;
  TokenSequence tokens;
  FeatureSequence features;
  std::optional<F0Track> f0;
};

class SyntheticTask {
 public:
  explicit SyntheticTask(const SyntheticTaskSpec& spec);

  const SyntheticTaskSpec& spec() const { return spec_; }
  // V x F prototype matrix; column kPitchChannel is overwritten by the F0 rule.
  const RowMatrixXd& prototypes() const { return prototypes_; }

  // Token 0 is unvoiced; token k > 0 has base 100 + 20 k Hz with a slow
  // sinusoidal contour over the utterance.
  F0Track f0_track(const TokenSequence& tokens) const;
  FeatureSequence mean_features(const TokenSequence& tokens) const;
  Utterance sample(const std::string& id, Rng& rng) const;
  TokenSequence sample_tokens(Rng& rng) const;

  // Negative log-likelihood of Y under the generative rule (up to a constant);
  // +inf when the frame count does not match the text.
  double bayes_energy(const TokenSequence& tokens, const FeatureSequence& features) const;

 private:
  SyntheticTaskSpec spec_;
  RowMatrixXd prototypes_;
};

std::vector<Utterance> generate_synthetic(const SyntheticTaskSpec& spec, std::size_t count, Rng& rng);

double pitch_level(double f0_hz);
F0Track f0_from_features(const FeatureSequence& features);

// Moving average along time over an odd window (edges clamped), then additive
// Gaussian noise of standard deviation `noise`.
FeatureSequence degrade_hypothesis(const FeatureSequence& features, std::size_t width, double noise, Rng& rng);

// ---- files ---------------------------------------------------------------

void write_features(const std::filesystem::path& path, const FeatureSequence& features);
FeatureSequence read_features(const std::filesystem::path& path);
std::string serialize_features(const FeatureSequence& features);
FeatureSequence parse_features(std::string bytes, const std::string& origin = "<memory>");

void write_f0(const std::filesystem::path& path, const F0Track& f0);
F0Track read_f0(const std::filesystem::path& path);

void write_tokens(const std::filesystem::path& path, const TokenSequence& tokens);
TokenSequence read_tokens(const std::filesystem::path& path);

struct ManifestEntry {
  std::string id;
  std::string text;      // paths are relative to the manifest directory
  std::string features;
  std::string f0;        // empty when absent
};

struct DatasetManifest {
  static constexpr int kFormatVersion = 1;

  int format_version = kFormatVersion;
  std::string split;
  std::vector<ManifestEntry> entries;
  std::filesystem::path base_dir;  // not serialized

  std::filesystem::path resolve(const std::string& relative) const { return base_dir / relative; }
};

void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);
// Parses and validates: unique ids, every referenced file present.
DatasetManifest read_manifest(const std::filesystem::path& path);

Utterance load_utterance(const DatasetManifest& manifest, const ManifestEntry& entry);
std::vector<Utterance> load_utterances(const DatasetManifest& manifest);

// Writes text/features/F0 files under `dir/<subdir>/` and returns the entry.
ManifestEntry store_utterance(const std::filesystem::path& dir, const std::string& subdir, const Utterance& utt);

// Seeded shuffle split into (train, val, test) index lists. Sizes are
// round(f_train n), round(f_val n) and the remainder.
std::array<std::vector<std::size_t>, 3> split_dataset(std::size_t count, const std::array<double, 3>& fractions,
                                                      std::uint64_t seed);

struct FeatureStats {
  Eigen::VectorXd mean;      // per bin
  Eigen::VectorXd variance;  // per bin
  double minimum = 0.0;
};

FeatureStats feature_stats(const std::vector<Utterance>& utterances);

}  // namespace ebm
