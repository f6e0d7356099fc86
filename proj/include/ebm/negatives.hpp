#pragma once

// Negative-sample generation for NCE: a hypothesis source (the reference
// itself, a degraded copy of it, or precomputed files) followed by masking or
// warping perturbations.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ebm/data.hpp"
#include "ebm/random.hpp"

namespace ebm {

enum class Perturbation { RandomMask, TimeMask, FrequencyMask, TimeWarp };

struct NegativeMethod {
  Perturbation kind = Perturbation::RandomMask;
  double amount = 0.0;  // masking fraction p, or warp factor f

  std::string label() const;  // e.g. "RM:0.25"
  friend bool operator==(const NegativeMethod&, const NegativeMethod&) = default;
};

// "RM:0.25", "TM:0.05", "FM:0.10", "TW:1.2"; several joined by '+'.
NegativeMethod parse_method(const std::string& text);
std::vector<NegativeMethod> parse_methods(const std::string& text);
std::string format_methods(const std::vector<NegativeMethod>& methods);

enum class SourceKind { Reference, DegradedHypothesis, File };

enum class Combination {
  SingleMethod,  // one enabled method per drawn negative, chosen uniformly
  UniformMix,    // same per-sample policy, the name used for multi-method runs
  Compose,       // apply every enabled method in order
};

SourceKind parse_source(const std::string& text);
std::string source_name(SourceKind kind);
Combination parse_combination(const std::string& text);
std::string combination_name(Combination c);

struct NegativeSpec {
  SourceKind source = SourceKind::DegradedHypothesis;
  std::vector<NegativeMethod> methods;
  Combination combination = Combination::SingleMethod;
  double fill = 0.0;
  std::uint64_t seed = 1;

  void validate() const;
};

class HypothesisSource {
 public:
  static HypothesisSource reference();
  static HypothesisSource degraded(std::size_t width, double noise);
  // Hypotheses keyed by utterance id, loaded eagerly from a manifest.
  static HypothesisSource files(const DatasetManifest& manifest);

  SourceKind kind() const { return kind_; }
  std::size_t width() const { return width_; }
  double noise() const { return noise_; }

  FeatureSequence produce(const std::string& id, const FeatureSequence& reference, Rng& rng) const;

 private:
  SourceKind kind_ = SourceKind::Reference;
  std::size_t width_ = 1;
  double noise_ = 0.0;
  std::map<std::string, FeatureSequence> files_;
};

// Replaces round(p T) consecutive frames (uniform start) with `fill`.
FeatureSequence time_mask(const FeatureSequence& y, double p, double fill, Rng& rng);
// Replaces round(p F) consecutive bins (uniform start) with `fill` in every frame.
FeatureSequence freq_mask(const FeatureSequence& y, double p, double fill, Rng& rng);
// Replaces each cell independently with probability p.
FeatureSequence random_mask(const FeatureSequence& y, double p, double fill, Rng& rng);
// Linear resampling to round(T / f) frames; f > 1 compresses, f < 1 stretches.
FeatureSequence time_warp(const FeatureSequence& y, double factor);

FeatureSequence apply_method(const NegativeMethod& method, const FeatureSequence& y, double fill, Rng& rng);

FeatureSequence draw_negative(const NegativeSpec& spec, const FeatureSequence& reference,
                              const HypothesisSource& source, Rng& rng, const std::string& id = {});

}  // namespace ebm
