#include "ebm/negatives.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace ebm {

std::string NegativeMethod::label() const {
  const char* tag = "RM";
  switch (kind) {
    case Perturbation::RandomMask: tag = "RM"; break;
    case Perturbation::TimeMask: tag = "TM"; break;
    case Perturbation::FrequencyMask: tag = "FM"; break;
    case Perturbation::TimeWarp: tag = "TW"; break;
  }
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s:%g", tag, amount);
  return buf;
}

NegativeMethod parse_method(const std::string& text) {
  auto colon = text.find(':');
  if (colon == std::string::npos) throw ConfigError("negative method '" + text + "' must look like RM:0.25");
  std::string tag = text.substr(0, colon);
  NegativeMethod m;
  if (tag == "RM") m.kind = Perturbation::RandomMask;
  else if (tag == "TM") m.kind = Perturbation::TimeMask;
  else if (tag == "FM") m.kind = Perturbation::FrequencyMask;
  else if (tag == "TW") m.kind = Perturbation::TimeWarp;
  else throw ConfigError("unknown negative method '" + tag + "' (expected RM, TM, FM or TW)");
  std::string value = text.substr(colon + 1);
  try {
    std::size_t used = 0;
    m.amount = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
  } catch (const std::exception&) {
    throw ConfigError("negative method '" + text + "' has a malformed amount");
  }
  return m;
}

std::vector<NegativeMethod> parse_methods(const std::string& text) {
  std::vector<NegativeMethod> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, '+')) {
    auto b = item.find_first_not_of(" \t");
    auto e = item.find_last_not_of(" \t");
    if (b == std::string::npos) continue;
    out.push_back(parse_method(item.substr(b, e - b + 1)));
  }
  return out;
}

std::string format_methods(const std::vector<NegativeMethod>& methods) {
  std::string out;
  for (std::size_t i = 0; i < methods.size(); ++i) out += (i ? "+" : "") + methods[i].label();
  return out;
}

SourceKind parse_source(const std::string& text) {
  if (text == "reference") return SourceKind::Reference;
  if (text == "degraded-hypothesis" || text == "degraded") return SourceKind::DegradedHypothesis;
  if (text == "file") return SourceKind::File;
  throw ConfigError("unknown negative source '" + text + "' (reference | degraded-hypothesis | file)");
}

std::string source_name(SourceKind kind) {
  switch (kind) {
    case SourceKind::Reference: return "reference";
    case SourceKind::DegradedHypothesis: return "degraded-hypothesis";
    case SourceKind::File: return "file";
  }
  return "?";
}

Combination parse_combination(const std::string& text) {
  if (text == "single-method-per-sample" || text == "single") return Combination::SingleMethod;
  if (text == "uniform-mix") return Combination::UniformMix;
  if (text == "compose") return Combination::Compose;
  throw ConfigError("unknown combination policy '" + text + "' (single-method-per-sample | uniform-mix | compose)");
}

std::string combination_name(Combination c) {
  switch (c) {
    case Combination::SingleMethod: return "single-method-per-sample";
    case Combination::UniformMix: return "uniform-mix";
    case Combination::Compose: return "compose";
  }
  return "?";
}

void NegativeSpec::validate() const {
  for (const auto& m : methods) {
    if (m.kind == Perturbation::TimeWarp) {
      if (!(m.amount > 0.0)) throw ConfigError("warp factor must be > 0 in " + m.label());
    } else if (!(m.amount >= 0.0 && m.amount <= 1.0)) {
      throw ConfigError("masking fraction must lie in [0, 1] in " + m.label());
    }
  }
  if (methods.empty() && source == SourceKind::Reference)
    throw ConfigError("negative spec with the reference source needs at least one method (negatives would equal positives)");
  if (!std::isfinite(fill)) throw ConfigError("mask fill value must be finite");
}

HypothesisSource HypothesisSource::reference() { return HypothesisSource{}; }

HypothesisSource HypothesisSource::degraded(std::size_t width, double noise) {
  if (width < 1 || width % 2 == 0) throw ConfigError("smoothing width must be a positive odd number");
  if (!(noise >= 0.0)) throw ConfigError("degradation noise must be >= 0");
  HypothesisSource s;
  s.kind_ = SourceKind::DegradedHypothesis;
  s.width_ = width;
  s.noise_ = noise;
  return s;
}

HypothesisSource HypothesisSource::files(const DatasetManifest& manifest) {
  HypothesisSource s;
  s.kind_ = SourceKind::File;
  for (const auto& e : manifest.entries) s.files_.emplace(e.id, read_features(manifest.resolve(e.features)));
  return s;
}

FeatureSequence HypothesisSource::produce(const std::string& id, const FeatureSequence& reference, Rng& rng) const {
  switch (kind_) {
    case SourceKind::Reference:
      return reference;
    case SourceKind::DegradedHypothesis:
      return degrade_hypothesis(reference, width_, noise_, rng);
    case SourceKind::File: {
      auto it = files_.find(id);
      if (it == files_.end()) throw DataError("no hypothesis file for utterance '" + id + "'");
      if (it->second.cols() != reference.cols())
        throw DataError("hypothesis for '" + id + "' has feature dimension " + std::to_string(it->second.cols()));
      return it->second;
    }
  }
  return reference;
}

FeatureSequence time_mask(const FeatureSequence& y, double p, double fill, Rng& rng) {
  if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("time mask fraction must lie in [0, 1]");
  FeatureSequence out = y;
  const auto frames = static_cast<std::size_t>(y.rows());
  std::size_t count = std::min(frames, round_half_up(p * static_cast<double>(frames)));
  if (count == 0) return out;
  std::size_t start = uniform_index(rng, frames - count + 1);
  out.middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(count)).setConstant(fill);
  return out;
}

FeatureSequence freq_mask(const FeatureSequence& y, double p, double fill, Rng& rng) {
  if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("frequency mask fraction must lie in [0, 1]");
  FeatureSequence out = y;
  const auto bins = static_cast<std::size_t>(y.cols());
  std::size_t count = std::min(bins, round_half_up(p * static_cast<double>(bins)));
  if (count == 0) return out;
  std::size_t start = uniform_index(rng, bins - count + 1);
  out.middleCols(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(count)).setConstant(fill);
  return out;
}

FeatureSequence random_mask(const FeatureSequence& y, double p, double fill, Rng& rng) {
  if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("random mask fraction must lie in [0, 1]");
  FeatureSequence out = y;
  if (p == 0.0) return out;
  for (Eigen::Index i = 0; i < out.size(); ++i)
    if (uniform01(rng) < p) out.data()[i] = fill;
  return out;
}

FeatureSequence time_warp(const FeatureSequence& y, double factor) {
  if (!(factor > 0.0)) throw ConfigError("warp factor must be > 0");
  const auto frames = static_cast<std::size_t>(y.rows());
  const std::size_t warped = round_half_up(static_cast<double>(frames) / factor);
  if (warped < 1) throw DataError("time warp by " + std::to_string(factor) + " leaves no frames");
  FeatureSequence out(static_cast<Eigen::Index>(warped), y.cols());
  for (std::size_t t = 0; t < warped; ++t) {
    double pos = warped > 1 ? static_cast<double>(t) * static_cast<double>(frames - 1) / static_cast<double>(warped - 1) : 0.0;
    auto lo = static_cast<std::size_t>(std::floor(pos));
    lo = std::min(lo, frames - 1);
    double frac = pos - static_cast<double>(lo);
    auto row = static_cast<Eigen::Index>(t);
    if (frac == 0.0 || lo + 1 >= frames)
      out.row(row) = y.row(static_cast<Eigen::Index>(lo));
    else
      out.row(row) = (1.0 - frac) * y.row(static_cast<Eigen::Index>(lo)) + frac * y.row(static_cast<Eigen::Index>(lo + 1));
  }
  return out;
}

FeatureSequence apply_method(const NegativeMethod& method, const FeatureSequence& y, double fill, Rng& rng) {
  switch (method.kind) {
    case Perturbation::RandomMask: return random_mask(y, method.amount, fill, rng);
    case Perturbation::TimeMask: return time_mask(y, method.amount, fill, rng);
    case Perturbation::FrequencyMask: return freq_mask(y, method.amount, fill, rng);
    case Perturbation::TimeWarp: return time_warp(y, method.amount);
  }
  return y;
}

FeatureSequence draw_negative(const NegativeSpec& spec, const FeatureSequence& reference,
                              const HypothesisSource& source, Rng& rng, const std::string& id) {
  spec.validate();
  if (spec.source != source.kind())
    throw ConfigError("negative spec source '" + source_name(spec.source) + "' does not match the provided source '" +
                      source_name(source.kind()) + "'");
  FeatureSequence base = source.produce(id, reference, rng);
  if (spec.methods.empty()) return base;
  if (spec.combination == Combination::Compose) {
    for (const auto& m : spec.methods) base = apply_method(m, base, spec.fill, rng);
    return base;
  }
  const NegativeMethod& pick = spec.methods[uniform_index(rng, spec.methods.size())];
  return apply_method(pick, base, spec.fill, rng);
}

}  // namespace ebm
