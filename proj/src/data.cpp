#include "ebm/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <set>
#include <sstream>

#include "ebm/binary_io.hpp"
#include "json.hpp"

namespace ebm {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {
constexpr std::uint32_t kFeatureVersion = 1;
constexpr double kContourDepth = 0.05;
constexpr double kContourPeriod = 20.0;  // frames
}  // namespace

void SyntheticTaskSpec::validate() const {
  if (vocab_size < 2) throw ConfigError("synthetic vocabulary needs at least 2 tokens");
  if (frames_per_token < 1) throw ConfigError("frames_per_token must be >= 1");
  if (feature_dim < 2) throw ConfigError("feature_dim must be >= 2 (channel 0 carries pitch)");
  if (!(noise >= 0.0)) throw ConfigError("synthetic noise must be >= 0");
  if (min_tokens < 1 || max_tokens < min_tokens) throw ConfigError("token length range is empty");
}

SyntheticTask::SyntheticTask(const SyntheticTaskSpec& spec) : spec_(spec) {
  spec_.validate();
  Rng rng(derive_seed(spec.seed, {0x5eed}));
  prototypes_.resize(static_cast<Eigen::Index>(spec.vocab_size), static_cast<Eigen::Index>(spec.feature_dim));
  for (Eigen::Index k = 0; k < prototypes_.rows(); ++k)
    for (Eigen::Index f = 0; f < prototypes_.cols(); ++f) prototypes_(k, f) = -2.0 + standard_normal(rng);
  for (Eigen::Index k = 0; k < prototypes_.rows(); ++k)
    prototypes_(k, kPitchChannel) = k == 0 ? kUnvoicedLevel : pitch_level(kPitchReferenceHz + 20.0 * static_cast<double>(k));
}

F0Track SyntheticTask::f0_track(const TokenSequence& tokens) const {
  const std::size_t d = spec_.frames_per_token;
  F0Track f0(static_cast<Eigen::Index>(tokens.size() * d));
  for (std::size_t i = 0; i < tokens.size(); ++i)
    for (std::size_t j = 0; j < d; ++j) {
      std::size_t t = i * d + j;
      int k = tokens.ids[i];
      double contour = 1.0 + kContourDepth * std::sin(2.0 * std::numbers::pi * static_cast<double>(t) / kContourPeriod);
      f0(static_cast<Eigen::Index>(t)) = k == 0 ? 0.0 : (kPitchReferenceHz + 20.0 * k) * contour;
    }
  return f0;
}

FeatureSequence SyntheticTask::mean_features(const TokenSequence& tokens) const {
  const std::size_t d = spec_.frames_per_token;
  FeatureSequence y(static_cast<Eigen::Index>(tokens.size() * d), prototypes_.cols());
  F0Track f0 = f0_track(tokens);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens.ids[i] < 0 || static_cast<std::size_t>(tokens.ids[i]) >= spec_.vocab_size)
      throw DataError("token id " + std::to_string(tokens.ids[i]) + " outside synthetic vocabulary");
    for (std::size_t j = 0; j < d; ++j) {
      auto t = static_cast<Eigen::Index>(i * d + j);
      y.row(t) = prototypes_.row(tokens.ids[i]);
      y(t, kPitchChannel) = f0(t) > 0.0 ? pitch_level(f0(t)) : kUnvoicedLevel;
    }
  }
  return y;
}

TokenSequence SyntheticTask::sample_tokens(Rng& rng) const {
  std::size_t len = spec_.min_tokens + uniform_index(rng, spec_.max_tokens - spec_.min_tokens + 1);
  TokenSequence x;
  for (std::size_t i = 0; i < len; ++i) x.ids.push_back(static_cast<int>(uniform_index(rng, spec_.vocab_size)));
  return x;
}

Utterance SyntheticTask::sample(const std::string& id, Rng& rng) const {
  Utterance u;
  u.id = id;
  u.tokens = sample_tokens(rng);
  u.features = mean_features(u.tokens);
  for (Eigen::Index i = 0; i < u.features.size(); ++i) u.features.data()[i] += spec_.noise * standard_normal(rng);
  u.f0 = f0_track(u.tokens);
  return u;
}

double SyntheticTask::bayes_energy(const TokenSequence& tokens, const FeatureSequence& features) const {
  if (static_cast<std::size_t>(features.rows()) != tokens.size() * spec_.frames_per_token ||
      features.cols() != prototypes_.cols())
    return std::numeric_limits<double>::infinity();
  double var = std::max(spec_.noise * spec_.noise, 1e-12);
  return (features - mean_features(tokens)).squaredNorm() / (2.0 * var);
}

std::vector<Utterance> generate_synthetic(const SyntheticTaskSpec& spec, std::size_t count, Rng& rng) {
  if (count < 1) throw ConfigError("utterance count must be >= 1");
  SyntheticTask task(spec);
  std::vector<Utterance> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    char id[32];
    std::snprintf(id, sizeof(id), "utt%05zu", i);
    out.push_back(task.sample(id, rng));
  }
  return out;
}

double pitch_level(double f0_hz) { return std::log(f0_hz / kPitchReferenceHz); }

F0Track f0_from_features(const FeatureSequence& features) {
  F0Track f0(features.rows());
  for (Eigen::Index t = 0; t < features.rows(); ++t) {
    double level = features(t, kPitchChannel);
    f0(t) = level > kVoicingThreshold ? kPitchReferenceHz * std::exp(level) : 0.0;
  }
  return f0;
}

FeatureSequence degrade_hypothesis(const FeatureSequence& features, std::size_t width, double noise, Rng& rng) {
  if (width < 1 || width % 2 == 0) throw ConfigError("smoothing width must be a positive odd number");
  if (!(noise >= 0.0)) throw ConfigError("degradation noise must be >= 0");
  const Eigen::Index frames = features.rows();
  const auto half = static_cast<Eigen::Index>(width / 2);
  FeatureSequence out(frames, features.cols());
  for (Eigen::Index t = 0; t < frames; ++t) {
    out.row(t).setZero();
    for (Eigen::Index k = -half; k <= half; ++k) out.row(t) += features.row(std::clamp<Eigen::Index>(t + k, 0, frames - 1));
    out.row(t) /= static_cast<double>(width);
  }
  if (noise > 0.0)
    for (Eigen::Index i = 0; i < out.size(); ++i) out.data()[i] += noise * standard_normal(rng);
  return out;
}

// ---- files -----------------------------------------------------------------

std::string serialize_features(const FeatureSequence& features) {
  io::Writer w;
  w.bytes("EBMF");
  w.u32(kFeatureVersion);
  w.u32(static_cast<std::uint32_t>(features.rows()));
  w.u32(static_cast<std::uint32_t>(features.cols()));
  for (Eigen::Index i = 0; i < features.size(); ++i) w.f64(features.data()[i]);
  return w.buffer();
}

FeatureSequence parse_features(std::string bytes, const std::string& origin) {
  io::Reader r(std::move(bytes), origin);
  r.expect_magic("EBMF");
  std::uint32_t version = r.u32();
  if (version != kFeatureVersion) throw FormatError(origin + ": unsupported feature file version " + std::to_string(version));
  std::uint64_t frames = r.u32();
  std::uint64_t dim = r.u32();
  if (frames == 0 || dim == 0) throw FormatError(origin + ": zero dimension");
  if (frames * dim > r.remaining() / sizeof(double))
    throw FormatError(origin + ": header declares " + std::to_string(frames) + "x" + std::to_string(dim) +
                      " values but the file is truncated");
  FeatureSequence y(static_cast<Eigen::Index>(frames), static_cast<Eigen::Index>(dim));
  for (Eigen::Index i = 0; i < y.size(); ++i) y.data()[i] = r.f64();
  if (r.remaining() != 0) throw FormatError(origin + ": trailing bytes after feature payload");
  return y;
}

void write_features(const fs::path& path, const FeatureSequence& features) {
  io::write_file(path, serialize_features(features));
}

FeatureSequence read_features(const fs::path& path) { return parse_features(io::read_file(path), path.string()); }

void write_f0(const fs::path& path, const F0Track& f0) {
  io::Writer w;
  w.bytes("EBF0");
  w.u32(static_cast<std::uint32_t>(f0.size()));
  for (Eigen::Index i = 0; i < f0.size(); ++i) w.f64(f0(i));
  io::write_file(path, w.buffer());
}

F0Track read_f0(const fs::path& path) {
  io::Reader r(io::read_file(path), path.string());
  r.expect_magic("EBF0");
  std::uint64_t frames = r.u32();
  if (frames > r.remaining() / sizeof(double)) throw FormatError(path.string() + ": truncated file");
  F0Track f0(static_cast<Eigen::Index>(frames));
  for (Eigen::Index i = 0; i < f0.size(); ++i) f0(i) = r.f64();
  return f0;
}

void write_tokens(const fs::path& path, const TokenSequence& tokens) {
  std::ostringstream os;
  for (std::size_t i = 0; i < tokens.size(); ++i) os << (i ? " " : "") << tokens.ids[i];
  os << '\n';
  io::write_file(path, os.str());
}

TokenSequence read_tokens(const fs::path& path) {
  std::istringstream is(io::read_file(path));
  TokenSequence x;
  std::string word;
  while (is >> word) {
    std::size_t used = 0;
    int id = 0;
    try {
      id = std::stoi(word, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != word.size()) throw FormatError(path.string() + ": token '" + word + "' is not an integer id");
    x.ids.push_back(id);
  }
  if (x.ids.empty()) throw FormatError(path.string() + ": empty token sequence");
  return x;
}

void write_manifest(const fs::path& path, const DatasetManifest& manifest) {
  json doc;
  doc["format_version"] = manifest.format_version;
  doc["split"] = manifest.split;
  doc["utterances"] = json::array();
  for (const auto& e : manifest.entries) {
    json item = {{"id", e.id}, {"text", e.text}, {"features", e.features}};
    if (!e.f0.empty()) item["f0"] = e.f0;
    doc["utterances"].push_back(std::move(item));
  }
  io::write_file(path, doc.dump(2) + "\n");
}

DatasetManifest read_manifest(const fs::path& path) {
  json doc;
  try {
    doc = json::parse(io::read_file(path));
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": invalid manifest JSON: " + e.what());
  }
  DatasetManifest m;
  m.base_dir = path.parent_path();
  try {
    m.format_version = doc.at("format_version").get<int>();
    if (m.format_version != DatasetManifest::kFormatVersion)
      throw FormatError(path.string() + ": unsupported manifest version " + std::to_string(m.format_version));
    m.split = doc.at("split").get<std::string>();
    for (const auto& item : doc.at("utterances")) {
      ManifestEntry e;
      e.id = item.at("id").get<std::string>();
      e.text = item.at("text").get<std::string>();
      e.features = item.at("features").get<std::string>();
      if (item.contains("f0")) e.f0 = item.at("f0").get<std::string>();
      m.entries.push_back(std::move(e));
    }
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": malformed manifest: " + e.what());
  }
  std::set<std::string> ids;
  for (const auto& e : m.entries) {
    if (!ids.insert(e.id).second) throw DataError(path.string() + ": duplicate utterance id '" + e.id + "'");
    for (const std::string* rel : {&e.text, &e.features, &e.f0}) {
      if (rel->empty() && rel == &e.f0) continue;
      if (!fs::exists(m.resolve(*rel)))
        throw DataError(path.string() + ": utterance '" + e.id + "' references missing file " + *rel);
    }
  }
  return m;
}

Utterance load_utterance(const DatasetManifest& manifest, const ManifestEntry& entry) {
  Utterance u;
  u.id = entry.id;
  u.tokens = read_tokens(manifest.resolve(entry.text));
  u.features = read_features(manifest.resolve(entry.features));
  if (!entry.f0.empty()) {
    u.f0 = read_f0(manifest.resolve(entry.f0));
    if (u.f0->size() != u.features.rows())
      throw DataError("utterance '" + entry.id + "': F0 track length differs from feature frame count");
  }
  return u;
}

std::vector<Utterance> load_utterances(const DatasetManifest& manifest) {
  std::vector<Utterance> out;
  out.reserve(manifest.entries.size());
  for (const auto& e : manifest.entries) out.push_back(load_utterance(manifest, e));
  return out;
}

ManifestEntry store_utterance(const fs::path& dir, const std::string& subdir, const Utterance& utt) {
  ManifestEntry e;
  e.id = utt.id;
  e.text = subdir + "/" + utt.id + ".txt";
  e.features = subdir + "/" + utt.id + ".feat";
  write_tokens(dir / e.text, utt.tokens);
  write_features(dir / e.features, utt.features);
  if (utt.f0) {
    e.f0 = subdir + "/" + utt.id + ".f0";
    write_f0(dir / e.f0, *utt.f0);
  }
  return e;
}

std::array<std::vector<std::size_t>, 3> split_dataset(std::size_t count, const std::array<double, 3>& fractions,
                                                      std::uint64_t seed) {
  if (count == 0) throw DataError("cannot split an empty dataset");
  double total = 0.0;
  for (double f : fractions) {
    if (!(f >= 0.0 && f <= 1.0)) throw ConfigError("split fractions must lie in [0, 1]");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-6) throw ConfigError("split fractions must sum to 1 (got " + std::to_string(total) + ")");

  std::vector<std::size_t> order(count);
  for (std::size_t i = 0; i < count; ++i) order[i] = i;
  Rng rng(derive_seed(seed, {0x5b1d}));
  for (std::size_t i = count; i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);

  std::size_t n_train = std::min(count, round_half_up(fractions[0] * static_cast<double>(count)));
  std::size_t n_val = std::min(count - n_train, round_half_up(fractions[1] * static_cast<double>(count)));
  std::array<std::vector<std::size_t>, 3> out;
  out[0].assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  out[1].assign(order.begin() + static_cast<std::ptrdiff_t>(n_train),
                order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  out[2].assign(order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), order.end());
  return out;
}

FeatureStats feature_stats(const std::vector<Utterance>& utterances) {
  if (utterances.empty()) throw DataError("feature statistics need at least one utterance");
  const Eigen::Index dim = utterances.front().features.cols();
  FeatureStats s;
  s.mean = Eigen::VectorXd::Zero(dim);
  Eigen::VectorXd sq = Eigen::VectorXd::Zero(dim);
  s.minimum = std::numeric_limits<double>::infinity();
  double frames = 0.0;
  for (const auto& u : utterances) {
    if (u.features.cols() != dim) throw DataError("utterance '" + u.id + "' has a different feature dimension");
    s.mean += u.features.colwise().sum().transpose();
    sq += u.features.array().square().colwise().sum().matrix().transpose();
    s.minimum = std::min(s.minimum, u.features.minCoeff());
    frames += static_cast<double>(u.features.rows());
  }
  s.mean /= frames;
  s.variance = (sq / frames - s.mean.cwiseAbs2()).cwiseMax(0.0);
  return s;
}

}  // namespace ebm
