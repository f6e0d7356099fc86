#include "ebm/config.hpp"

#include <charconv>
#include <cmath>
#include <sstream>

#include "ebm/binary_io.hpp"

namespace ebm {

namespace {

std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// Strips a trailing comment that is not inside quotes.
std::string strip_comment(const std::string& line) {
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') quoted = !quoted;
    if (line[i] == '#' && !quoted) return line.substr(0, i);
  }
  return line;
}

std::string unquote(const std::string& v, const std::string& where) {
  if (v.size() >= 2 && v.front() == '"' && v.back() == '"') return v.substr(1, v.size() - 2);
  if (!v.empty() && (v.front() == '"' || v.back() == '"')) throw ConfigError(where + ": unbalanced quotes in " + v);
  return v;
}

}  // namespace

RunConfig RunConfig::defaults() {
  RunConfig c;
  c.values_ = {
      {"run.seed", "1"},
      {"run.out", "runs/default"},

      {"data.dir", "data"},
      {"data.vocab_size", "8"},
      {"data.frames_per_token", "5"},
      {"data.feature_dim", "16"},
      {"data.noise", "0.05"},
      {"data.min_tokens", "4"},
      {"data.max_tokens", "10"},
      {"data.count", "2400"},
      {"data.fractions", "0.8333333333,0.0833333333,0.0833333334"},
      {"data.hyp_width", "5"},
      {"data.hyp_noise", "0.1"},

      {"model.embed_dim", "32"},
      {"model.hidden_dim", "32"},
      {"model.heads", "2"},
      {"model.encoder_layers", "1"},
      {"model.decoder_layers", "2"},
      {"model.head_hidden", "64"},

      {"train.manifest", ""},
      {"train.learning_rate", "0.0001"},
      {"train.batch_size", "16"},
      {"train.iterations", "5000"},
      {"train.negatives_per_positive", "1"},
      {"train.checkpoint_interval", "1000"},
      {"train.source", "degraded-hypothesis"},
      {"train.methods", "RM:0.25"},
      {"train.combination", "single-method-per-sample"},
      {"train.fill", "min"},
      {"train.hyp_width", "5"},
      {"train.hyp_noise", "0.1"},
      {"train.hyp_manifest", ""},
      {"train.resume", "false"},

      {"refine.checkpoint", ""},
      {"refine.manifest", ""},
      {"refine.reference", ""},
      {"refine.variant", "simplified-adam"},
      {"refine.step_size", "0.01"},
      {"refine.noise_variance", "1"},
      {"refine.steps", "100"},
      {"refine.anneal_start", "0.1"},
      {"refine.anneal_end", "0.001"},
      {"refine.init", "hypothesis"},
      {"refine.stats", ""},

      {"eval.reference", ""},
      {"eval.hypothesis", ""},
      {"eval.cepstral_order", "0"},

      {"compare.checkpoint", ""},
      {"compare.manifest", ""},
      {"compare.reference", ""},
      {"compare.variants", "simplified-adam,annealed-score"},
      {"compare.steps", "100"},
      {"compare.utterances", "20"},

      {"ablate.iterations", "1000"},
      {"ablate.refine_steps", "100"},
      {"ablate.utterances", "50"},
      {"ablate.workers", "1"},
      {"ablate.cells", "TM:0.05,TM:0.10,TM:0.15,FM:0.05,FM:0.10,FM:0.15,TW:1.2,TW:1.1,TW:0.9,TW:0.8,RM:0.25,RM:0.30"},
      {"ablate.combinations", "RM:0.30,RM:0.30+TM:0.05,RM:0.30+FM:0.05,RM:0.30+TW:1.2,RM:0.30+TM:0.05+FM:0.05+TW:1.2"},
  };
  return c;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  if (!has(key)) throw ConfigError("unknown config key '" + key + "' (see --dump-defaults)");
  values_[key] = value;
}

void RunConfig::merge_text(const std::string& text, const std::string& origin) {
  std::istringstream is(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string where = origin + ":" + std::to_string(lineno);
    line = trim(strip_comment(line));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + ": malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty()) throw ConfigError(where + ": empty section name");
      continue;
    }
    auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
    std::string key = trim(line.substr(0, eq));
    std::string value = unquote(trim(line.substr(eq + 1)), where);
    if (key.empty()) throw ConfigError(where + ": empty key");
    std::string full = section.empty() ? key : section + "." + key;
    if (!has(full)) throw ConfigError(where + ": unknown config key '" + full + "'");
    values_[full] = value;
  }
}

void RunConfig::merge_file(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("config file not found: " + path.string());
  merge_text(io::read_file(path), path.string());
}

void RunConfig::apply_override(const std::string& assignment) {
  auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' must look like section.key=value");
  set(trim(assignment.substr(0, eq)), unquote(trim(assignment.substr(eq + 1)), "override"));
}

const std::string& RunConfig::raw(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

std::string RunConfig::str(const std::string& key) const { return raw(key); }

double RunConfig::real(const std::string& key) const {
  const std::string& v = raw(key);
  double out = 0.0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || !std::isfinite(out))
    throw ConfigError("config key '" + key + "' expects a number, got '" + v + "'");
  return out;
}

std::int64_t RunConfig::integer(const std::string& key) const {
  const std::string& v = raw(key);
  std::int64_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size())
    throw ConfigError("config key '" + key + "' expects an integer, got '" + v + "'");
  return out;
}

std::size_t RunConfig::count(const std::string& key) const {
  std::int64_t v = integer(key);
  if (v < 0) throw ConfigError("config key '" + key + "' must be >= 0");
  return static_cast<std::size_t>(v);
}

std::uint64_t RunConfig::seed(const std::string& key) const {
  const std::string& v = raw(key);
  std::uint64_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size())
    throw ConfigError("config key '" + key + "' expects an unsigned integer, got '" + v + "'");
  return out;
}

bool RunConfig::boolean(const std::string& key) const {
  const std::string& v = raw(key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("config key '" + key + "' expects true or false, got '" + v + "'");
}

std::vector<std::string> RunConfig::list(const std::string& key, char separator) const {
  std::vector<std::string> out;
  std::stringstream ss(raw(key));
  std::string item;
  while (std::getline(ss, item, separator)) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string RunConfig::dump() const {
  std::ostringstream os;
  std::string section;
  bool first = true;
  for (const auto& [key, value] : values_) {
    auto dot = key.find('.');
    std::string s = key.substr(0, dot);
    if (s != section || first) {
      if (!first) os << '\n';
      os << '[' << s << "]\n";
      section = s;
      first = false;
    }
    os << key.substr(dot + 1) << " = \"" << value << "\"\n";
  }
  return os.str();
}

}  // namespace ebm
