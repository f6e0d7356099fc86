#include "ebm/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "ebm/binary_io.hpp"
#include "ebm/report.hpp"

namespace ebm {

namespace fs = std::filesystem;

namespace {

fs::path out_dir(const RunConfig& config) { return fs::path(config.str("run.out")); }

fs::path or_default(const RunConfig& config, const std::string& key, const fs::path& fallback) {
  const std::string v = config.str(key);
  return v.empty() ? fallback : fs::path(v);
}

fs::path data_file(const RunConfig& config, const std::string& name) { return fs::path(config.str("data.dir")) / name; }

std::vector<Utterance> load_set(const fs::path& manifest) {
  if (!fs::exists(manifest)) throw DataError("manifest not found: " + manifest.string());
  auto utts = load_utterances(read_manifest(manifest));
  if (utts.empty()) throw DataError("manifest " + manifest.string() + " lists no utterances");
  return utts;
}

Checkpoint load_existing_checkpoint(const fs::path& path) {
  if (!fs::exists(path)) throw DataError("checkpoint not found: " + path.string());
  return load_checkpoint(path);
}

std::string checkpoint_name(std::uint64_t iteration) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "iter_%08llu.ebmc", static_cast<unsigned long long>(iteration));
  return buf;
}

// Most advanced checkpoint in a training output directory, if any.
std::optional<Checkpoint> latest_checkpoint(const fs::path& dir) {
  std::vector<fs::path> candidates;
  if (fs::exists(dir / "checkpoint.ebmc")) candidates.push_back(dir / "checkpoint.ebmc");
  if (fs::is_directory(dir / "checkpoints"))
    for (const auto& e : fs::directory_iterator(dir / "checkpoints"))
      if (e.path().extension() == ".ebmc") candidates.push_back(e.path());
  std::optional<Checkpoint> best;
  for (const auto& p : candidates) {
    Checkpoint c = load_checkpoint(p);
    if (!best || c.iteration > best->iteration) best = std::move(c);
  }
  return best;
}

// Keeps the header and the rows up to `iteration` of an existing loss trace.
std::string truncated_trace(const fs::path& path, std::uint64_t iteration) {
  std::string out = (loss_trace_header() + "\n");
  if (!fs::exists(path)) return out;
  std::istringstream is(io::read_file(path));
  std::string line;
  std::getline(is, line);
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    unsigned long long it = std::strtoull(line.c_str(), nullptr, 10);
    if (it <= iteration) out += line + "\n";
  }
  return out;
}

struct PreparedTraining {
  std::vector<Utterance> data;
  FeatureStats stats;
  ModelConfig model;
  TrainConfig train;
  HypothesisSource source;
};

PreparedTraining prepare_training(const RunConfig& config, std::vector<Utterance> data) {
  PreparedTraining p;
  p.data = std::move(data);
  p.stats = feature_stats(p.data);
  p.model = model_config(config, static_cast<std::size_t>(p.data.front().features.cols()));
  p.train = train_config(config, p.stats);
  p.source = training_source(config);
  return p;
}

std::string sanitize(const std::string& s) {
  std::string out;
  for (char c : s) out += (std::isalnum(static_cast<unsigned char>(c)) || c == '.') ? c : '_';
  return out;
}

}  // namespace

int exit_code_for(const std::exception& error) {
  if (dynamic_cast<const ConfigError*>(&error)) return kExitConfig;
  if (dynamic_cast<const DataError*>(&error) || dynamic_cast<const ShapeError*>(&error)) return kExitData;
  if (dynamic_cast<const NumericError*>(&error)) return kExitNumeric;
  return kExitFailure;
}

void write_resolved_config(const fs::path& dir, const RunConfig& config, const std::string& command) {
  fs::create_directories(dir);
  write_text(dir / kResolvedConfigName, "# ebm " + command + "\n" + config.dump());
}

// ---- config translation -----------------------------------------------------

SyntheticTaskSpec task_spec(const RunConfig& config) {
  SyntheticTaskSpec s;
  s.vocab_size = config.count("data.vocab_size");
  s.frames_per_token = config.count("data.frames_per_token");
  s.feature_dim = config.count("data.feature_dim");
  s.noise = config.real("data.noise");
  s.min_tokens = config.count("data.min_tokens");
  s.max_tokens = config.count("data.max_tokens");
  s.seed = config.seed("run.seed");
  s.validate();
  return s;
}

std::array<double, 3> split_fractions(const RunConfig& config) {
  auto parts = config.list("data.fractions");
  if (parts.size() != 3) throw ConfigError("data.fractions needs three values (train,val,test)");
  std::array<double, 3> f{};
  double sum = 0.0;
  for (std::size_t i = 0; i < 3; ++i) {
    char* end = nullptr;
    f[i] = std::strtod(parts[i].c_str(), &end);
    if (end != parts[i].c_str() + parts[i].size() || !std::isfinite(f[i]) || f[i] < 0.0 || f[i] > 1.0)
      throw ConfigError("data.fractions: '" + parts[i] + "' is not a fraction in [0, 1]");
    sum += f[i];
  }
  if (std::abs(sum - 1.0) > 1e-6) throw ConfigError("data.fractions must sum to 1, got " + format_real(sum));
  return f;
}

ModelConfig model_config(const RunConfig& config, std::size_t feature_dim) {
  ModelConfig m;
  m.vocab_size = config.count("data.vocab_size");
  m.embed_dim = config.count("model.embed_dim");
  m.hidden_dim = config.count("model.hidden_dim");
  m.heads = config.count("model.heads");
  m.encoder_layers = config.count("model.encoder_layers");
  m.decoder_layers = config.count("model.decoder_layers");
  m.head_hidden = config.count("model.head_hidden");
  m.feature_dim = feature_dim;
  m.validate();
  return m;
}

TrainConfig train_config(const RunConfig& config, const FeatureStats& stats) {
  TrainConfig t;
  t.learning_rate = config.real("train.learning_rate");
  t.batch_size = config.count("train.batch_size");
  t.iterations = config.count("train.iterations");
  t.negatives_per_positive = config.count("train.negatives_per_positive");
  t.checkpoint_interval = config.count("train.checkpoint_interval");
  t.seed = config.seed("run.seed");
  t.negatives.source = parse_source(config.str("train.source"));
  t.negatives.methods = parse_methods(config.str("train.methods"));
  t.negatives.combination = parse_combination(config.str("train.combination"));
  t.negatives.fill = config.str("train.fill") == "min" ? stats.minimum : config.real("train.fill");
  t.negatives.seed = config.seed("run.seed");
  t.validate();
  return t;
}

HypothesisSource training_source(const RunConfig& config) {
  switch (parse_source(config.str("train.source"))) {
    case SourceKind::Reference: return HypothesisSource::reference();
    case SourceKind::DegradedHypothesis:
      return HypothesisSource::degraded(config.count("train.hyp_width"), config.real("train.hyp_noise"));
    case SourceKind::File: {
      const std::string m = config.str("train.hyp_manifest");
      if (m.empty()) throw ConfigError("train.source = file needs train.hyp_manifest");
      if (!fs::exists(m)) throw DataError("hypothesis manifest not found: " + m);
      return HypothesisSource::files(read_manifest(m));
    }
  }
  throw ConfigError("unknown hypothesis source");
}

SamplerConfig sampler_config(const RunConfig& config) {
  SamplerConfig s;
  s.variant = parse_variant(config.str("refine.variant"));
  s.step_size = config.real("refine.step_size");
  s.noise_variance = config.real("refine.noise_variance");
  s.steps = config.count("refine.steps");
  s.anneal_start = config.real("refine.anneal_start");
  s.anneal_end = config.real("refine.anneal_end");
  s.seed = config.seed("run.seed");
  s.validate();
  return s;
}

std::size_t worker_count(const RunConfig& config) {
  std::size_t workers = config.count("ablate.workers");
  if (const char* env = std::getenv(kWorkersEnv); env && *env) {
    char* end = nullptr;
    long v = std::strtol(env, &end, 10);
    if (*end != '\0' || v < 1) throw ConfigError(std::string(kWorkersEnv) + " must be a positive integer, got '" + env + "'");
    workers = static_cast<std::size_t>(v);
  }
  return std::max<std::size_t>(workers, 1);
}

MetricsReport evaluate_sets(const std::vector<Utterance>& references, const std::vector<Utterance>& hypotheses,
                            std::size_t cepstral_order) {
  std::map<std::string, const Utterance*> hyp;
  for (const auto& u : hypotheses) hyp[u.id] = &u;
  std::set<std::string> ref_ids;
  std::vector<std::string> missing;
  for (const auto& r : references) {
    ref_ids.insert(r.id);
    if (!hyp.count(r.id)) missing.push_back(r.id + " (no hypothesis)");
  }
  for (const auto& h : hypotheses)
    if (!ref_ids.count(h.id)) missing.push_back(h.id + " (no reference)");
  if (!missing.empty()) {
    std::string msg = "utterance ids do not match:";
    for (const auto& m : missing) msg += "\n  " + m;
    throw DataError(msg);
  }
  MetricsReport report;
  for (const auto& r : references) {
    const Utterance& h = *hyp.at(r.id);
    const std::size_t order =
        cepstral_order ? cepstral_order : default_cepstral_order(static_cast<std::size_t>(r.features.cols()));
    report.utterances.push_back(evaluate_utterance(r.id, r.features, h.features, order, r.f0, h.f0));
  }
  report.finalize();
  return report;
}

// ---- gen-data -----------------------------------------------------------------

GenDataResult cmd_gen_data(const RunConfig& config) {
  const SyntheticTaskSpec spec = task_spec(config);
  const auto fractions = split_fractions(config);
  const std::size_t count = config.count("data.count");
  const std::size_t hyp_width = config.count("data.hyp_width");
  const double hyp_noise = config.real("data.hyp_noise");
  if (hyp_width % 2 == 0) throw ConfigError("data.hyp_width must be odd");
  const std::uint64_t seed = config.seed("run.seed");

  Rng rng = derive_rng(seed, {0x67656e});
  const auto utts = generate_synthetic(spec, count, rng);
  const auto splits = split_dataset(count, fractions, derive_seed(seed, {0x73706c}));

  GenDataResult result;
  result.dir = config.str("data.dir");
  fs::create_directories(result.dir);
  const char* names[] = {"train", "val", "test"};
  for (std::size_t s = 0; s < 3; ++s) {
    DatasetManifest refs, hyps;
    refs.split = names[s];
    hyps.split = std::string("hyp_") + names[s];
    for (std::size_t idx : splits[s]) {
      const Utterance& u = utts[idx];
      refs.entries.push_back(store_utterance(result.dir, refs.split, u));
      Rng hr = derive_rng(seed, {0x687970, idx});
      Utterance h{u.id, u.tokens, degrade_hypothesis(u.features, hyp_width, hyp_noise, hr), std::nullopt};
      hyps.entries.push_back(store_utterance(result.dir, hyps.split, h));
    }
    write_manifest(result.dir / (refs.split + ".json"), refs);
    write_manifest(result.dir / (hyps.split + ".json"), hyps);
    result.sizes[s] = splits[s].size();
  }
  write_resolved_config(result.dir, config, "gen-data");
  return result;
}

// ---- train ----------------------------------------------------------------------

TrainResult cmd_train(const RunConfig& config) {
  const fs::path manifest = or_default(config, "train.manifest", data_file(config, "train.json"));
  PreparedTraining prep = prepare_training(config, load_set(manifest));
  const fs::path out = out_dir(config);
  const fs::path ckpt_dir = out / "checkpoints";
  fs::create_directories(ckpt_dir);
  write_resolved_config(out, config, "train");

  Checkpoint start;
  bool resumed = false;
  if (config.boolean("train.resume")) {
    if (auto latest = latest_checkpoint(out)) {
      if (!(latest->params.config == prep.model))
        throw ConfigError("cannot resume: checkpoint model configuration differs from [model]");
      start = std::move(*latest);
      resumed = true;
    }
  }
  if (!resumed) start = initial_checkpoint(prep.model, prep.train.seed);
  if (start.iteration > prep.train.iterations)
    throw ConfigError("checkpoint is at iteration " + std::to_string(start.iteration) + ", beyond train.iterations");

  TrainResult result;
  result.trace_path = out / "loss_trace.csv";
  result.checkpoint_path = out / "checkpoint.ebmc";
  std::string trace_text = resumed ? truncated_trace(result.trace_path, start.iteration) : (loss_trace_header() + "\n");
  write_text(result.trace_path, trace_text);

  TrainHooks hooks;
  hooks.on_iteration = [&](const LossRecord& r) { trace_text += (loss_trace_row(r) + "\n"); };
  hooks.on_checkpoint = [&](const Checkpoint& c) {
    save_checkpoint(ckpt_dir / checkpoint_name(c.iteration), c);
    write_text(result.trace_path, trace_text);
  };
  result.checkpoint = train(prep.train, prep.data, prep.source, std::move(start), &result.trace, hooks);
  save_checkpoint(result.checkpoint_path, result.checkpoint);
  write_text(result.trace_path, trace_text);
  return result;
}

// ---- refine ---------------------------------------------------------------------

std::vector<SamplerTrace> refine_utterances(const ModelParams& params, const std::vector<Utterance>& utterances,
                                            const SamplerConfig& sampler, const std::optional<FeatureStats>& prior) {
  std::vector<SamplerTrace> traces;
  traces.reserve(utterances.size());
  for (std::size_t i = 0; i < utterances.size(); ++i) {
    const Utterance& u = utterances[i];
    Rng rng = derive_rng(sampler.seed, {0x726566, i});
    FeatureSequence y0 = prior ? gaussian_prior(*prior, static_cast<std::size_t>(u.features.rows()), rng) : u.features;
    ModelEnergy surface(params, u.tokens);
    try {
      traces.push_back(run_sampler(surface, y0, sampler, rng));
    } catch (const NumericError& e) {
      throw NumericError("refining '" + u.id + "': " + e.what());
    }
  }
  return traces;
}

RefineResult cmd_refine(const RunConfig& config) {
  const fs::path out = out_dir(config);
  const Checkpoint ckpt = load_existing_checkpoint(or_default(config, "refine.checkpoint", out / "checkpoint.ebmc"));
  const auto inputs = load_set(or_default(config, "refine.manifest", data_file(config, "hyp_test.json")));
  const SamplerConfig sampler = sampler_config(config);

  std::optional<FeatureStats> prior;
  const std::string init = config.str("refine.init");
  if (init == "prior") {
    prior = feature_stats(load_set(or_default(config, "refine.stats", data_file(config, "train.json"))));
  } else if (init != "hypothesis") {
    throw ConfigError("refine.init must be 'hypothesis' or 'prior', got '" + init + "'");
  }
  for (const auto& u : inputs) check_tokens(ckpt.params.config, u.tokens);

  write_resolved_config(out, config, "refine");
  RefineResult result;
  result.traces = refine_utterances(ckpt.params, inputs, sampler, prior);

  DatasetManifest manifest;
  manifest.split = "refined";
  fs::create_directories(out / "traces");
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    Utterance r{inputs[i].id, inputs[i].tokens, result.traces[i].final, std::nullopt};
    manifest.entries.push_back(store_utterance(out, "refined", r));
    write_text(out / "traces" / (r.id + ".csv"), result.traces[i].to_csv());
    result.refined.push_back(std::move(r));
  }
  result.manifest_path = out / "refined.json";
  write_manifest(result.manifest_path, manifest);

  if (const std::string ref = config.str("refine.reference"); !ref.empty()) {
    result.metrics = evaluate_sets(load_set(ref), result.refined, config.count("eval.cepstral_order"));
    write_text(out / "metrics.csv", result.metrics->to_csv());
  }
  return result;
}

// ---- eval -----------------------------------------------------------------------

MetricsReport cmd_eval(const RunConfig& config) {
  const std::string ref = config.str("eval.reference"), hyp = config.str("eval.hypothesis");
  if (ref.empty() || hyp.empty()) throw ConfigError("eval needs eval.reference and eval.hypothesis");
  MetricsReport report = evaluate_sets(load_set(ref), load_set(hyp), config.count("eval.cepstral_order"));
  const fs::path out = out_dir(config);
  write_resolved_config(out, config, "eval");
  write_text(out / "metrics.csv", report.to_csv());
  std::ostringstream os;
  auto line = [&](const char* name, const SummaryStat& s) {
    os << name << " = " << format_real(s.mean) << " +- " << format_real(s.ci95) << " (median " << format_real(s.median)
       << ", n = " << s.count << ")\n";
  };
  line("mcd_db", report.mcd);
  line("ffe", report.ffe);
  line("log_f0_rmse", report.log_f0_rmse);
  write_text(out / "summary.txt", os.str());
  return report;
}

// ---- compare-samplers -----------------------------------------------------------

CompareResult cmd_compare_samplers(const RunConfig& config) {
  const fs::path out = out_dir(config);
  const Checkpoint ckpt = load_existing_checkpoint(or_default(config, "compare.checkpoint", out / "checkpoint.ebmc"));
  auto hyps = load_set(or_default(config, "compare.manifest", data_file(config, "hyp_test.json")));
  const auto refs = load_set(or_default(config, "compare.reference", data_file(config, "test.json")));
  const std::size_t limit = config.count("compare.utterances");
  if (limit > 0 && hyps.size() > limit) hyps.resize(limit);
  std::map<std::string, const Utterance*> ref_by_id;
  for (const auto& r : refs) ref_by_id[r.id] = &r;
  for (const auto& h : hyps)
    if (!ref_by_id.count(h.id)) throw DataError("no reference for hypothesis '" + h.id + "'");

  const auto variants = config.list("compare.variants");
  if (variants.empty()) throw ConfigError("compare.variants is empty");
  const std::size_t steps = config.count("compare.steps");
  write_resolved_config(out, config, "compare-samplers");

  CompareResult result;
  for (const auto& name : variants) {
    SamplerConfig sc;
    sc.variant = parse_variant(name);
    sc.step_size = SamplerConfig::default_step_size(sc.variant);
    sc.noise_variance = config.real("refine.noise_variance");
    sc.anneal_start = config.real("refine.anneal_start");
    sc.anneal_end = config.real("refine.anneal_end");
    sc.steps = steps;
    sc.seed = config.seed("run.seed");
    sc.record_states = true;
    sc.validate();
    const auto traces = refine_utterances(ckpt.params, hyps, sc, std::nullopt);

    CompareSeries series;
    series.variant = variant_name(sc.variant);
    for (std::size_t n = 0; n <= steps; ++n) {
      double e = 0.0;
      std::vector<double> mcds;
      for (std::size_t i = 0; i < hyps.size(); ++i) {
        e += traces[i].energies[n];
        const FeatureSequence& ref = ref_by_id.at(hyps[i].id)->features;
        mcds.push_back(mcd(ref, traces[i].states[n], default_cepstral_order(static_cast<std::size_t>(ref.cols()))));
      }
      series.energy_mean.push_back(e / static_cast<double>(hyps.size()));
      series.mcd_median.push_back(summarize(mcds).median);
    }
    result.series.push_back(std::move(series));
  }

  std::string csv = "variant,step,energy_mean,mcd_median\n";
  std::vector<PlotSeries> energy_plot, mcd_plot;
  for (const auto& s : result.series) {
    PlotSeries pe{s.variant, {}, s.energy_mean}, pm{s.variant, {}, s.mcd_median};
    for (std::size_t n = 0; n <= steps; ++n) {
      csv += s.variant + "," + std::to_string(n) + "," + format_real(s.energy_mean[n]) + "," + format_real(s.mcd_median[n]) + "\n";
      pe.x.push_back(static_cast<double>(n));
      pm.x.push_back(static_cast<double>(n));
    }
    energy_plot.push_back(std::move(pe));
    mcd_plot.push_back(std::move(pm));
  }
  result.csv_path = out / "compare.csv";
  result.energy_svg = out / "compare_energy.svg";
  result.mcd_svg = out / "compare_mcd.svg";
  write_text(result.csv_path, csv);
  write_text(result.energy_svg, svg_line_plot(energy_plot, "Mean energy per step", "step", "energy"));
  write_text(result.mcd_svg, svg_line_plot(mcd_plot, "Median MCD per step", "step", "MCD (dB)"));
  return result;
}

// ---- ablate -------------------------------------------------------------------

const AblationRow* AblationResult::find(const std::string& group, const std::string& condition) const {
  for (const auto& r : rows)
    if (r.group == group && r.condition == condition) return &r;
  return nullptr;
}

std::string AblationResult::to_csv() const {
  std::string csv =
      "group,condition,status,mcd_median,mcd_mean,mcd_ci95,ffe_mean,ffe_ci95,log_f0_rmse_mean,log_f0_rmse_ci95,error\n";
  for (const auto& r : rows) {
    csv += r.group + "," + csv_field(r.condition) + "," + (r.ok ? "ok" : "failed");
    if (r.ok) {
      for (double v : {r.mcd_median, r.mcd.mean, r.mcd.ci95, r.ffe.mean, r.ffe.ci95, r.log_f0_rmse.mean, r.log_f0_rmse.ci95})
        csv += "," + format_real(v);
    } else {
      csv += ",,,,,,,";
    }
    csv += "," + csv_field(r.error) + "\n";
  }
  return csv;
}

AblationResult cmd_ablate(const RunConfig& config) {
  const fs::path out = out_dir(config);
  const auto train_set = load_set(or_default(config, "train.manifest", data_file(config, "train.json")));
  const auto refs_all = load_set(data_file(config, "test.json"));
  auto hyps = load_set(data_file(config, "hyp_test.json"));
  const std::size_t limit = config.count("ablate.utterances");
  if (limit > 0 && hyps.size() > limit) hyps.resize(limit);
  std::set<std::string> wanted;
  for (const auto& h : hyps) wanted.insert(h.id);
  std::vector<Utterance> refs;
  for (const auto& r : refs_all)
    if (wanted.count(r.id)) refs.push_back(r);

  RunConfig base = config;
  base.set("train.iterations", config.str("ablate.iterations"));
  base.set("train.combination", "single-method-per-sample");
  base.set("train.resume", "false");
  base.set("refine.variant", "simplified-adam");
  base.set("refine.steps", config.str("ablate.refine_steps"));
  const SamplerConfig sampler = sampler_config(base);
  write_resolved_config(out, config, "ablate");

  AblationResult result;
  AblationRow baseline{"hypothesis", "none", true, {}, 0.0, {}, {}, {}};
  {
    MetricsReport m = evaluate_sets(refs, hyps);
    baseline.mcd = m.mcd;
    baseline.ffe = m.ffe;
    baseline.log_f0_rmse = m.log_f0_rmse;
    baseline.mcd_median = m.mcd.median;
  }
  result.rows.push_back(baseline);

  std::vector<std::pair<std::string, std::string>> cells;
  for (const auto& c : config.list("ablate.cells")) cells.emplace_back("single", c);
  for (const auto& c : config.list("ablate.combinations")) cells.emplace_back("combination", c);

  // Identical conditions in both groups train the same model; run each once.
  std::vector<std::string> unique;
  for (const auto& [g, c] : cells)
    if (std::find(unique.begin(), unique.end(), c) == unique.end()) unique.push_back(c);
  std::vector<AblationRow> outcomes(unique.size());

  auto run_one = [&](std::size_t k) {
    AblationRow row;
    row.condition = unique[k];
    try {
      RunConfig rc = base;
      rc.set("train.methods", unique[k]);
      const fs::path dir = out / "runs" / sanitize(unique[k]);
      rc.set("run.out", dir.string());
      write_resolved_config(dir, rc, "ablate member");
      PreparedTraining prep = prepare_training(rc, train_set);
      std::vector<LossRecord> trace;
      Checkpoint ckpt = train(prep.train, prep.data, prep.source, initial_checkpoint(prep.model, prep.train.seed), &trace);
      save_checkpoint(dir / "checkpoint.ebmc", ckpt);
      std::string text = (loss_trace_header() + "\n");
      for (const auto& r : trace) text += (loss_trace_row(r) + "\n");
      write_text(dir / "loss_trace.csv", text);

      const auto traces = refine_utterances(ckpt.params, hyps, sampler, std::nullopt);
      std::vector<Utterance> refined;
      for (std::size_t i = 0; i < hyps.size(); ++i) refined.push_back({hyps[i].id, hyps[i].tokens, traces[i].final, std::nullopt});
      MetricsReport m = evaluate_sets(refs, refined);
      write_text(dir / "metrics.csv", m.to_csv());
      row.ok = true;
      row.mcd = m.mcd;
      row.ffe = m.ffe;
      row.log_f0_rmse = m.log_f0_rmse;
      row.mcd_median = m.mcd.median;
    } catch (const std::exception& e) {
      row.ok = false;
      row.error = e.what();
    }
    outcomes[k] = std::move(row);
  };

  const std::size_t workers = std::min(worker_count(config), unique.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t k = next++; k < unique.size(); k = next++) run_one(k);
  };
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  for (const auto& [g, c] : cells) {
    auto it = std::find(unique.begin(), unique.end(), c);
    AblationRow row = outcomes[static_cast<std::size_t>(it - unique.begin())];
    row.group = g;
    result.rows.push_back(std::move(row));
  }
  result.csv_path = out / "ablation.csv";
  write_text(result.csv_path, result.to_csv());

  return result;
}

}  // namespace ebm
