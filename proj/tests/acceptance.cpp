// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.
//
// Usage: acceptance [criterion ...]   (default: all of 1..8)
// EBM_ACCEPTANCE_DIR sets the scratch directory for the pipeline criteria.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <functional>
#include <limits>
#include <set>
#include <string>
#include <vector>

#include "ebm/binary_io.hpp"
#include "ebm/metrics.hpp"
#include "ebm/pipeline.hpp"
#include "ebm/report.hpp"
#include "oracles.hpp"
#include "primitive_cases.hpp"

using namespace ebm;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double x) { return format_real(x); }

fs::path scratch() {
  static const fs::path dir = [] {
    const char* env = std::getenv("EBM_ACCEPTANCE_DIR");
    fs::path d = env ? fs::path(env) : fs::temp_directory_path() / "ebm_acceptance";
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

// Desk-scale defaults rooted in the scratch directory.
RunConfig desk_config() {
  RunConfig c = RunConfig::defaults();
  c.set("data.dir", (scratch() / "data").string());
  return c;
}

void ensure_data() {
  static bool done = [] {
    cmd_gen_data(desk_config());
    return true;
  }();
  (void)done;
}

fs::path trained_checkpoint() {
  static const fs::path path = [] {
    ensure_data();
    RunConfig c = desk_config();
    c.set("run.out", (scratch() / "train").string());
    return cmd_train(c).checkpoint_path;
  }();
  return path;
}

Outcome nce_analytic() {
  const double a = nce_loss(0.0, 0.0), b = nce_loss(-10.0, 10.0);
  const double ea = std::abs(a - 2.0 * std::log(2.0));
  const double eb = std::abs(b - 2.0 * std::log1p(std::exp(-10.0)));
  return {ea < 1e-12 && eb < 1e-9, "|err(0,0)| = " + fmt(ea) + ", |err(-10,10)| = " + fmt(eb)};
}

ModelConfig tiny_model() {
  ModelConfig c;
  c.vocab_size = 5;
  c.embed_dim = 8;
  c.hidden_dim = 8;
  c.heads = 2;
  c.encoder_layers = 1;
  c.decoder_layers = 1;
  c.head_hidden = 8;
  c.feature_dim = 4;
  return c;
}

// Initial parameters jittered so that biases, scales and the attention vector
// all carry gradient.
ModelParams jittered(const ModelConfig& c, std::uint64_t seed) {
  ModelParams p = init_params(c, seed);
  Rng rng = derive_rng(seed, {0x6a6974});
  for (auto& [name, t] : p.tensors)
    for (std::size_t i = 0; i < t.size(); ++i) t[i] += 0.2 * (uniform01(rng) - 0.5);
  return p;
}

// Relative error of a whole parameter group, ||g_ad - g_fd|| / max(||g_ad||, ||g_fd||),
// with central differences of step `eps` per coordinate.
double group_relative_error(const Graph<double>& graph, const LeafValues<double>& leaves, Var<double> output,
                            const std::string& leaf, double eps) {
  const TensorXd analytic = gradients(graph, evaluate(graph, leaves), output, {leaf}).at(leaf);
  LeafValues<double> probe = leaves;
  TensorXd moved = *leaves.find(leaf);
  probe.bind(leaf, moved);
  double diff = 0, na = 0, nn = 0;
  for (std::size_t i = 0; i < moved.size(); ++i) {
    const double orig = moved[i];
    moved[i] = orig + eps;
    const double up = evaluate(graph, probe)[output].item();
    moved[i] = orig - eps;
    const double down = evaluate(graph, probe)[output].item();
    moved[i] = orig;
    const double numeric = (up - down) / (2 * eps);
    diff += (analytic[i] - numeric) * (analytic[i] - numeric);
    na += analytic[i] * analytic[i];
    nn += numeric * numeric;
  }
  const double scale = std::sqrt(std::max(na, nn));
  return scale == 0 ? 0.0 : std::sqrt(diff) / scale;
}

Outcome gradient_fidelity() {
  constexpr double kEps = 1e-5, kTol = 1e-4;
  constexpr std::uint64_t kSeeds = 100;
  double worst_prim = 0, worst_param = 0, worst_y = 0;
  std::string worst_prim_name, worst_param_name;

  for (const auto& spec : testing::primitive_specs())
    for (std::uint64_t seed = 0; seed < kSeeds; ++seed) {
      auto c = testing::make_case(spec, seed);
      for (const auto& leaf : c.inputs) {
        double e = finite_difference_check(*c.graph, c.leaves, c.output, leaf, kEps);
        if (e > worst_prim) worst_prim = e, worst_prim_name = spec.name;
      }
    }

  const ModelConfig mc = tiny_model();
  for (std::uint64_t seed = 0; seed < kSeeds; ++seed) {
    Rng rng = derive_rng(seed, {0x67726164});
    ModelParams p = jittered(mc, seed);
    const std::size_t frames = 3 + uniform_index(rng, 6), length = 1 + uniform_index(rng, 4);
    TokenSequence tokens;
    for (std::size_t i = 0; i < length; ++i) tokens.ids.push_back(static_cast<int>(uniform_index(rng, mc.vocab_size)));
    FeatureSequence y(frames, mc.feature_dim);
    for (Eigen::Index i = 0; i < y.size(); ++i) y.data()[i] = standard_normal(rng);

    Graph<double> graph;
    ParamLeaves pl(graph, mc);
    auto yv = graph.leaf("Y", {frames, mc.feature_dim});
    EnergyVars vars = build_energy(pl, tokens, yv);
    LeafValues<double> lv;
    bind_params(lv, p);
    lv.set("Y", TensorXd::from_matrix(y));
    for (const auto& [name, t] : p.tensors) {
      double e = group_relative_error(graph, lv, vars.energy, name, kEps);
      if (e > worst_param) worst_param = e, worst_param_name = name;
    }
    worst_y = std::max(worst_y, finite_difference_check(graph, lv, vars.energy, std::string("Y"), kEps));
  }
  const bool pass = worst_prim < kTol && worst_param < kTol && worst_y < kTol;
  return {pass, "worst relative error: primitives " + fmt(worst_prim) + " (" + worst_prim_name + "), parameters " +
                    fmt(worst_param) + " (" + worst_param_name + "), features " + fmt(worst_y)};
}

Outcome dtw_oracle() {
  Rng rng = derive_rng(3, {0x647477});
  std::size_t mismatches = 0;
  for (int k = 0; k < 500; ++k) {
    const auto n = 1 + uniform_index(rng, 6), m = 1 + uniform_index(rng, 6), d = 1 + uniform_index(rng, 3);
    RowMatrixXd a(n, d), b(m, d);
    for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = standard_normal(rng);
    for (Eigen::Index i = 0; i < b.size(); ++i) b.data()[i] = standard_normal(rng);
    if (dtw_align(a, b).cost != testing::brute_force_dtw(a, b)) ++mismatches;
  }
  return {mismatches == 0, std::to_string(mismatches) + " of 500 cases differ from exhaustive enumeration"};
}

Outcome training_success() {
  const Checkpoint ckpt = load_checkpoint(trained_checkpoint());
  RunConfig c = desk_config();
  const auto data = scratch() / "data";
  const auto train = load_utterances(read_manifest(data / "train.json"));
  const auto held_out = load_utterances(read_manifest(data / "test.json"));
  const TrainConfig tc = train_config(c, feature_stats(train));
  // Fresh negatives: a seed stream unrelated to the training draws.
  MarginReport m = margin_accuracy(ckpt.params, held_out, tc.negatives, training_source(c), derive_seed(0x68656c64, {4}));
  return {m.pairs == 200 && m.accuracy >= 0.95,
          "margin accuracy " + fmt(m.accuracy) + " over " + std::to_string(m.pairs) + " held-out pairs (mean margin " +
              fmt(m.mean_margin) + ")"};
}

Outcome refinement_trend() {
  const Checkpoint ckpt = load_checkpoint(trained_checkpoint());
  const auto data = scratch() / "data";
  const auto refs = load_utterances(read_manifest(data / "test.json"));
  const auto hyps = load_utterances(read_manifest(data / "hyp_test.json"));
  RunConfig c = desk_config();
  SamplerConfig sc = sampler_config(c);
  sc.variant = SamplerVariant::SimplifiedAdam;
  sc.steps = 300;
  sc.record_states = true;

  // The sampler is noiseless, so utterances can be refined one at a time
  // without keeping every chain's states.
  const std::size_t order = default_cepstral_order(static_cast<std::size_t>(refs.front().features.cols()));
  const std::vector<std::size_t> checkpoints = {0, 1, 100, 300};
  std::vector<std::vector<double>> values(checkpoints.size());
  for (std::size_t i = 0; i < refs.size(); ++i) {
    const auto trace = refine_utterances(ckpt.params, {hyps[i]}, sc, std::nullopt).front();
    for (std::size_t k = 0; k < checkpoints.size(); ++k)
      values[k].push_back(mcd(refs[i].features, trace.states[checkpoints[k]], order));
  }
  std::vector<double> med;
  for (const auto& v : values) med.push_back(summarize(v).median);
  const double d01 = std::abs(med[1] - med[0]) / med[0];
  const double gain = (med[0] - med[2]) / med[0];
  const bool pass = refs.size() == 200 && d01 < 0.01 && gain >= 0.05 && med[3] <= med[2];
  std::string detail = "median MCD N=0 " + fmt(med[0]) + ", N=1 " + fmt(med[1]) + ", N=100 " + fmt(med[2]) + ", N=300 " +
                       fmt(med[3]) + "; |N1-N0|/N0 " + fmt(d01) + ", gain at N=100 " + fmt(gain) + " (step " +
                       fmt(sc.step_size) + ", " + std::to_string(refs.size()) + " utterances)";
  return {pass, detail};
}

Outcome ablation_grid() {
  ensure_data();
  RunConfig c = desk_config();
  c.set("run.out", (scratch() / "ablate").string());
  c.set("ablate.workers", "4");
  const AblationResult r = cmd_ablate(c);

  std::size_t singles = 0, combos = 0, bad = 0;
  for (const auto& row : r.rows) {
    if (row.group == "single") ++singles;
    if (row.group == "combination") ++combos;
    const bool finite = std::isfinite(row.mcd_median) && std::isfinite(row.mcd.ci95) && std::isfinite(row.ffe.ci95) &&
                        std::isfinite(row.log_f0_rmse.ci95);
    if (!row.ok || !finite) ++bad;
  }
  const auto list = c.list("ablate.combinations");
  const AblationRow* rm = r.find("combination", "RM:0.30");
  const AblationRow* all = r.find("combination", list.back());
  const bool shape = singles == 12 && combos == 5 && bad == 0 && rm && all;
  const bool trend = shape && all->mcd_median <= rm->mcd_median * 1.01;
  std::string detail = std::to_string(singles) + " single and " + std::to_string(combos) + " combination rows, " +
                       std::to_string(bad) + " failed or non-finite";
  if (rm && all)
    detail += "; median MCD " + list.back() + " " + fmt(all->mcd_median) + " vs RM:0.30 " + fmt(rm->mcd_median);
  return {trend, detail};
}

Outcome langevin_stationarity() {
  QuadraticEnergy surface;
  SamplerConfig sc;
  sc.variant = SamplerVariant::Langevin;
  sc.step_size = 0.01;
  sc.noise_variance = 1.0;
  sc.steps = 20000;
  sc.record_states = true;
  Rng rng = derive_rng(7, {0x6c616e});
  const FeatureSequence y0 = FeatureSequence::Zero(8, 8);
  const SamplerTrace t = langevin_run(surface, y0, sc, rng);

  // Burn-in of 1000 steps (ten relaxation times of the discretised chain).
  const std::size_t burn = 1000;
  const double n = static_cast<double>(t.states.size() - burn);
  Eigen::ArrayXXd sum = Eigen::ArrayXXd::Zero(8, 8), sq = Eigen::ArrayXXd::Zero(8, 8);
  for (std::size_t k = burn; k < t.states.size(); ++k) {
    sum += t.states[k].array();
    sq += t.states[k].array().square();
  }
  const Eigen::ArrayXXd mean = sum / n;
  const Eigen::ArrayXXd var = (sq - n * mean.square()) / (n - 1.0);
  // A single cell's variance from 19K correlated draws (rho = 0.99) carries a
  // sampling error of about 0.1 on its own, so the band applies to the
  // per-cell variance pooled over the 64 cells.
  const double pooled = var.mean();
  return {pooled >= 0.9 && pooled <= 1.1, "pooled per-cell variance " + fmt(pooled) + " (stationary value " +
                                              fmt(1.0 / (1.0 - sc.step_size / 2.0)) + "), individual cells in [" +
                                              fmt(var.minCoeff()) + ", " + fmt(var.maxCoeff()) + "]"};
}

Outcome determinism() {
  ensure_data();
  std::vector<std::string> failures;
  auto expect = [&](bool ok, const std::string& what) {
    if (!ok) failures.push_back(what);
  };

  auto small = [](const std::string& out) {
    RunConfig c = desk_config();
    c.set("run.out", (scratch() / out).string());
    c.set("train.iterations", "30");
    c.set("train.checkpoint_interval", "10");
    return c;
  };
  const auto a = cmd_train(small("det_a")), b = cmd_train(small("det_b"));
  expect(io::read_file(a.trace_path) == io::read_file(b.trace_path), "loss trace");
  expect(io::read_file(a.checkpoint_path) == io::read_file(b.checkpoint_path), "trained checkpoint");

  auto refine = [&](const std::string& out, const fs::path& ckpt) {
    RunConfig c = desk_config();
    c.set("run.out", (scratch() / out).string());
    c.set("refine.checkpoint", ckpt.string());
    c.set("refine.steps", "5");
    return cmd_refine(c);
  };
  const auto ra = refine("det_ra", a.checkpoint_path), rb = refine("det_rb", b.checkpoint_path);
  bool same = ra.refined.size() == rb.refined.size() && !ra.refined.empty();
  for (std::size_t i = 0; same && i < ra.refined.size(); ++i)
    same = serialize_features(ra.refined[i].features) == serialize_features(rb.refined[i].features);
  expect(same, "refined outputs");

  const std::string bytes = io::read_file(a.checkpoint_path);
  expect(serialize_checkpoint(parse_checkpoint(bytes)) == bytes, "checkpoint round trip");
  const Checkpoint loaded = load_checkpoint(a.checkpoint_path);
  bool params_equal = true;
  for (const auto& [name, t] : a.checkpoint.params.tensors) {
    const auto& u = loaded.params.tensors.at(name);
    params_equal = params_equal && t.size() == u.size() && std::equal(t.data(), t.data() + t.size(), u.data());
  }
  expect(params_equal, "checkpoint parameters");

  Rng rng = derive_rng(8, {0x666561});
  FeatureSequence y(37, 16);
  for (Eigen::Index i = 0; i < y.size(); ++i) y.data()[i] = standard_normal(rng) * 1e3;
  y(0, 0) = std::numeric_limits<double>::denorm_min();
  y(1, 1) = -0.0;
  const fs::path feat = scratch() / "roundtrip.feat";
  write_features(feat, y);
  const FeatureSequence back = read_features(feat);
  expect(back.rows() == y.rows() && back.cols() == y.cols() &&
             std::memcmp(back.data(), y.data(), sizeof(double) * static_cast<std::size_t>(y.size())) == 0,
         "feature file round trip");

  std::string detail = failures.empty() ? "traces, checkpoints, refined outputs and feature files reproduce bitwise"
                                        : "mismatch:";
  for (const auto& f : failures) detail += " " + f;
  return {failures.empty(), detail};
}

struct Criterion {
  int id;
  const char* name;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria = {
      {1, "nce-analytic", nce_analytic},
      {2, "gradient-fidelity", gradient_fidelity},
      {3, "dtw-oracle", dtw_oracle},
      {4, "training-success", training_success},
      {5, "refinement-trend", refinement_trend},
      {6, "ablation-grid", ablation_grid},
      {7, "langevin-stationarity", langevin_stationarity},
      {8, "determinism", determinism},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  int failed = 0;
  for (const auto& c : criteria) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%s %d %s: %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(), secs);
    std::fflush(stdout);
    if (!o.pass) ++failed;
  }
  return failed == 0 ? 0 : 1;
}
