// ebm: batch entry points for data generation, training, refinement,
// evaluation, sampler comparison and the negative-sampling ablation grid.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "ebm/pipeline.hpp"
#include "ebm/report.hpp"

namespace {

void print_summary(const char* label, const ebm::SummaryStat& s) {
  std::printf("%-12s %s +- %s (median %s, n = %zu)\n", label, ebm::format_real(s.mean).c_str(),
              ebm::format_real(s.ci95).c_str(), ebm::format_real(s.median).c_str(), s.count);
}

int run(const std::string& command, const ebm::RunConfig& config) {
  using namespace ebm;
  if (command == "gen-data") {
    auto r = cmd_gen_data(config);
    std::printf("wrote %zu/%zu/%zu utterances (train/val/test) to %s\n", r.sizes[0], r.sizes[1], r.sizes[2],
                r.dir.string().c_str());
  } else if (command == "train") {
    auto r = cmd_train(config);
    std::printf("trained to iteration %llu; checkpoint %s, trace %s\n",
                static_cast<unsigned long long>(r.checkpoint.iteration), r.checkpoint_path.string().c_str(),
                r.trace_path.string().c_str());
    if (!r.trace.empty()) std::printf("final loss %s\n", format_real(r.trace.back().loss).c_str());
  } else if (command == "refine") {
    auto r = cmd_refine(config);
    std::printf("refined %zu utterances; manifest %s\n", r.refined.size(), r.manifest_path.string().c_str());
    if (r.metrics) print_summary("mcd_db", r.metrics->mcd);
  } else if (command == "eval") {
    auto m = cmd_eval(config);
    print_summary("mcd_db", m.mcd);
    print_summary("ffe", m.ffe);
    print_summary("log_f0_rmse", m.log_f0_rmse);
  } else if (command == "compare-samplers") {
    auto r = cmd_compare_samplers(config);
    for (const auto& s : r.series)
      std::printf("%-16s MCD %s -> %s over %zu steps\n", s.variant.c_str(), format_real(s.mcd_median.front()).c_str(),
                  format_real(s.mcd_median.back()).c_str(), s.mcd_median.size() - 1);
    std::printf("wrote %s\n", r.csv_path.string().c_str());
  } else if (command == "ablate") {
    auto r = cmd_ablate(config);
    std::size_t failed = 0;
    for (const auto& row : r.rows) {
      if (row.ok)
        std::printf("%-12s %-32s median MCD %s\n", row.group.c_str(), row.condition.c_str(),
                    format_real(row.mcd_median).c_str());
      else
        std::printf("%-12s %-32s FAILED: %s\n", row.group.c_str(), row.condition.c_str(), row.error.c_str()), ++failed;
    }
    std::printf("wrote %s (%zu failed runs)\n", r.csv_path.string().c_str(), failed);
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Energy-based refinement of acoustic feature sequences"};
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  std::string config_path;
  std::vector<std::string> overrides;
  bool dump_defaults = false;
  std::string seed, out;
  app.add_option("-c,--config", config_path, "TOML-style config file")->check(CLI::ExistingFile);
  app.add_option("-s,--set", overrides, "Override a config value: section.key=value (repeatable)");
  app.add_option("--seed", seed, "Shorthand for --set run.seed=...");
  app.add_option("-o,--out", out, "Shorthand for --set run.out=...");
  app.add_flag("--dump-defaults", dump_defaults, "Print every config key with its default value and exit");
  app.require_subcommand(0, 1);
  app.fallthrough();

  const std::vector<std::pair<std::string, std::string>> commands = {
      {"gen-data", "Generate the synthetic dataset and degraded-hypothesis manifests"},
      {"train", "Train the energy model with NCE"},
      {"refine", "Refine hypotheses by descending the learned energy"},
      {"eval", "Score hypotheses against references (MCD, FFE, log-F0 RMSE)"},
      {"compare-samplers", "Trace energy and MCD per step for several samplers"},
      {"ablate", "Train and score the negative-sampling grid"},
  };
  for (const auto& [name, help] : commands) app.add_subcommand(name, help);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : ebm::kExitConfig;
  }

  try {
    ebm::RunConfig config = ebm::RunConfig::defaults();
    if (dump_defaults) {
      std::cout << config.dump();
      return ebm::kExitOk;
    }
    if (app.get_subcommands().empty()) {
      std::cerr << app.help();
      return ebm::kExitConfig;
    }
    if (!config_path.empty()) config.merge_file(config_path);
    for (const auto& o : overrides) config.apply_override(o);
    if (!seed.empty()) config.set("run.seed", seed);
    if (!out.empty()) config.set("run.out", out);
    return run(app.get_subcommands().front()->get_name(), config);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return ebm::exit_code_for(e);
  }
}
