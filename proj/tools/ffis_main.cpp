#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include <CLI11.hpp>

#include "ffis/bench.hpp"
#include "ffis/common.hpp"
#include "ffis/table.hpp"

namespace {

struct GlobalArgs {
  std::string config_path;
  std::string out_path;
  std::string format = "csv";
  std::optional<std::uint64_t> seed;
  int threads = 0;
};

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ffis::ValidationError("cannot open config: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

// The main artifact and its manifest are pure functions of (config, seed);
// wall-clock tables go to a .timings sidecar so reruns stay byte-identical.
void emit(const GlobalArgs& args, const std::vector<ffis::ResultTable>& tables,
          const std::vector<ffis::ResultTable>& timing_tables, std::uint64_t config_hash,
          std::uint64_t seed) {
  const ffis::EmitFormat fmt = ffis::parse_emit_format(args.format);
  if (args.out_path.empty()) {
    std::cout << ffis::render_results(tables, fmt);
    if (!timing_tables.empty()) std::cout << ffis::render_results(timing_tables, fmt);
    return;
  }
  ffis::emit_results(tables, fmt, args.out_path);
  ffis::RunManifest manifest;
  manifest.config_hash = config_hash;
  manifest.seed = seed;
  ffis::write_manifest(args.out_path, manifest);
  if (!timing_tables.empty()) {
    ffis::emit_results(timing_tables, fmt, args.out_path + ".timings." + ffis::format_extension(fmt));
  }
}

int run(const std::string& command, const GlobalArgs& args) {
#ifdef _OPENMP
  if (args.threads > 0) omp_set_num_threads(args.threads);
#endif
  const std::string text = read_file(args.config_path);
  const std::uint64_t config_hash = ffis::config_content_hash(text);
  if (command == "propensity") {
    ffis::PropensityConfig cfg = ffis::parse_propensity_config(text);
    if (args.seed) cfg.seed = *args.seed;
    emit(args, ffis::run_propensity(cfg), {}, config_hash, cfg.seed);
  } else if (command == "ope-mdp") {
    ffis::MdpBenchConfig cfg = ffis::parse_mdp_bench_config(text);
    if (args.seed) cfg.seed = *args.seed;
    emit(args, ffis::run_mdp_benchmark(cfg).tables(), {}, config_hash, cfg.seed);
  } else if (command == "ope-slate") {
    ffis::SlateBenchConfig cfg = ffis::parse_slate_bench_config(text);
    if (args.seed) cfg.seed = *args.seed;
    const ffis::SlateBenchReport report = ffis::run_slate_benchmark(cfg);
    emit(args, report.tables(), report.timing_tables(), config_hash, cfg.seed);
  } else if (command == "model-select") {
    ffis::SelectionConfig cfg = ffis::parse_selection_config(text);
    if (args.seed) cfg.seed = *args.seed;
    emit(args, ffis::run_model_selection(cfg).tables(), {}, config_hash, cfg.seed);
  } else if (command == "diagnose") {
    const ffis::DiagnoseResult result = ffis::run_diagnose(text, args.seed);
    emit(args, result.tables, {}, config_hash, result.seed);
  } else if (command == "bench-scaling") {
    ffis::ScalingConfig cfg = ffis::parse_scaling_config(text);
    if (args.seed) cfg.seed = *args.seed;
    const ffis::ScalingReport report = ffis::run_scaling_benchmark(cfg);
    emit(args, report.tables(), report.timing_tables(), config_hash, cfg.seed);
  } else {
    throw ffis::ValidationError("unknown command: " + command);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"off-policy evaluation with unordered-slate and quotient-flow estimators"};
  app.fallthrough();
  app.require_subcommand(1);

  GlobalArgs args;
  std::uint64_t seed_flag = 0;
  app.add_option("--config", args.config_path, "JSON config file")->required();
  app.add_option("--out", args.out_path, "output artifact path (stdout when omitted)");
  app.add_option("--format", args.format, "output format")
      ->check(CLI::IsMember({"csv", "json"}))
      ->capture_default_str();
  CLI::Option* seed_opt = app.add_option("--seed", seed_flag, "override the config seed");
  app.add_option("--threads", args.threads, "worker thread count (0 keeps the runtime default)");

  app.add_subcommand("propensity", "unordered propensity of one slate under a policy spec");
  app.add_subcommand("ope-mdp", "estimator benchmark on a seeded tabular MDP");
  app.add_subcommand("ope-slate", "slate estimator benchmark plus propensity timing sidecar");
  app.add_subcommand("model-select", "candidate-ranking metrics on the synthetic slate world");
  app.add_subcommand("diagnose", "variance-gap, ordering-gap, and set-sufficiency diagnostics");
  app.add_subcommand("bench-scaling", "propensity method scaling sweep");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  if (seed_opt->count() > 0) args.seed = seed_flag;

  try {
    return run(app.get_subcommands().front()->get_name(), args);
  } catch (const ffis::SupportViolation& e) {
    std::cerr << "support violation: " << e.what() << "\n";
    return 3;
  } catch (const ffis::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
