#include <doctest.h>

#include <sys/wait.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "ffis/bench.hpp"
#include "ffis/table.hpp"

using namespace ffis;

namespace {

std::string cli_binary() {
  const char* path = std::getenv("FFIS_CLI");
  REQUIRE_MESSAGE(path != nullptr, "FFIS_CLI must point at the cli binary");
  return path;
}

std::filesystem::path work_dir() {
  const auto dir = std::filesystem::temp_directory_path() / "ffis_cli_test";
  std::filesystem::create_directories(dir);
  return dir;
}

int run_cli(const std::string& args) {
  const std::string cmd = "\"" + cli_binary() + "\" " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  REQUIRE(WIFEXITED(status));
  return WEXITSTATUS(status);
}

int run_cli_capture(const std::string& args, const std::filesystem::path& stdout_path) {
  const std::string cmd =
      "\"" + cli_binary() + "\" " + args + " >\"" + stdout_path.string() + "\" 2>/dev/null";
  const int status = std::system(cmd.c_str());
  REQUIRE(WIFEXITED(status));
  return WEXITSTATUS(status);
}

std::filesystem::path write_config(const std::string& name, const std::string& text) {
  const auto path = work_dir() / name;
  std::ofstream out(path);
  out << text;
  REQUIRE(out.good());
  return path;
}

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path);
  REQUIRE_MESSAGE(in.good(), ("missing file: " + path.string()));
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

const std::string kPropensityConfig = R"({
  "policy": {"kind": "fixed_score_pl", "num_contexts": 1, "catalog_size": 6, "seed": 7},
  "slate": [0, 2, 4],
  "methods": ["forward_dp", "enumeration", "gumbel_mc"],
  "mc_samples": 20000,
  "seed": 5
})";

}  // namespace

TEST_CASE("help requests exit zero") {
  CHECK(run_cli("--help") == 0);
  CHECK(run_cli("propensity --help") == 0);
}

TEST_CASE("argument and config mistakes exit two") {
  CHECK(run_cli("") == 2);
  CHECK(run_cli("ope-mdp") == 2);
  CHECK(run_cli("psychic --config x.json") == 2);
  CHECK(run_cli("propensity --config /nonexistent/nowhere.json") == 2);

  const auto unknown_key = write_config("unknown_key.json", R"({"horizont": 3})");
  CHECK(run_cli("ope-mdp --config \"" + unknown_key.string() + "\"") == 2);

  const auto not_json = write_config("not_json.json", "{oops");
  CHECK(run_cli("ope-mdp --config \"" + not_json.string() + "\"") == 2);

  const auto prop = write_config("prop_fmt.json", kPropensityConfig);
  CHECK(run_cli("propensity --config \"" + prop.string() + "\" --format xml") == 2);
}

TEST_CASE("support violations exit three") {
  const auto cfg = write_config("violation.json", R"({
    "op": "variance_gap",
    "atoms": [{"cls": 0, "p_beta": 0.0, "p_pi": 0.5}, {"cls": 0, "p_beta": 1.0, "p_pi": 0.5}],
    "g": [1.0]
  })");
  CHECK(run_cli("diagnose --config \"" + cfg.string() + "\"") == 3);
}

TEST_CASE("propensity artifacts are reproducible byte for byte") {
  const auto cfg = write_config("prop.json", kPropensityConfig);
  const auto out = work_dir() / "prop.csv";

  REQUIRE(run_cli("propensity --config \"" + cfg.string() + "\" --out \"" + out.string() + "\"") == 0);
  const std::string first = slurp(out);
  const std::string first_manifest = slurp(out.string() + ".manifest.json");

  REQUIRE(run_cli("propensity --config \"" + cfg.string() + "\" --out \"" + out.string() + "\"") == 0);
  CHECK(slurp(out) == first);
  CHECK(slurp(out.string() + ".manifest.json") == first_manifest);

  const auto tables = parse_results(first, EmitFormat::csv);
  REQUIRE(tables.size() == 1);
  CHECK(tables[0].name == "propensity");
  CHECK(tables[0].rows.size() == 3);

  const nlohmann::json manifest = nlohmann::json::parse(first_manifest);
  CHECK(manifest.at("seed").get<std::uint64_t>() == 5);
  CHECK(manifest.at("version").get<std::string>() == kVersion);
  char expected[17];
  std::snprintf(expected, sizeof expected, "%016llx",
                static_cast<unsigned long long>(config_content_hash(kPropensityConfig)));
  CHECK(manifest.at("config_hash").get<std::string>() == expected);
}

TEST_CASE("json format and stdout mode emit parseable tables") {
  const auto cfg = write_config("prop2.json", kPropensityConfig);
  const auto out = work_dir() / "prop.json.out";
  REQUIRE(run_cli("propensity --config \"" + cfg.string() + "\" --out \"" + out.string() +
                  "\" --format json") == 0);
  const auto tables = parse_results(slurp(out), EmitFormat::json);
  REQUIRE(tables.size() == 1);
  CHECK(tables[0].columns ==
        std::vector<std::string>{"method", "value", "std_error", "n_samples", "queries"});

  const auto captured = work_dir() / "prop_stdout.txt";
  REQUIRE(run_cli_capture("propensity --config \"" + cfg.string() + "\"", captured) == 0);
  CHECK(slurp(captured).find("# table propensity") != std::string::npos);
}

TEST_CASE("seed override changes results but not the config hash") {
  const auto cfg = write_config("mdp.json", R"({
    "num_states": 4, "num_actions": 2, "horizon": 2,
    "estimators": ["ois"], "n_trials": 4, "n_logged": 50, "seed": 3
  })");
  const auto out1 = work_dir() / "mdp1.csv";
  const auto out2 = work_dir() / "mdp2.csv";
  REQUIRE(run_cli("ope-mdp --config \"" + cfg.string() + "\" --out \"" + out1.string() +
                  "\" --seed 1") == 0);
  REQUIRE(run_cli("ope-mdp --config \"" + cfg.string() + "\" --out \"" + out2.string() +
                  "\" --seed 2") == 0);
  CHECK(slurp(out1) != slurp(out2));

  const nlohmann::json m1 = nlohmann::json::parse(slurp(out1.string() + ".manifest.json"));
  const nlohmann::json m2 = nlohmann::json::parse(slurp(out2.string() + ".manifest.json"));
  CHECK(m1.at("seed").get<std::uint64_t>() == 1);
  CHECK(m2.at("seed").get<std::uint64_t>() == 2);
  CHECK(m1.at("config_hash") == m2.at("config_hash"));

  const auto out3 = work_dir() / "mdp3.csv";
  REQUIRE(run_cli("ope-mdp --config \"" + cfg.string() + "\" --out \"" + out3.string() + "\"") == 0);
  const nlohmann::json m3 = nlohmann::json::parse(slurp(out3.string() + ".manifest.json"));
  CHECK(m3.at("seed").get<std::uint64_t>() == 3);  // config seed when no override
}

TEST_CASE("wall-clock subcommands write a timing sidecar next to a deterministic artifact") {
  const auto slate_cfg = write_config("slate.json", R"({
    "catalog_size": 5, "slate_sizes": [2], "num_contexts": 1,
    "estimators": ["tree_ois", "ff_ois"], "n_trials": 3, "n_logged": 50,
    "mc_samples": 0, "min_timing_ms": 0.5, "seed": 4
  })");
  const auto slate_out = work_dir() / "slate.csv";
  REQUIRE(run_cli("ope-slate --config \"" + slate_cfg.string() + "\" --out \"" + slate_out.string() +
                  "\"") == 0);
  const std::string slate_first = slurp(slate_out);
  const auto slate_tables = parse_results(slate_first, EmitFormat::csv);
  REQUIRE(slate_tables.size() == 2);
  CHECK(slate_tables[0].name == "slate_ground_truth");
  CHECK(slate_tables[1].name == "slate_ope");

  const auto sidecar = parse_results(slurp(slate_out.string() + ".timings.csv"), EmitFormat::csv);
  REQUIRE(sidecar.size() == 1);
  CHECK(sidecar[0].name == "propensity_timing");
  CHECK(sidecar[0].rows.size() >= 2);  // forward_dp and enumeration for the single slate size

  REQUIRE(run_cli("ope-slate --config \"" + slate_cfg.string() + "\" --out \"" + slate_out.string() +
                  "\"") == 0);
  CHECK(slurp(slate_out) == slate_first);

  const auto scaling_cfg = write_config("scaling.json", R"({
    "catalog_size": 6, "slate_sizes": [2, 3], "policy": "fixed_score",
    "mc_samples": 0, "min_timing_ms": 0.5, "seed": 1
  })");
  const auto scaling_out = work_dir() / "scaling.csv";
  REQUIRE(run_cli("bench-scaling --config \"" + scaling_cfg.string() + "\" --out \"" +
                  scaling_out.string() + "\"") == 0);
  const std::string scaling_first = slurp(scaling_out);
  const auto audit = parse_results(scaling_first, EmitFormat::csv);
  REQUIRE(audit.size() == 1);
  CHECK(audit[0].name == "scaling_audit");
  CHECK(audit[0].rows.size() == 2);
  CHECK(std::filesystem::exists(scaling_out.string() + ".timings.csv"));

  REQUIRE(run_cli("bench-scaling --config \"" + scaling_cfg.string() + "\" --out \"" +
                  scaling_out.string() + "\"") == 0);
  CHECK(slurp(scaling_out) == scaling_first);
}

TEST_CASE("model selection and diagnostics emit their tables through the cli") {
  const auto sel_cfg = write_config("select.json", R"({
    "catalog_size": 5, "slate_size": 2, "num_contexts": 1,
    "candidate_temperatures": [0.8, 1.6], "estimators": ["ff_wis"],
    "n_trials": 3, "n_logged": 60, "seed": 2
  })");
  const auto sel_out = work_dir() / "select.csv";
  REQUIRE(run_cli("model-select --config \"" + sel_cfg.string() + "\" --out \"" + sel_out.string() +
                  "\"") == 0);
  const auto sel_tables = parse_results(slurp(sel_out), EmitFormat::csv);
  REQUIRE(sel_tables.size() == 2);
  CHECK(sel_tables[0].name == "candidates");
  CHECK(sel_tables[1].name == "model_selection");

  const auto diag_cfg = write_config("diag.json", R"({
    "op": "tvd",
    "policy": {"num_contexts": 1, "catalog_size": 5, "position_bias": 0.6, "seed": 2},
    "sizes": [1, 2], "n_draws": 20, "seed": 9
  })");
  const auto diag_out = work_dir() / "diag.csv";
  REQUIRE(run_cli("diagnose --config \"" + diag_cfg.string() + "\" --out \"" + diag_out.string() +
                  "\"") == 0);
  const auto diag_tables = parse_results(slurp(diag_out), EmitFormat::csv);
  REQUIRE(diag_tables.size() == 1);
  CHECK(diag_tables[0].name == "set_sufficiency_tvd");
  CHECK(diag_tables[0].rows.size() == 2);
}
