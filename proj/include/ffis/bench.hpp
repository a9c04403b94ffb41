#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ffis/rng.hpp"
#include "ffis/slate_estimators.hpp"
#include "ffis/table.hpp"

namespace ffis {

// Synthetic slate environment: per-context item qualities in [0, 1], reward
// of a slate is the mean quality minus a pairwise redundancy penalty. The
// reward depends on the slate only through its item set.
struct SlateWorld {
  std::vector<double> context_probs;           // sums to 1
  std::vector<std::vector<double>> quality;    // [context][item]
  double interaction = 0.1;                    // redundancy penalty weight
  double noise_std = 0.1;

  int num_contexts() const { return static_cast<int>(quality.size()); }
  int catalog_size() const { return quality.empty() ? 0 : static_cast<int>(quality.front().size()); }

  // mean(q_i over slate) - interaction * sum_{i<j in slate} min(q_i, q_j)
  double mean_reward(int context, std::uint64_t slate_mask) const;
  double sample_reward(int context, std::uint64_t slate_mask, CounterRng& rng) const;

  void validate() const;

  static SlateWorld seeded(int num_contexts, int catalog_size, double interaction, double noise_std,
                           std::uint64_t seed);
};

// Logs n slates under the behavior policy: context from context_probs, items
// picked sequentially, reward sampled from the world. Record i consumes RNG
// stream (seed, i) only, so the parallel build is bit-identical to the
// serial one.
LoggedSlateDataset sample_slate_dataset(const SlateWorld& world, const SetSufficientPolicy& behavior,
                                        const std::string& behavior_id, long n, int slate_size,
                                        std::uint64_t seed);
LoggedSlateDataset sample_slate_dataset_serial(const SlateWorld& world, const SetSufficientPolicy& behavior,
                                               const std::string& behavior_id, long n, int slate_size,
                                               std::uint64_t seed);

// Exact V(policy): context-weighted lattice-flow average of mean rewards
// over all size-K slates.
double exact_slate_value(const SlateWorld& world, const SetSufficientPolicy& policy, int slate_size,
                         long lattice_budget = 200000);

// One estimator's aggregate over benchmark trials. estimates holds the
// successful trials in trial order; status carries the first failure message
// when any trial failed.
struct BenchRow {
  std::string estimator;
  std::vector<double> estimates;
  double bias = 0.0;
  double stddev = 0.0;
  double rmse = 0.0;
  long n_ok = 0;
  std::string status = "ok";
};

struct MdpBenchConfig {
  int num_states = 20;
  int num_actions = 4;
  int horizon = 5;
  double reward_noise_std = 0.1;
  double discount = 1.0;
  std::uint64_t world_seed = 1;
  // Both policies are derived from the optimal Q table of the seeded MDP;
  // param is the softmax temperature or the epsilon.
  std::string target_kind = "softmax_of_table";
  double target_param = 1.0;
  std::string behavior_kind = "epsilon_greedy_of_table";
  double behavior_param = 0.3;
  std::string quotient = "state_time";
  std::string ratio_mode = "exact";
  double split_fraction = 0.5;
  std::vector<std::string> estimators = {"ois", "wis", "pdis", "wpdis", "ff_ois", "ff_wis"};
  long n_trials = 200;
  long n_logged = 5000;
  std::uint64_t seed = 0;
};

struct MdpBenchReport {
  double exact_value = 0.0;
  long n_trials = 0;
  std::vector<BenchRow> rows;

  std::vector<ResultTable> tables() const;
};

// Per trial: log n_logged episodes under the behavior policy and run every
// configured estimator against exact V(target). Estimator failures are
// isolated per row; trials run in parallel on derived seeds.
MdpBenchReport run_mdp_benchmark(const MdpBenchConfig& config);
MdpBenchReport run_mdp_benchmark_serial(const MdpBenchConfig& config);

// Wall-clock rows are measured, hence not reproducible; they are emitted
// separately from the deterministic tables. value is the propensity produced
// by the timed method (nan when extrapolated).
struct TimingRow {
  int slate_size = 0;
  std::string method;
  double wall_ms_per_call = 0.0;
  long queries = 0;
  bool extrapolated = false;
  double value = 0.0;
};

struct SlateBenchConfig {
  int catalog_size = 15;
  std::vector<int> slate_sizes = {3, 4, 5};
  int num_contexts = 5;
  double interaction = 0.1;
  double noise_std = 0.1;
  std::uint64_t world_seed = 1;
  double score_scale = 1.0;
  double target_temperature = 0.7;
  double behavior_temperature = 1.4;
  std::uint64_t policy_seed = 2;
  std::string reward_model = "empirical";  // or "oracle"
  std::vector<std::string> estimators = {"tree_ois", "tree_wis", "ff_ois", "ff_wis"};
  long n_trials = 200;
  long n_logged = 500;
  long lattice_budget = 200000;
  long mc_samples = 0;  // adds a gumbel_mc timing row when > 0
  int enumeration_guard = 8;
  double min_timing_ms = 20.0;
  std::uint64_t seed = 0;
};

struct SlateBenchKReport {
  int slate_size = 0;
  double exact_value = 0.0;
  std::vector<BenchRow> rows;
};

struct SlateBenchReport {
  std::vector<SlateBenchKReport> per_k;
  std::vector<TimingRow> timings;
  long n_trials = 0;

  std::vector<ResultTable> tables() const;         // deterministic
  std::vector<ResultTable> timing_tables() const;  // wall-clock sidecar
};

// Fixed-score Plackett-Luce target and behavior sharing one score matrix at
// different temperatures. Per slate size: exact value by lattice flows,
// estimator RMSE over trials, and propensity timing rows for the behavior
// policy (enumeration extrapolated with a fitted K! cost model above the
// factorial guard).
SlateBenchReport run_slate_benchmark(const SlateBenchConfig& config);
SlateBenchReport run_slate_benchmark_serial(const SlateBenchConfig& config);

struct ScalingConfig {
  int catalog_size = 15;
  std::vector<int> slate_sizes = {2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12};
  std::string policy = "context_dependent";  // or "fixed_score"
  double score_scale = 1.0;
  double interaction_scale = 0.3;
  double temperature = 1.0;
  std::uint64_t policy_seed = 3;
  long mc_samples = 100000;  // 0 disables the gumbel rows
  int enumeration_guard = 8;
  double min_timing_ms = 20.0;
  std::uint64_t seed = 0;
};

struct ScalingAuditRow {
  int slate_size = 0;
  long queries = 0;
  long query_bound = 0;  // 2^K - 1
  double propensity_forward_dp = 0.0;
  double propensity_enumeration = 0.0;  // nan when above the guard
  double gumbel_estimate = 0.0;         // nan when disabled
  double gumbel_std_error = 0.0;
  bool escalated_to_log = false;
};

struct ScalingReport {
  std::vector<ScalingAuditRow> audit;
  std::vector<TimingRow> timings;

  std::vector<ResultTable> tables() const;         // deterministic audit
  std::vector<ResultTable> timing_tables() const;  // wall-clock sidecar
};

// Propensity scaling sweep on one seeded slate per size: query audit and
// value agreement (deterministic) plus per-method wall time.
ScalingReport run_scaling_benchmark(const ScalingConfig& config);

struct SelectionConfig {
  int catalog_size = 10;
  int slate_size = 4;
  int num_contexts = 5;
  double interaction = 0.1;
  double noise_std = 0.1;
  std::uint64_t world_seed = 1;
  double score_scale = 1.0;
  std::uint64_t policy_seed = 2;
  double behavior_temperature = 1.0;
  std::vector<double> candidate_temperatures = {0.5, 0.75, 1.0, 1.5, 2.0, 3.0, 5.0, 8.0};
  std::string reward_model = "empirical";
  std::vector<std::string> estimators = {"tree_ois", "tree_wis", "ff_ois", "ff_wis"};
  long n_trials = 50;
  long n_logged = 1000;
  long lattice_budget = 200000;
  std::uint64_t seed = 0;
};

struct SelectionRow {
  std::string estimator;
  double top1_accuracy = 0.0;
  std::optional<double> spearman_mean;  // absent when never defined (single candidate)
  double regret_mean = 0.0;
  long n_candidate_skips = 0;  // support-violating candidate scores across trials
  long n_trials_ok = 0;
  std::string status = "ok";
};

struct SelectionReport {
  std::vector<double> candidate_temperatures;
  std::vector<double> true_values;
  int best_candidate = 0;
  long n_trials = 0;
  std::vector<SelectionRow> rows;

  std::vector<ResultTable> tables() const;
};

// Candidates are one seeded scorer at a ladder of temperatures; true values
// are exact lattice enumerations. Per trial each estimator ranks every
// candidate; a candidate whose score hits a support violation is skipped for
// that estimator with a diagnostic count.
SelectionReport run_model_selection(const SelectionConfig& config);
SelectionReport run_model_selection_serial(const SelectionConfig& config);

// Rank correlation with average ranks on ties; nullopt when either side has
// fewer than two values or zero rank variance.
std::optional<double> spearman_rho(const std::vector<double>& a, const std::vector<double>& b);

struct PropensityConfig {
  std::string policy_json;  // nested policy spec, kept verbatim
  int context = 0;
  std::vector<int> slate;
  std::vector<std::string> methods = {"forward_dp"};  // forward_dp | enumeration | gumbel_mc
  long mc_samples = 100000;
  int enumeration_guard = 10;
  std::uint64_t seed = 0;
};

std::vector<ResultTable> run_propensity(const PropensityConfig& config);

// Diagnostics dispatcher: op = variance_gap | ordering_gap | tvd, parameters
// nested in the config document. Returns the emitted tables plus the seed
// actually used (for the run manifest).
struct DiagnoseResult {
  std::vector<ResultTable> tables;
  std::uint64_t seed = 0;
};

DiagnoseResult run_diagnose(const std::string& config_json,
                            std::optional<std::uint64_t> seed_override = std::nullopt);

// Strict JSON config parsers: unknown keys are errors, every field optional
// with the defaults above.
MdpBenchConfig parse_mdp_bench_config(const std::string& json_text);
SlateBenchConfig parse_slate_bench_config(const std::string& json_text);
ScalingConfig parse_scaling_config(const std::string& json_text);
SelectionConfig parse_selection_config(const std::string& json_text);
PropensityConfig parse_propensity_config(const std::string& json_text);

// Hash of the parsed document re-serialized with sorted keys: whitespace and
// key order do not change it, any value change does.
std::uint64_t config_content_hash(const std::string& json_text);

}  // namespace ffis
