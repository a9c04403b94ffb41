#include "ffis/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <utility>

#include <nlohmann/json.hpp>

#include "ffis/forward_dp.hpp"
#include "ffis/mdp.hpp"
#include "ffis/quotient.hpp"
#include "ffis/variance.hpp"

namespace ffis {

namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

int uniform_int(CounterRng& rng, int n) {
  const std::uint64_t bound = static_cast<std::uint64_t>(n);
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() / bound * bound;
  while (true) {
    const std::uint64_t u = rng.next_u64();
    if (u < limit) return static_cast<int>(u % bound);
  }
}

std::vector<int> draw_distinct_slate(CounterRng& rng, int catalog, int k) {
  std::uint64_t mask = 0;
  int picked = 0;
  while (picked < k) {
    const int item = uniform_int(rng, catalog);
    const std::uint64_t bit = std::uint64_t{1} << item;
    if (mask & bit) continue;
    mask |= bit;
    ++picked;
  }
  std::vector<int> slate;
  slate.reserve(static_cast<std::size_t>(k));
  for (int i = 0; i < catalog; ++i) {
    if (mask & (std::uint64_t{1} << i)) slate.push_back(i);
  }
  return slate;
}

}  // namespace

double SlateWorld::mean_reward(int context, std::uint64_t slate_mask) const {
  if (context < 0 || context >= num_contexts()) {
    throw ValidationError("slate world: context out of range");
  }
  if (slate_mask == 0) throw ValidationError("slate world: empty slate");
  const int m = catalog_size();
  if (m < 64 && (slate_mask >> m) != 0) throw ValidationError("slate world: item out of range");
  const auto& q = quality[static_cast<std::size_t>(context)];
  std::vector<double> qs;
  for (int i = 0; i < m; ++i) {
    if (slate_mask & (std::uint64_t{1} << i)) qs.push_back(q[static_cast<std::size_t>(i)]);
  }
  double sum = 0.0;
  for (const double v : qs) sum += v;
  double penalty = 0.0;
  for (std::size_t i = 0; i < qs.size(); ++i) {
    for (std::size_t j = i + 1; j < qs.size(); ++j) penalty += std::min(qs[i], qs[j]);
  }
  return sum / static_cast<double>(qs.size()) - interaction * penalty;
}

double SlateWorld::sample_reward(int context, std::uint64_t slate_mask, CounterRng& rng) const {
  return mean_reward(context, slate_mask) + noise_std * rng.gaussian();
}

void SlateWorld::validate() const {
  if (quality.empty()) throw ValidationError("slate world: no contexts");
  const std::size_t m = quality.front().size();
  if (m == 0 || m > 64) throw ValidationError("slate world: catalog size must lie in [1, 64]");
  for (const auto& row : quality) {
    if (row.size() != m) throw ValidationError("slate world: ragged quality matrix");
    for (const double v : row) {
      if (!std::isfinite(v)) throw ValidationError("slate world: non-finite quality");
    }
  }
  if (context_probs.size() != quality.size()) {
    throw ValidationError("slate world: context_probs size mismatch");
  }
  double total = 0.0;
  for (const double p : context_probs) {
    if (!(p >= 0.0) || !std::isfinite(p)) throw ValidationError("slate world: bad context probability");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ValidationError("slate world: context_probs must sum to 1");
  if (!std::isfinite(interaction)) throw ValidationError("slate world: non-finite interaction");
  if (!(noise_std >= 0.0) || !std::isfinite(noise_std)) {
    throw ValidationError("slate world: noise_std must be nonnegative");
  }
}

SlateWorld SlateWorld::seeded(int num_contexts, int catalog_size, double interaction, double noise_std,
                              std::uint64_t seed) {
  if (num_contexts <= 0) throw ValidationError("slate world: num_contexts must be positive");
  if (catalog_size <= 0 || catalog_size > 64) {
    throw ValidationError("slate world: catalog size must lie in [1, 64]");
  }
  SlateWorld world;
  world.interaction = interaction;
  world.noise_std = noise_std;
  world.context_probs.assign(static_cast<std::size_t>(num_contexts), 1.0 / num_contexts);
  world.quality.resize(static_cast<std::size_t>(num_contexts));
  CounterRng rng(seed, 0);
  for (auto& row : world.quality) {
    row.resize(static_cast<std::size_t>(catalog_size));
    for (double& v : row) v = rng.uniform();
  }
  world.validate();
  return world;
}

namespace {

SlateRecord sample_one_slate(const SlateWorld& world, const SetSufficientPolicy& behavior, int slate_size,
                             std::uint64_t seed, long index) {
  CounterRng rng(seed, static_cast<std::uint64_t>(index));
  SlateRecord rec;
  rec.context = rng.categorical(world.context_probs);
  std::vector<double> dist(static_cast<std::size_t>(behavior.catalog_size()));
  std::uint64_t mask = 0;
  for (int k = 0; k < slate_size; ++k) {
    behavior.next_item_dist(rec.context, mask, dist);
    const int item = rng.categorical(dist);
    rec.order.push_back(item);
    mask |= std::uint64_t{1} << item;
  }
  rec.reward = world.sample_reward(rec.context, mask, rng);
  return rec;
}

LoggedSlateDataset sample_slate_dataset_impl(const SlateWorld& world, const SetSufficientPolicy& behavior,
                                             const std::string& behavior_id, long n, int slate_size,
                                             std::uint64_t seed, bool parallel) {
  world.validate();
  if (behavior.catalog_size() != world.catalog_size()) {
    throw ValidationError("slate sampling: policy catalog does not match the world");
  }
  if (behavior.num_contexts() != world.num_contexts()) {
    throw ValidationError("slate sampling: policy context count does not match the world");
  }
  if (n <= 0) throw ValidationError("slate sampling: need a positive record count");
  if (slate_size <= 0 || slate_size > world.catalog_size()) {
    throw ValidationError("slate sampling: slate size out of range");
  }
  LoggedSlateDataset data;
  data.catalog_size = world.catalog_size();
  data.slate_size = slate_size;
  data.behavior_id = behavior_id;
  data.records.resize(static_cast<std::size_t>(n));
  if (parallel) {
#pragma omp parallel for schedule(static)
    for (long i = 0; i < n; ++i) {
      data.records[static_cast<std::size_t>(i)] = sample_one_slate(world, behavior, slate_size, seed, i);
    }
  } else {
    for (long i = 0; i < n; ++i) {
      data.records[static_cast<std::size_t>(i)] = sample_one_slate(world, behavior, slate_size, seed, i);
    }
  }
  data.validate();
  return data;
}

}  // namespace

LoggedSlateDataset sample_slate_dataset(const SlateWorld& world, const SetSufficientPolicy& behavior,
                                        const std::string& behavior_id, long n, int slate_size,
                                        std::uint64_t seed) {
  return sample_slate_dataset_impl(world, behavior, behavior_id, n, slate_size, seed, true);
}

LoggedSlateDataset sample_slate_dataset_serial(const SlateWorld& world, const SetSufficientPolicy& behavior,
                                               const std::string& behavior_id, long n, int slate_size,
                                               std::uint64_t seed) {
  return sample_slate_dataset_impl(world, behavior, behavior_id, n, slate_size, seed, false);
}

double exact_slate_value(const SlateWorld& world, const SetSufficientPolicy& policy, int slate_size,
                         long lattice_budget) {
  world.validate();
  if (policy.catalog_size() != world.catalog_size() || policy.num_contexts() != world.num_contexts()) {
    throw ValidationError("exact slate value: policy shape does not match the world");
  }
  double value = 0.0;
  for (int x = 0; x < world.num_contexts(); ++x) {
    const double px = world.context_probs[static_cast<std::size_t>(x)];
    if (px == 0.0) continue;
    const LatticeFlows flows = full_lattice_flows(policy, x, slate_size, lattice_budget);
    double vx = 0.0;
    for (const auto& [mask, flow] : flows.levels[static_cast<std::size_t>(slate_size)]) {
      if (flow > 0.0) vx += flow * world.mean_reward(x, mask);
    }
    value += px * vx;
  }
  return value;
}

namespace {

// Per-(estimator, trial) outcome slots filled inside the parallel trial loop
// and reduced sequentially, so one bad estimator or trial cannot disturb the
// others and failure attribution is deterministic.
struct TrialSlots {
  std::vector<std::vector<double>> value;    // [estimator][trial]
  std::vector<std::vector<char>> ok;         // [estimator][trial]
  std::vector<std::vector<std::string>> err;  // [estimator][trial]

  TrialSlots(std::size_t estimators, std::size_t trials)
      : value(estimators, std::vector<double>(trials, 0.0)),
        ok(estimators, std::vector<char>(trials, 0)),
        err(estimators, std::vector<std::string>(trials)) {}
};

BenchRow reduce_row(const std::string& name, const std::vector<double>& value,
                    const std::vector<char>& ok, const std::vector<std::string>& err,
                    double exact_value) {
  BenchRow row;
  row.estimator = name;
  for (std::size_t t = 0; t < value.size(); ++t) {
    if (ok[t]) {
      row.estimates.push_back(value[t]);
    } else if (row.status == "ok") {
      row.status = err[t];
    }
  }
  row.n_ok = static_cast<long>(row.estimates.size());
  if (row.n_ok == 0) {
    row.bias = row.stddev = row.rmse = kNan;
    return row;
  }
  double mean = 0.0;
  double mse = 0.0;
  for (const double e : row.estimates) {
    mean += e;
    mse += (e - exact_value) * (e - exact_value);
  }
  mean /= static_cast<double>(row.n_ok);
  mse /= static_cast<double>(row.n_ok);
  row.bias = mean - exact_value;
  row.rmse = std::sqrt(mse);
  double ss = 0.0;
  for (const double e : row.estimates) ss += (e - mean) * (e - mean);
  row.stddev = row.n_ok >= 2 ? std::sqrt(ss / static_cast<double>(row.n_ok - 1)) : 0.0;
  return row;
}

void append_bench_rows(ResultTable& table, const std::vector<BenchRow>& rows,
                       const std::string& size_cell) {
  for (const BenchRow& r : rows) {
    std::vector<std::string> cells;
    if (!size_cell.empty()) cells.push_back(size_cell);
    cells.push_back(r.estimator);
    cells.push_back(real_cell(r.bias));
    cells.push_back(real_cell(r.stddev));
    cells.push_back(real_cell(r.rmse));
    cells.push_back(int_cell(r.n_ok));
    cells.push_back(r.status);
    table.rows.push_back(std::move(cells));
  }
}

MdpBenchReport run_mdp_benchmark_impl(const MdpBenchConfig& config, bool parallel) {
  if (config.n_trials < 1) throw ValidationError("mdp benchmark: n_trials must be at least 1");
  if (config.n_logged < 1) throw ValidationError("mdp benchmark: n_logged must be at least 1");
  if (config.estimators.empty()) throw ValidationError("mdp benchmark: no estimators configured");

  const TabularMdp mdp = make_random_mdp(config.num_states, config.num_actions, config.horizon,
                                         config.reward_noise_std, config.discount, config.world_seed);
  const std::vector<double> q = backward_induction_q(mdp);
  const StochasticPolicy target = build_policy(parse_policy_kind(config.target_kind), q, config.num_states,
                                               config.num_actions, config.target_param);
  const StochasticPolicy behavior = build_policy(parse_policy_kind(config.behavior_kind), q,
                                                 config.num_states, config.num_actions,
                                                 config.behavior_param);

  std::vector<EstimatorMethod> methods;
  for (const std::string& name : config.estimators) methods.push_back(parse_estimator_method(name));
  QuotientSpec spec;
  spec.kind = parse_quotient_kind(config.quotient);
  const RatioMode mode = parse_ratio_mode(config.ratio_mode);

  const auto is_ff = [](EstimatorMethod m) {
    return m == EstimatorMethod::ff_ois || m == EstimatorMethod::ff_wis;
  };
  const bool any_ff = std::any_of(methods.begin(), methods.end(), is_ff);

  // Exact ratios do not depend on the logged data; a failure here (for
  // example an identity quotient) poisons only the ff rows.
  QuotientRatioTable exact_table;
  bool have_exact_table = false;
  std::string exact_table_error;
  if (any_ff && mode == RatioMode::exact) {
    try {
      exact_table = exact_ratio_table(exact_flows(mdp, target, spec), exact_flows(mdp, behavior, spec));
      have_exact_table = true;
    } catch (const std::exception& e) {
      exact_table_error = e.what();
    }
  }

  const long n_trials = config.n_trials;
  const std::size_t n_est = methods.size();
  TrialSlots slots(n_est, static_cast<std::size_t>(n_trials));

#pragma omp parallel for schedule(dynamic) if (parallel)
  for (long t = 0; t < n_trials; ++t) {
    const std::uint64_t trial_seed = derive_seed(config.seed, static_cast<std::uint64_t>(t));
    std::vector<Trajectory> data;
    std::string data_error;
    try {
      data = parallel ? sample_trajectories(mdp, behavior, config.n_logged, trial_seed)
                      : sample_trajectories_serial(mdp, behavior, config.n_logged, trial_seed);
    } catch (const std::exception& e) {
      data_error = e.what();
    }
    for (std::size_t j = 0; j < n_est; ++j) {
      const std::size_t ti = static_cast<std::size_t>(t);
      if (!data_error.empty()) {
        slots.err[j][ti] = data_error;
        continue;
      }
      try {
        const QuotientRatioTable* ratios = nullptr;
        QuotientRatioTable local;
        if (is_ff(methods[j])) {
          if (mode == RatioMode::exact) {
            if (!have_exact_table) throw ValidationError(exact_table_error);
            ratios = &exact_table;
          } else {
            local = empirical_quotient_ratio(data, spec, target, behavior, mode, config.split_fraction);
            ratios = &local;
          }
        }
        const EstimateReport rep =
            estimate_value(data, methods[j], target, behavior, config.discount, &spec, ratios);
        slots.value[j][ti] = rep.estimate;
        slots.ok[j][ti] = 1;
      } catch (const std::exception& e) {
        slots.err[j][ti] = e.what();
      }
    }
  }

  MdpBenchReport report;
  report.exact_value = exact_value(mdp, target);
  report.n_trials = n_trials;
  for (std::size_t j = 0; j < n_est; ++j) {
    report.rows.push_back(
        reduce_row(config.estimators[j], slots.value[j], slots.ok[j], slots.err[j], report.exact_value));
  }
  return report;
}

}  // namespace

MdpBenchReport run_mdp_benchmark(const MdpBenchConfig& config) { return run_mdp_benchmark_impl(config, true); }

MdpBenchReport run_mdp_benchmark_serial(const MdpBenchConfig& config) {
  return run_mdp_benchmark_impl(config, false);
}

std::vector<ResultTable> MdpBenchReport::tables() const {
  ResultTable truth;
  truth.name = "mdp_ground_truth";
  truth.columns = {"quantity", "value"};
  truth.rows.push_back({"exact_value", real_cell(exact_value)});
  truth.rows.push_back({"n_trials", int_cell(n_trials)});
  ResultTable ope;
  ope.name = "mdp_ope";
  ope.columns = {"estimator", "bias", "std", "rmse", "n_trials_ok", "status"};
  append_bench_rows(ope, rows, "");
  return {truth, ope};
}

namespace {

double factorial_d(int k) {
  double f = 1.0;
  for (int i = 2; i <= k; ++i) f *= i;
  return f;
}

// next_item_dist calls made by the depth-first ordering enumeration:
// sum over prefix lengths j of K!/(K-j)!.
long enumeration_query_count(int k) {
  double total = 0.0;
  double nodes = 1.0;
  for (int j = 0; j < k; ++j) {
    total += nodes;
    nodes *= (k - j);
  }
  const double cap = 9e18;
  return static_cast<long>(std::min(total, cap));
}

template <typename F>
double time_per_call_ms(F&& fn, double min_ms) {
  using clock = std::chrono::steady_clock;
  const auto start = clock::now();
  long iters = 0;
  double elapsed = 0.0;
  do {
    fn();
    ++iters;
    elapsed = std::chrono::duration<double, std::milli>(clock::now() - start).count();
  } while (elapsed < min_ms && iters < 1000000);
  return elapsed / static_cast<double>(iters);
}

// Measured rows for every size; enumeration above the guard gets a
// placeholder filled afterwards from a K! cost model anchored at the largest
// measured size (measuring an off-list anchor when the list has none).
std::vector<TimingRow> timing_sweep(const SetSufficientPolicy& policy, int context,
                                    const std::vector<int>& sizes, int enumeration_guard, long mc_samples,
                                    double min_ms, std::uint64_t seed) {
  std::vector<TimingRow> rows;
  std::vector<std::size_t> pending;  // rows awaiting extrapolation
  int anchor_k = -1;
  double anchor_ms = 0.0;
  const bool has_scores = policy.fixed_scores(context).has_value();
  for (const int k : sizes) {
    CounterRng rng(seed, static_cast<std::uint64_t>(k));
    const std::vector<int> slate = draw_distinct_slate(rng, policy.catalog_size(), k);

    TimingRow dp;
    dp.slate_size = k;
    dp.method = "forward_dp";
    dp.queries = (1L << k) - 1;
    dp.value = forward_dp(policy, context, slate).propensity;
    dp.wall_ms_per_call = time_per_call_ms([&] { forward_dp(policy, context, slate); }, min_ms);
    rows.push_back(dp);

    TimingRow en;
    en.slate_size = k;
    en.method = "enumeration";
    en.queries = enumeration_query_count(k);
    if (k <= enumeration_guard) {
      en.value = enumerate_orderings(policy, context, slate, enumeration_guard);
      en.wall_ms_per_call =
          time_per_call_ms([&] { enumerate_orderings(policy, context, slate, enumeration_guard); }, min_ms);
      if (k > anchor_k) {
        anchor_k = k;
        anchor_ms = en.wall_ms_per_call;
      }
    } else {
      en.value = kNan;
      en.extrapolated = true;
      pending.push_back(rows.size());
    }
    rows.push_back(en);

    if (mc_samples > 0 && has_scores) {
      TimingRow mc;
      mc.slate_size = k;
      mc.method = "gumbel_mc";
      mc.queries = 0;
      const std::uint64_t mc_seed = derive_seed(seed, 7000 + static_cast<std::uint64_t>(k));
      mc.value = gumbel_top_k_mc(policy, context, slate, mc_samples, mc_seed).estimate;
      mc.wall_ms_per_call =
          time_per_call_ms([&] { gumbel_top_k_mc(policy, context, slate, mc_samples, mc_seed); }, min_ms);
      rows.push_back(mc);
    }
  }
  if (!pending.empty()) {
    if (anchor_k < 0) {
      anchor_k = std::min(enumeration_guard, policy.catalog_size());
      CounterRng rng(seed, static_cast<std::uint64_t>(anchor_k));
      const std::vector<int> slate = draw_distinct_slate(rng, policy.catalog_size(), anchor_k);
      anchor_ms =
          time_per_call_ms([&] { enumerate_orderings(policy, context, slate, enumeration_guard); }, min_ms);
    }
    const double per_fact = anchor_ms / factorial_d(anchor_k);
    for (const std::size_t i : pending) {
      rows[i].wall_ms_per_call = per_fact * factorial_d(rows[i].slate_size);
    }
  }
  return rows;
}

ResultTable timing_table_of(const std::vector<TimingRow>& timings) {
  ResultTable t;
  t.name = "propensity_timing";
  t.columns = {"slate_size", "method", "wall_ms_per_call", "queries", "extrapolated", "value"};
  for (const TimingRow& r : timings) {
    t.rows.push_back({int_cell(r.slate_size), r.method, real_cell(r.wall_ms_per_call), int_cell(r.queries),
                      r.extrapolated ? "true" : "false", real_cell(r.value)});
  }
  return t;
}

bool method_needs_model(SlateMethod m) {
  return m == SlateMethod::tree_dr || m == SlateMethod::ff_dr || m == SlateMethod::dm ||
         m == SlateMethod::dp_opcb_dr;
}

SlateBenchReport run_slate_benchmark_impl(const SlateBenchConfig& config, bool parallel) {
  if (config.n_trials < 1) throw ValidationError("slate benchmark: n_trials must be at least 1");
  if (config.n_logged < 1) throw ValidationError("slate benchmark: n_logged must be at least 1");
  if (config.estimators.empty()) throw ValidationError("slate benchmark: no estimators configured");
  if (config.slate_sizes.empty()) throw ValidationError("slate benchmark: no slate sizes configured");
  if (config.reward_model != "empirical" && config.reward_model != "oracle") {
    throw ValidationError("slate benchmark: reward_model must be empirical or oracle");
  }

  const SlateWorld world = SlateWorld::seeded(config.num_contexts, config.catalog_size, config.interaction,
                                              config.noise_std, config.world_seed);
  const FixedScorePlPolicy target = FixedScorePlPolicy::seeded(
      config.num_contexts, config.catalog_size, config.score_scale, config.target_temperature,
      config.policy_seed);
  const FixedScorePlPolicy behavior = FixedScorePlPolicy::seeded(
      config.num_contexts, config.catalog_size, config.score_scale, config.behavior_temperature,
      config.policy_seed);

  std::vector<SlateMethod> methods;
  for (const std::string& name : config.estimators) methods.push_back(parse_slate_method(name));
  const bool needs_model =
      std::any_of(methods.begin(), methods.end(), [](SlateMethod m) { return method_needs_model(m); });
  const OracleRewardModel oracle(
      [&world](int context, std::uint64_t mask) { return world.mean_reward(context, mask); });

  SlateBenchReport report;
  report.n_trials = config.n_trials;
  for (const int k : config.slate_sizes) {
    if (k < 1 || k > config.catalog_size) throw ValidationError("slate benchmark: slate size out of range");
    const std::uint64_t k_seed = derive_seed(config.seed, static_cast<std::uint64_t>(k));
    SlateBenchKReport kreport;
    kreport.slate_size = k;
    kreport.exact_value = exact_slate_value(world, target, k, config.lattice_budget);

    const long n_trials = config.n_trials;
    const std::size_t n_est = methods.size();
    TrialSlots slots(n_est, static_cast<std::size_t>(n_trials));

#pragma omp parallel for schedule(dynamic) if (parallel)
    for (long t = 0; t < n_trials; ++t) {
      const std::uint64_t trial_seed = derive_seed(k_seed, static_cast<std::uint64_t>(t));
      const std::size_t ti = static_cast<std::size_t>(t);
      LoggedSlateDataset data;
      std::optional<EmpiricalMeanRewardModel> fitted;
      std::string setup_error;
      try {
        data = sample_slate_dataset_impl(world, behavior, "behavior", config.n_logged, k, trial_seed,
                                         parallel);
        if (needs_model && config.reward_model == "empirical") {
          const LoggedSlateDataset aux =
              sample_slate_dataset_impl(world, behavior, "behavior", config.n_logged, k,
                                        derive_seed(trial_seed, 0x5EED), parallel);
          fitted.emplace(std::span<const SlateRecord>(aux.records));
        }
      } catch (const std::exception& e) {
        setup_error = e.what();
      }
      for (std::size_t j = 0; j < n_est; ++j) {
        if (!setup_error.empty()) {
          slots.err[j][ti] = setup_error;
          continue;
        }
        try {
          SlateEstimateOptions opts;
          opts.lattice_budget = config.lattice_budget;
          if (method_needs_model(methods[j])) {
            opts.reward_model = config.reward_model == "oracle"
                                    ? static_cast<const SlateRewardModel*>(&oracle)
                                    : static_cast<const SlateRewardModel*>(&*fitted);
          }
          opts.class_fn = [](std::uint64_t mask) { return static_cast<std::int64_t>(mask); };
          const SlateEstimatorReport rep = estimate_slate_value(data, methods[j], target, behavior, opts);
          slots.value[j][ti] = rep.estimate;
          slots.ok[j][ti] = 1;
        } catch (const std::exception& e) {
          slots.err[j][ti] = e.what();
        }
      }
    }
    for (std::size_t j = 0; j < n_est; ++j) {
      kreport.rows.push_back(
          reduce_row(config.estimators[j], slots.value[j], slots.ok[j], slots.err[j], kreport.exact_value));
    }
    report.per_k.push_back(std::move(kreport));
  }

  report.timings = timing_sweep(behavior, 0, config.slate_sizes, config.enumeration_guard,
                                config.mc_samples, config.min_timing_ms, derive_seed(config.seed, 0x71));
  return report;
}

}  // namespace

SlateBenchReport run_slate_benchmark(const SlateBenchConfig& config) {
  return run_slate_benchmark_impl(config, true);
}

SlateBenchReport run_slate_benchmark_serial(const SlateBenchConfig& config) {
  return run_slate_benchmark_impl(config, false);
}

std::vector<ResultTable> SlateBenchReport::tables() const {
  ResultTable truth;
  truth.name = "slate_ground_truth";
  truth.columns = {"slate_size", "exact_value", "n_trials"};
  ResultTable ope;
  ope.name = "slate_ope";
  ope.columns = {"slate_size", "estimator", "bias", "std", "rmse", "n_trials_ok", "status"};
  for (const SlateBenchKReport& kr : per_k) {
    truth.rows.push_back({int_cell(kr.slate_size), real_cell(kr.exact_value), int_cell(n_trials)});
    append_bench_rows(ope, kr.rows, int_cell(kr.slate_size));
  }
  return {truth, ope};
}

std::vector<ResultTable> SlateBenchReport::timing_tables() const { return {timing_table_of(timings)}; }

ScalingReport run_scaling_benchmark(const ScalingConfig& config) {
  if (config.slate_sizes.empty()) throw ValidationError("scaling benchmark: no slate sizes configured");
  std::unique_ptr<SetSufficientPolicy> policy;
  if (config.policy == "fixed_score") {
    policy = std::make_unique<FixedScorePlPolicy>(FixedScorePlPolicy::seeded(
        1, config.catalog_size, config.score_scale, config.temperature, config.policy_seed));
  } else if (config.policy == "context_dependent") {
    policy = std::make_unique<ContextDependentPlPolicy>(
        ContextDependentPlPolicy::seeded(1, config.catalog_size, config.score_scale,
                                         config.interaction_scale, config.temperature, config.policy_seed));
  } else {
    throw ValidationError("scaling benchmark: policy must be fixed_score or context_dependent");
  }

  ScalingReport report;
  const bool has_scores = policy->fixed_scores(0).has_value();
  for (const int k : config.slate_sizes) {
    if (k < 1 || k > config.catalog_size) {
      throw ValidationError("scaling benchmark: slate size out of range");
    }
    CounterRng rng(config.seed, static_cast<std::uint64_t>(k));
    const std::vector<int> slate = draw_distinct_slate(rng, config.catalog_size, k);

    ScalingAuditRow row;
    row.slate_size = k;
    const ForwardDpResult dp = forward_dp(*policy, 0, slate);
    row.propensity_forward_dp = dp.propensity;
    row.escalated_to_log = dp.escalated_to_log;
    const auto [observed, bound] = verify_query_bound(*policy, 0, slate);
    row.queries = observed;
    row.query_bound = bound;
    row.propensity_enumeration =
        k <= config.enumeration_guard ? enumerate_orderings(*policy, 0, slate, config.enumeration_guard)
                                      : kNan;
    if (config.mc_samples > 0 && has_scores) {
      const GumbelMcResult mc = gumbel_top_k_mc(*policy, 0, slate, config.mc_samples,
                                                derive_seed(config.seed, 7000 + static_cast<std::uint64_t>(k)));
      row.gumbel_estimate = mc.estimate;
      row.gumbel_std_error = mc.std_error;
    } else {
      row.gumbel_estimate = kNan;
      row.gumbel_std_error = kNan;
    }
    report.audit.push_back(row);
  }

  report.timings = timing_sweep(*policy, 0, config.slate_sizes, config.enumeration_guard, config.mc_samples,
                                config.min_timing_ms, config.seed);
  return report;
}

std::vector<ResultTable> ScalingReport::tables() const {
  ResultTable t;
  t.name = "scaling_audit";
  t.columns = {"slate_size",          "queries",         "query_bound",      "propensity_forward_dp",
               "propensity_enumeration", "gumbel_estimate", "gumbel_std_error", "escalated_to_log"};
  for (const ScalingAuditRow& r : audit) {
    t.rows.push_back({int_cell(r.slate_size), int_cell(r.queries), int_cell(r.query_bound),
                      real_cell(r.propensity_forward_dp), real_cell(r.propensity_enumeration),
                      real_cell(r.gumbel_estimate), real_cell(r.gumbel_std_error),
                      r.escalated_to_log ? "true" : "false"});
  }
  return {t};
}

std::vector<ResultTable> ScalingReport::timing_tables() const { return {timing_table_of(timings)}; }

std::optional<double> spearman_rho(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw ValidationError("spearman: length mismatch");
  const std::size_t n = a.size();
  if (n < 2) return std::nullopt;
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(a[i]) || !std::isfinite(b[i])) throw ValidationError("spearman: non-finite value");
  }
  const auto ranks_of = [n](const std::vector<double>& v) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::sort(idx.begin(), idx.end(), [&v](std::size_t x, std::size_t y) { return v[x] < v[y]; });
    std::vector<double> ranks(n);
    std::size_t i = 0;
    while (i < n) {
      std::size_t j = i;
      while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
      const double avg = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
      for (std::size_t m = i; m <= j; ++m) ranks[idx[m]] = avg;
      i = j + 1;
    }
    return ranks;
  };
  const std::vector<double> ra = ranks_of(a);
  const std::vector<double> rb = ranks_of(b);
  const double mean = 0.5 * static_cast<double>(n + 1);
  double saa = 0.0, sbb = 0.0, sab = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double da = ra[i] - mean;
    const double db = rb[i] - mean;
    saa += da * da;
    sbb += db * db;
    sab += da * db;
  }
  if (saa == 0.0 || sbb == 0.0) return std::nullopt;
  return sab / std::sqrt(saa * sbb);
}

namespace {

SelectionReport run_model_selection_impl(const SelectionConfig& config, bool parallel) {
  if (config.n_trials < 1) throw ValidationError("model selection: n_trials must be at least 1");
  if (config.n_logged < 1) throw ValidationError("model selection: n_logged must be at least 1");
  if (config.estimators.empty()) throw ValidationError("model selection: no estimators configured");
  if (config.candidate_temperatures.empty()) {
    throw ValidationError("model selection: no candidate temperatures configured");
  }
  if (config.reward_model != "empirical" && config.reward_model != "oracle") {
    throw ValidationError("model selection: reward_model must be empirical or oracle");
  }

  const SlateWorld world = SlateWorld::seeded(config.num_contexts, config.catalog_size, config.interaction,
                                              config.noise_std, config.world_seed);
  const FixedScorePlPolicy behavior = FixedScorePlPolicy::seeded(
      config.num_contexts, config.catalog_size, config.score_scale, config.behavior_temperature,
      config.policy_seed);
  std::vector<FixedScorePlPolicy> candidates;
  for (const double temp : config.candidate_temperatures) {
    candidates.push_back(FixedScorePlPolicy::seeded(config.num_contexts, config.catalog_size,
                                                    config.score_scale, temp, config.policy_seed));
  }
  const std::size_t n_cand = candidates.size();

  SelectionReport report;
  report.candidate_temperatures = config.candidate_temperatures;
  report.n_trials = config.n_trials;
  for (const auto& cand : candidates) {
    report.true_values.push_back(
        exact_slate_value(world, cand, config.slate_size, config.lattice_budget));
  }
  report.best_candidate = static_cast<int>(
      std::max_element(report.true_values.begin(), report.true_values.end()) - report.true_values.begin());
  const double v_best = report.true_values[static_cast<std::size_t>(report.best_candidate)];

  std::vector<SlateMethod> methods;
  for (const std::string& name : config.estimators) methods.push_back(parse_slate_method(name));
  const bool needs_model =
      std::any_of(methods.begin(), methods.end(), [](SlateMethod m) { return method_needs_model(m); });
  const OracleRewardModel oracle(
      [&world](int context, std::uint64_t mask) { return world.mean_reward(context, mask); });

  struct TrialOutcome {
    char ok = 0;
    char top1 = 0;
    double regret = 0.0;
    double rho = 0.0;
    char has_rho = 0;
    long skips = 0;
    std::string error;
  };
  const long n_trials = config.n_trials;
  const std::size_t n_est = methods.size();
  std::vector<std::vector<TrialOutcome>> slots(n_est,
                                               std::vector<TrialOutcome>(static_cast<std::size_t>(n_trials)));

#pragma omp parallel for schedule(dynamic) if (parallel)
  for (long t = 0; t < n_trials; ++t) {
    const std::uint64_t trial_seed = derive_seed(config.seed, static_cast<std::uint64_t>(t));
    const std::size_t ti = static_cast<std::size_t>(t);
    LoggedSlateDataset data;
    std::optional<EmpiricalMeanRewardModel> fitted;
    std::string setup_error;
    try {
      data = sample_slate_dataset_impl(world, behavior, "behavior", config.n_logged, config.slate_size,
                                       trial_seed, parallel);
      if (needs_model && config.reward_model == "empirical") {
        const LoggedSlateDataset aux =
            sample_slate_dataset_impl(world, behavior, "behavior", config.n_logged, config.slate_size,
                                      derive_seed(trial_seed, 0x5EED), parallel);
        fitted.emplace(std::span<const SlateRecord>(aux.records));
      }
    } catch (const std::exception& e) {
      setup_error = e.what();
    }
    for (std::size_t j = 0; j < n_est; ++j) {
      TrialOutcome& out = slots[j][ti];
      if (!setup_error.empty()) {
        out.error = setup_error;
        continue;
      }
      try {
        SlateEstimateOptions opts;
        opts.lattice_budget = config.lattice_budget;
        if (method_needs_model(methods[j])) {
          opts.reward_model = config.reward_model == "oracle"
                                  ? static_cast<const SlateRewardModel*>(&oracle)
                                  : static_cast<const SlateRewardModel*>(&*fitted);
        }
        opts.class_fn = [](std::uint64_t mask) { return static_cast<std::int64_t>(mask); };
        std::vector<double> scored_estimates;
        std::vector<double> scored_truths;
        int selected = -1;
        double best_score = 0.0;
        std::string first_violation;
        for (std::size_t c = 0; c < n_cand; ++c) {
          double score = 0.0;
          try {
            score = estimate_slate_value(data, methods[j], candidates[c], behavior, opts).estimate;
          } catch (const SupportViolation& e) {
            ++out.skips;
            if (first_violation.empty()) first_violation = e.what();
            continue;
          }
          scored_estimates.push_back(score);
          scored_truths.push_back(report.true_values[c]);
          if (selected < 0 || score > best_score) {
            selected = static_cast<int>(c);
            best_score = score;
          }
        }
        if (selected < 0) {
          throw ValidationError("every candidate was skipped: " + first_violation);
        }
        out.regret = v_best - report.true_values[static_cast<std::size_t>(selected)];
        out.top1 = out.regret == 0.0 ? 1 : 0;
        if (const auto rho = spearman_rho(scored_estimates, scored_truths)) {
          out.rho = *rho;
          out.has_rho = 1;
        }
        out.ok = 1;
      } catch (const std::exception& e) {
        out.error = e.what();
      }
    }
  }

  for (std::size_t j = 0; j < n_est; ++j) {
    SelectionRow row;
    row.estimator = config.estimators[j];
    double top1 = 0.0, regret = 0.0, rho = 0.0;
    long n_rho = 0;
    for (const TrialOutcome& out : slots[j]) {
      row.n_candidate_skips += out.skips;
      if (!out.ok) {
        if (row.status == "ok") row.status = out.error;
        continue;
      }
      ++row.n_trials_ok;
      top1 += out.top1;
      regret += out.regret;
      if (out.has_rho) {
        rho += out.rho;
        ++n_rho;
      }
    }
    if (row.n_trials_ok > 0) {
      row.top1_accuracy = top1 / static_cast<double>(row.n_trials_ok);
      row.regret_mean = regret / static_cast<double>(row.n_trials_ok);
    } else {
      row.top1_accuracy = kNan;
      row.regret_mean = kNan;
    }
    if (n_rho > 0) row.spearman_mean = rho / static_cast<double>(n_rho);
    report.rows.push_back(std::move(row));
  }
  return report;
}

}  // namespace

SelectionReport run_model_selection(const SelectionConfig& config) {
  return run_model_selection_impl(config, true);
}

SelectionReport run_model_selection_serial(const SelectionConfig& config) {
  return run_model_selection_impl(config, false);
}

std::vector<ResultTable> SelectionReport::tables() const {
  ResultTable cands;
  cands.name = "candidates";
  cands.columns = {"candidate", "temperature", "true_value", "is_best"};
  for (std::size_t c = 0; c < true_values.size(); ++c) {
    cands.rows.push_back({int_cell(static_cast<long long>(c)), real_cell(candidate_temperatures[c]),
                          real_cell(true_values[c]),
                          static_cast<int>(c) == best_candidate ? "1" : "0"});
  }
  ResultTable sel;
  sel.name = "model_selection";
  sel.columns = {"estimator",         "top1_accuracy", "spearman_rho", "regret",
                 "n_candidate_skips", "n_trials_ok",   "status"};
  for (const SelectionRow& r : rows) {
    sel.rows.push_back({r.estimator, real_cell(r.top1_accuracy),
                        r.spearman_mean ? real_cell(*r.spearman_mean) : "absent", real_cell(r.regret_mean),
                        int_cell(r.n_candidate_skips), int_cell(r.n_trials_ok), r.status});
  }
  return {cands, sel};
}

std::vector<ResultTable> run_propensity(const PropensityConfig& config) {
  const LoadedPolicy loaded = parse_slate_policy(config.policy_json, "policy");
  if (config.slate.empty()) throw ValidationError("propensity: empty slate");
  if (config.methods.empty()) throw ValidationError("propensity: no methods configured");
  ResultTable t;
  t.name = "propensity";
  t.columns = {"method", "value", "std_error", "n_samples", "queries"};
  for (const std::string& method : config.methods) {
    if (method == "forward_dp") {
      const ForwardDpResult res = forward_dp(*loaded.policy, config.context, config.slate);
      t.rows.push_back({method, real_cell(res.propensity), real_cell(0.0), int_cell(0),
                        int_cell(res.audit.count)});
    } else if (method == "enumeration") {
      const double val =
          enumerate_orderings(*loaded.policy, config.context, config.slate, config.enumeration_guard);
      t.rows.push_back({method, real_cell(val), real_cell(0.0), int_cell(0),
                        int_cell(enumeration_query_count(static_cast<int>(config.slate.size())))});
    } else if (method == "gumbel_mc") {
      const GumbelMcResult res =
          gumbel_top_k_mc(*loaded.policy, config.context, config.slate, config.mc_samples, config.seed);
      t.rows.push_back({method, real_cell(res.estimate), real_cell(res.std_error),
                        int_cell(res.n_samples), int_cell(0)});
    } else {
      throw ValidationError("propensity: unknown method " + method);
    }
  }
  return {t};
}

namespace {

nlohmann::json parse_config_doc(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
  if (!doc.is_object()) throw ValidationError("config: top level must be an object");
  return doc;
}

void check_keys(const nlohmann::json& doc, std::initializer_list<const char*> allowed,
                const std::string& context) {
  for (auto it = doc.begin(); it != doc.end(); ++it) {
    bool known = false;
    for (const char* key : allowed) {
      if (it.key() == key) {
        known = true;
        break;
      }
    }
    if (!known) throw ValidationError(context + ": unknown key \"" + it.key() + "\"");
  }
}

template <typename T>
void read_field(const nlohmann::json& doc, const char* key, T& out, const std::string& context) {
  if (!doc.contains(key)) return;
  try {
    doc.at(key).get_to(out);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(context + "." + key + ": " + e.what());
  }
}

}  // namespace

MdpBenchConfig parse_mdp_bench_config(const std::string& json_text) {
  const nlohmann::json doc = parse_config_doc(json_text);
  const std::string ctx = "ope-mdp config";
  check_keys(doc,
             {"num_states", "num_actions", "horizon", "reward_noise_std", "discount", "world_seed",
              "target_kind", "target_param", "behavior_kind", "behavior_param", "quotient", "ratio_mode",
              "split_fraction", "estimators", "n_trials", "n_logged", "seed"},
             ctx);
  MdpBenchConfig c;
  read_field(doc, "num_states", c.num_states, ctx);
  read_field(doc, "num_actions", c.num_actions, ctx);
  read_field(doc, "horizon", c.horizon, ctx);
  read_field(doc, "reward_noise_std", c.reward_noise_std, ctx);
  read_field(doc, "discount", c.discount, ctx);
  read_field(doc, "world_seed", c.world_seed, ctx);
  read_field(doc, "target_kind", c.target_kind, ctx);
  read_field(doc, "target_param", c.target_param, ctx);
  read_field(doc, "behavior_kind", c.behavior_kind, ctx);
  read_field(doc, "behavior_param", c.behavior_param, ctx);
  read_field(doc, "quotient", c.quotient, ctx);
  read_field(doc, "ratio_mode", c.ratio_mode, ctx);
  read_field(doc, "split_fraction", c.split_fraction, ctx);
  read_field(doc, "estimators", c.estimators, ctx);
  read_field(doc, "n_trials", c.n_trials, ctx);
  read_field(doc, "n_logged", c.n_logged, ctx);
  read_field(doc, "seed", c.seed, ctx);
  return c;
}

SlateBenchConfig parse_slate_bench_config(const std::string& json_text) {
  const nlohmann::json doc = parse_config_doc(json_text);
  const std::string ctx = "ope-slate config";
  check_keys(doc,
             {"catalog_size", "slate_sizes", "num_contexts", "interaction", "noise_std", "world_seed",
              "score_scale", "target_temperature", "behavior_temperature", "policy_seed", "reward_model",
              "estimators", "n_trials", "n_logged", "lattice_budget", "mc_samples", "enumeration_guard",
              "min_timing_ms", "seed"},
             ctx);
  SlateBenchConfig c;
  read_field(doc, "catalog_size", c.catalog_size, ctx);
  read_field(doc, "slate_sizes", c.slate_sizes, ctx);
  read_field(doc, "num_contexts", c.num_contexts, ctx);
  read_field(doc, "interaction", c.interaction, ctx);
  read_field(doc, "noise_std", c.noise_std, ctx);
  read_field(doc, "world_seed", c.world_seed, ctx);
  read_field(doc, "score_scale", c.score_scale, ctx);
  read_field(doc, "target_temperature", c.target_temperature, ctx);
  read_field(doc, "behavior_temperature", c.behavior_temperature, ctx);
  read_field(doc, "policy_seed", c.policy_seed, ctx);
  read_field(doc, "reward_model", c.reward_model, ctx);
  read_field(doc, "estimators", c.estimators, ctx);
  read_field(doc, "n_trials", c.n_trials, ctx);
  read_field(doc, "n_logged", c.n_logged, ctx);
  read_field(doc, "lattice_budget", c.lattice_budget, ctx);
  read_field(doc, "mc_samples", c.mc_samples, ctx);
  read_field(doc, "enumeration_guard", c.enumeration_guard, ctx);
  read_field(doc, "min_timing_ms", c.min_timing_ms, ctx);
  read_field(doc, "seed", c.seed, ctx);
  return c;
}

ScalingConfig parse_scaling_config(const std::string& json_text) {
  const nlohmann::json doc = parse_config_doc(json_text);
  const std::string ctx = "bench-scaling config";
  check_keys(doc,
             {"catalog_size", "slate_sizes", "policy", "score_scale", "interaction_scale", "temperature",
              "policy_seed", "mc_samples", "enumeration_guard", "min_timing_ms", "seed"},
             ctx);
  ScalingConfig c;
  read_field(doc, "catalog_size", c.catalog_size, ctx);
  read_field(doc, "slate_sizes", c.slate_sizes, ctx);
  read_field(doc, "policy", c.policy, ctx);
  read_field(doc, "score_scale", c.score_scale, ctx);
  read_field(doc, "interaction_scale", c.interaction_scale, ctx);
  read_field(doc, "temperature", c.temperature, ctx);
  read_field(doc, "policy_seed", c.policy_seed, ctx);
  read_field(doc, "mc_samples", c.mc_samples, ctx);
  read_field(doc, "enumeration_guard", c.enumeration_guard, ctx);
  read_field(doc, "min_timing_ms", c.min_timing_ms, ctx);
  read_field(doc, "seed", c.seed, ctx);
  return c;
}

SelectionConfig parse_selection_config(const std::string& json_text) {
  const nlohmann::json doc = parse_config_doc(json_text);
  const std::string ctx = "model-select config";
  check_keys(doc,
             {"catalog_size", "slate_size", "num_contexts", "interaction", "noise_std", "world_seed",
              "score_scale", "policy_seed", "behavior_temperature", "candidate_temperatures",
              "reward_model", "estimators", "n_trials", "n_logged", "lattice_budget", "seed"},
             ctx);
  SelectionConfig c;
  read_field(doc, "catalog_size", c.catalog_size, ctx);
  read_field(doc, "slate_size", c.slate_size, ctx);
  read_field(doc, "num_contexts", c.num_contexts, ctx);
  read_field(doc, "interaction", c.interaction, ctx);
  read_field(doc, "noise_std", c.noise_std, ctx);
  read_field(doc, "world_seed", c.world_seed, ctx);
  read_field(doc, "score_scale", c.score_scale, ctx);
  read_field(doc, "policy_seed", c.policy_seed, ctx);
  read_field(doc, "behavior_temperature", c.behavior_temperature, ctx);
  read_field(doc, "candidate_temperatures", c.candidate_temperatures, ctx);
  read_field(doc, "reward_model", c.reward_model, ctx);
  read_field(doc, "estimators", c.estimators, ctx);
  read_field(doc, "n_trials", c.n_trials, ctx);
  read_field(doc, "n_logged", c.n_logged, ctx);
  read_field(doc, "lattice_budget", c.lattice_budget, ctx);
  read_field(doc, "seed", c.seed, ctx);
  return c;
}

PropensityConfig parse_propensity_config(const std::string& json_text) {
  const nlohmann::json doc = parse_config_doc(json_text);
  const std::string ctx = "propensity config";
  check_keys(doc, {"policy", "context", "slate", "methods", "mc_samples", "enumeration_guard", "seed"},
             ctx);
  if (!doc.contains("policy") || !doc.at("policy").is_object()) {
    throw ValidationError(ctx + ": needs a policy object");
  }
  PropensityConfig c;
  c.policy_json = doc.at("policy").dump();
  read_field(doc, "context", c.context, ctx);
  read_field(doc, "slate", c.slate, ctx);
  read_field(doc, "methods", c.methods, ctx);
  read_field(doc, "mc_samples", c.mc_samples, ctx);
  read_field(doc, "enumeration_guard", c.enumeration_guard, ctx);
  read_field(doc, "seed", c.seed, ctx);
  return c;
}

std::uint64_t config_content_hash(const std::string& json_text) {
  return fnv1a64(parse_config_doc(json_text).dump());
}

namespace {

std::vector<ResultTable> gap_report_tables(const GapReport& report) {
  ResultTable summary;
  summary.name = "gap_summary";
  summary.columns = {"quantity", "value"};
  summary.rows.push_back({"analytic_gap", real_cell(report.analytic_gap)});
  summary.rows.push_back({"empirical_var_traj", real_cell(report.empirical_var_traj)});
  summary.rows.push_back({"empirical_var_ff", real_cell(report.empirical_var_ff)});
  summary.rows.push_back({"empirical_gap", real_cell(report.empirical_gap)});
  summary.rows.push_back({"n_samples", int_cell(report.n_samples)});
  ResultTable terms;
  terms.name = "per_class_terms";
  terms.columns = {"cls", "f_beta", "g", "w", "chi2", "contribution"};
  for (const PerClassTerm& term : report.per_class_terms) {
    terms.rows.push_back({int_cell(term.cls), real_cell(term.f_beta), real_cell(term.g), real_cell(term.w),
                          real_cell(term.chi2), real_cell(term.contribution)});
  }
  return {summary, terms};
}

std::unique_ptr<SetSufficientPolicy> diagnose_policy(const nlohmann::json& doc, const std::string& ctx) {
  check_keys(doc,
             {"kind", "num_contexts", "catalog_size", "score_scale", "interaction_scale", "temperature",
              "seed"},
             ctx);
  std::string kind = "context_dependent";
  int num_contexts = 1;
  int catalog_size = 4;
  double score_scale = 1.0;
  double interaction_scale = 0.3;
  double temperature = 1.0;
  std::uint64_t seed = 0;
  read_field(doc, "kind", kind, ctx);
  read_field(doc, "num_contexts", num_contexts, ctx);
  read_field(doc, "catalog_size", catalog_size, ctx);
  read_field(doc, "score_scale", score_scale, ctx);
  read_field(doc, "interaction_scale", interaction_scale, ctx);
  read_field(doc, "temperature", temperature, ctx);
  read_field(doc, "seed", seed, ctx);
  if (kind == "fixed_score") {
    return std::make_unique<FixedScorePlPolicy>(
        FixedScorePlPolicy::seeded(num_contexts, catalog_size, score_scale, temperature, seed));
  }
  if (kind == "context_dependent") {
    return std::make_unique<ContextDependentPlPolicy>(ContextDependentPlPolicy::seeded(
        num_contexts, catalog_size, score_scale, interaction_scale, temperature, seed));
  }
  throw ValidationError(ctx + ": kind must be fixed_score or context_dependent");
}

DiagnoseResult diagnose_variance_gap(const nlohmann::json& doc,
                                     const std::optional<std::uint64_t>& seed_override) {
  const std::string ctx = "diagnose variance_gap";
  check_keys(doc, {"op", "atoms", "g", "empirical_samples", "max_atoms", "seed"}, ctx);
  if (!doc.contains("atoms") || !doc.at("atoms").is_array()) {
    throw ValidationError(ctx + ": needs an atoms array");
  }
  AtomSystem system;
  for (const auto& ja : doc.at("atoms")) {
    if (!ja.is_object()) throw ValidationError(ctx + ": atoms must be objects");
    check_keys(ja, {"cls", "p_beta", "p_pi"}, ctx + " atom");
    Atom atom;
    read_field(ja, "cls", atom.cls, ctx + " atom");
    read_field(ja, "p_beta", atom.p_beta, ctx + " atom");
    read_field(ja, "p_pi", atom.p_pi, ctx + " atom");
    system.atoms.push_back(atom);
  }
  std::vector<double> g_values;
  read_field(doc, "g", g_values, ctx);
  if (g_values.empty()) throw ValidationError(ctx + ": needs a g array indexed by class id");
  for (const Atom& atom : system.atoms) {
    if (atom.cls < 0 || atom.cls >= static_cast<std::int64_t>(g_values.size())) {
      throw ValidationError(ctx + ": atom class outside the g array");
    }
  }
  long empirical_samples = 0;
  long max_atoms = 1000000;
  std::uint64_t seed = 0;
  read_field(doc, "empirical_samples", empirical_samples, ctx);
  read_field(doc, "max_atoms", max_atoms, ctx);
  read_field(doc, "seed", seed, ctx);
  if (seed_override) seed = *seed_override;
  const auto g = [&g_values](std::int64_t cls) { return g_values[static_cast<std::size_t>(cls)]; };
  const GapReport report = empirical_samples > 0
                               ? empirical_variance_gap(system, g, empirical_samples, seed, max_atoms)
                               : exact_variance_gap(system, g, max_atoms);
  return {gap_report_tables(report), seed};
}

DiagnoseResult diagnose_ordering_gap(const nlohmann::json& doc,
                                     const std::optional<std::uint64_t>& seed_override) {
  const std::string ctx = "diagnose ordering_gap";
  check_keys(doc,
             {"op", "catalog_size", "slate_size", "num_contexts", "interaction", "noise_std", "world_seed",
              "target", "behavior", "seed"},
             ctx);
  int catalog_size = 4;
  int slate_size = 2;
  int num_contexts = 2;
  double interaction = 0.1;
  double noise_std = 0.1;
  std::uint64_t world_seed = 1;
  std::uint64_t seed = 0;
  read_field(doc, "catalog_size", catalog_size, ctx);
  read_field(doc, "slate_size", slate_size, ctx);
  read_field(doc, "num_contexts", num_contexts, ctx);
  read_field(doc, "interaction", interaction, ctx);
  read_field(doc, "noise_std", noise_std, ctx);
  read_field(doc, "world_seed", world_seed, ctx);
  read_field(doc, "seed", seed, ctx);
  if (seed_override) seed = *seed_override;
  if (!doc.contains("target") || !doc.contains("behavior")) {
    throw ValidationError(ctx + ": needs target and behavior policy objects");
  }
  const auto target = diagnose_policy(doc.at("target"), ctx + " target");
  const auto behavior = diagnose_policy(doc.at("behavior"), ctx + " behavior");
  const SlateWorld world = SlateWorld::seeded(num_contexts, catalog_size, interaction, noise_std, world_seed);

  EnumerableSlateWorld eworld;
  eworld.context_probs = world.context_probs;
  eworld.slate_size = slate_size;
  eworld.reward_mean = [&world](int context, std::span<const int> order) {
    std::uint64_t mask = 0;
    for (const int item : order) mask |= std::uint64_t{1} << item;
    return world.mean_reward(context, mask);
  };
  eworld.reward_var = [&world](int, std::span<const int>) { return world.noise_std * world.noise_std; };
  const GapReport report = ordering_nuisance_gap(eworld, *target, *behavior);
  return {gap_report_tables(report), seed};
}

DiagnoseResult diagnose_tvd(const nlohmann::json& doc, const std::optional<std::uint64_t>& seed_override) {
  const std::string ctx = "diagnose tvd";
  check_keys(doc, {"op", "policy", "context_probs", "mode", "sizes", "n_draws", "seed"}, ctx);
  if (!doc.contains("policy") || !doc.at("policy").is_object()) {
    throw ValidationError(ctx + ": needs a policy object");
  }
  const nlohmann::json& jp = doc.at("policy");
  const std::string pctx = ctx + " policy";
  check_keys(jp,
             {"num_contexts", "catalog_size", "base_scale", "interaction_scale", "position_bias",
              "temperature", "seed"},
             pctx);
  int num_contexts = 1;
  int catalog_size = 6;
  double base_scale = 1.0;
  double interaction_scale = 1.0;
  double position_bias = 0.0;
  double temperature = 1.0;
  std::uint64_t policy_seed = 0;
  read_field(jp, "num_contexts", num_contexts, pctx);
  read_field(jp, "catalog_size", catalog_size, pctx);
  read_field(jp, "base_scale", base_scale, pctx);
  read_field(jp, "interaction_scale", interaction_scale, pctx);
  read_field(jp, "position_bias", position_bias, pctx);
  read_field(jp, "temperature", temperature, pctx);
  read_field(jp, "seed", policy_seed, pctx);
  const OrderConditionedPolicy policy = OrderConditionedPolicy::seeded(
      num_contexts, catalog_size, base_scale, interaction_scale, position_bias, temperature, policy_seed);

  std::vector<double> context_probs(static_cast<std::size_t>(num_contexts),
                                    1.0 / static_cast<double>(num_contexts));
  read_field(doc, "context_probs", context_probs, ctx);
  std::string mode_name = "random";
  std::vector<int> sizes = {1, 2, 3};
  long n_draws = 160;
  std::uint64_t seed = 0;
  read_field(doc, "mode", mode_name, ctx);
  read_field(doc, "sizes", sizes, ctx);
  read_field(doc, "n_draws", n_draws, ctx);
  read_field(doc, "seed", seed, ctx);
  if (seed_override) seed = *seed_override;
  const std::vector<TvdRow> rows = set_sufficiency_tvd(policy, context_probs, parse_subset_mode(mode_name),
                                                       sizes, static_cast<int>(n_draws), seed);
  ResultTable t;
  t.name = "set_sufficiency_tvd";
  t.columns = {"size", "median_max_tvd", "p90_max_tvd", "median_mean_tvd"};
  for (const TvdRow& row : rows) {
    t.rows.push_back({int_cell(row.size), real_cell(row.median_max), real_cell(row.p90_max),
                      real_cell(row.median_mean)});
  }
  return {{t}, seed};
}

}  // namespace

DiagnoseResult run_diagnose(const std::string& config_json, std::optional<std::uint64_t> seed_override) {
  const nlohmann::json doc = parse_config_doc(config_json);
  if (!doc.contains("op")) throw ValidationError("diagnose config: needs an op key");
  std::string op;
  read_field(doc, "op", op, "diagnose config");
  if (op == "variance_gap") return diagnose_variance_gap(doc, seed_override);
  if (op == "ordering_gap") return diagnose_ordering_gap(doc, seed_override);
  if (op == "tvd") return diagnose_tvd(doc, seed_override);
  throw ValidationError("diagnose config: unknown op \"" + op + "\"");
}

}  // namespace ffis
