// Wall-clock comparison of the OpenMP kernels against their serial reference
// implementations. The parallel variants are bit-identical to the serial
// ones (see test_parallel); this target only measures throughput.

#ifdef _OPENMP
#include <omp.h>
#endif

#include <chrono>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "ffis/bench.hpp"
#include "ffis/forward_dp.hpp"
#include "ffis/mdp.hpp"
#include "ffis/slate_estimators.hpp"
#include "ffis/variance.hpp"

using namespace ffis;

namespace {

double best_of(const std::function<void()>& fn, int repeats) {
  double best = 1e300;
  for (int i = 0; i < repeats; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                          .count();
    if (ms < best) best = ms;
  }
  return best;
}

void report(const std::string& name, const std::function<void()>& serial,
            const std::function<void()>& parallel) {
  const double s = best_of(serial, 3);
  const double p = best_of(parallel, 3);
  std::printf("%-28s serial %9.2f ms   openmp %9.2f ms   speedup %.2fx\n", name.c_str(), s, p, s / p);
}

}  // namespace

int main() {
#ifdef _OPENMP
  std::printf("openmp threads: %d\n", omp_get_max_threads());
#else
  std::printf("built without openmp; both columns run serially\n");
#endif

  const TabularMdp mdp = make_random_mdp(20, 4, 5, 0.1, 1.0, 1);
  const StochasticPolicy policy =
      build_policy(PolicyKind::softmax_of_table, backward_induction_q(mdp), 20, 4, 1.0);
  report(
      "sample_trajectories", [&] { sample_trajectories_serial(mdp, policy, 20000, 7); },
      [&] { sample_trajectories(mdp, policy, 20000, 7); });

  const FixedScorePlPolicy scorer = FixedScorePlPolicy::seeded(4, 20, 1.0, 1.0, 2);
  const std::vector<int> slate = {3, 11, 17, 5};
  report(
      "gumbel_top_k_mc", [&] { gumbel_top_k_mc_serial(*scorer.fixed_scores(0), slate, 2000000, 9); },
      [&] { gumbel_top_k_mc(*scorer.fixed_scores(0), slate, 2000000, 9); });

  const SlateWorld world = SlateWorld::seeded(4, 20, 0.1, 0.1, 3);
  report(
      "sample_slate_dataset", [&] { sample_slate_dataset_serial(world, scorer, "b", 40000, 4, 11); },
      [&] { sample_slate_dataset(world, scorer, "b", 40000, 4, 11); });

  const LoggedSlateDataset logged = sample_slate_dataset(world, scorer, "b", 20000, 4, 13);
  report(
      "slate_propensity_cache", [&] { SlatePropensityCache::build_serial(scorer, logged.records); },
      [&] { SlatePropensityCache::build(scorer, logged.records); });

  AtomSystem system;
  for (int z = 0; z < 4; ++z) {
    for (int i = 0; i < 3; ++i) {
      system.atoms.push_back({z, 1.0 / 12.0, (z + i) % 2 == 0 ? 0.1 : 0.05});
    }
  }
  double mass = 0.0;
  for (const Atom& atom : system.atoms) mass += atom.p_pi;
  for (Atom& atom : system.atoms) atom.p_pi /= mass;
  const auto g = [](std::int64_t z) { return static_cast<double>(z) - 1.5; };
  report(
      "empirical_variance_gap", [&] { empirical_variance_gap_serial(system, g, 2000000, 17); },
      [&] { empirical_variance_gap(system, g, 2000000, 17); });

  const OrderConditionedPolicy ordered = OrderConditionedPolicy::seeded(3, 10, 1.0, 0.8, 0.5, 1.0, 19);
  const std::vector<double> context_probs(3, 1.0 / 3.0);
  const std::vector<int> sizes = {2, 3, 4};
  report(
      "set_sufficiency_tvd",
      [&] { set_sufficiency_tvd_serial(ordered, context_probs, SubsetMode::random, sizes, 400, 23); },
      [&] { set_sufficiency_tvd(ordered, context_probs, SubsetMode::random, sizes, 400, 23); });

  MdpBenchConfig bench;
  bench.num_states = 10;
  bench.num_actions = 3;
  bench.horizon = 4;
  bench.estimators = {"ois", "ff_ois"};
  bench.n_trials = 40;
  bench.n_logged = 1000;
  bench.seed = 29;
  report(
      "run_mdp_benchmark", [&] { run_mdp_benchmark_serial(bench); }, [&] { run_mdp_benchmark(bench); });

  return 0;
}
