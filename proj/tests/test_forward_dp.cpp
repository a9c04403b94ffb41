#include <doctest.h>

#include <cmath>
#include <numeric>
#include <vector>

#include "ffis/forward_dp.hpp"
#include "ffis/rng.hpp"
#include "ffis/slate_policy.hpp"

using namespace ffis;

namespace {

FixedScorePlPolicy uniform_slate_policy(int contexts, int catalog) {
  return FixedScorePlPolicy(
      std::vector<std::vector<double>>(static_cast<std::size_t>(contexts),
                                       std::vector<double>(static_cast<std::size_t>(catalog), 0.0)),
      1.0);
}

}  // namespace

TEST_CASE("single-item slate reduces to one next-item query") {
  const auto pol = ContextDependentPlPolicy::seeded(2, 5, 1.0, 0.7, 1.0, 3);
  std::vector<double> dist(5);
  pol.next_item_dist(1, 0, dist);
  const std::vector<int> slate = {3};
  const ForwardDpResult r = forward_dp(pol, 1, slate);
  CHECK(r.propensity == dist[3]);
  CHECK(r.audit.count == 1);
  REQUIRE(r.audit.queried.size() == 1);
  CHECK(r.audit.queried[0] == 0);
}

TEST_CASE("uniform scores make every slate equally likely") {
  const auto pol = uniform_slate_policy(1, 3);
  for (std::vector<int> slate : {std::vector<int>{0, 1}, {0, 2}, {1, 2}}) {
    const ForwardDpResult r = forward_dp(pol, 0, slate);
    CHECK(r.propensity == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
  }
}

TEST_CASE("hand-computed two-item propensity") {
  // Scores exp-encoded so the first pick is proportional to (0.5, 0.3, 0.2).
  const std::vector<std::vector<double>> scores = {
      {std::log(0.5), std::log(0.3), std::log(0.2)}};
  const FixedScorePlPolicy pol(scores, 1.0);
  const std::vector<int> slate = {0, 1};
  const ForwardDpResult r = forward_dp(pol, 0, slate);
  // 0.5 * 0.3/(0.3+0.2) + 0.3 * 0.5/(0.5+0.2)
  const double expect = 0.5 * 0.6 + 0.3 * (0.5 / 0.7);
  CHECK(r.propensity == doctest::Approx(expect).epsilon(1e-13));
  CHECK(r.propensity == doctest::Approx(0.5142857142857143).epsilon(1e-12));

  // The slate as given in a different order must not matter.
  const std::vector<int> swapped = {1, 0};
  CHECK(forward_dp(pol, 0, swapped).propensity == r.propensity);
}

TEST_CASE("forward dp matches factorial enumeration on context-dependent policies") {
  int checked = 0;
  for (int k = 2; k <= 6; ++k) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const int m = k + 3;
      const auto pol = ContextDependentPlPolicy::seeded(2, m, 1.0, 0.8, 0.9,
                                                        derive_seed(1000 + k, seed));
      CounterRng pick(seed, 99);
      std::vector<int> slate;
      while (static_cast<int>(slate.size()) < k) {
        std::vector<double> w(static_cast<std::size_t>(m), 1.0);
        for (int it : slate) w[static_cast<std::size_t>(it)] = 0.0;
        slate.push_back(pick.categorical(w));
      }
      const int ctx = static_cast<int>(seed % 2);
      const double dp = forward_dp(pol, ctx, slate).propensity;
      const double brute = enumerate_orderings(pol, ctx, slate);
      CHECK(std::abs(dp - brute) <= 1e-10);
      ++checked;
    }
  }
  CHECK(checked == 50);
}

TEST_CASE("every proper subset is queried exactly once") {
  for (int k = 1; k <= 12; ++k) {
    const auto pol = ContextDependentPlPolicy::seeded(1, k + 2, 0.5, 0.5, 1.0, 77 + k);
    std::vector<int> slate(static_cast<std::size_t>(k));
    std::iota(slate.begin(), slate.end(), 1);  // offset from 0 to exercise mask mapping
    const auto [observed, bound] = verify_query_bound(pol, 0, slate);
    CHECK(observed == bound);
    CHECK(bound == (1l << k) - 1);
  }
  // The audited mask set is deduplicated; its size must equal the count.
  const auto pol = ContextDependentPlPolicy::seeded(1, 8, 0.5, 0.5, 1.0, 5);
  const std::vector<int> slate = {0, 2, 4, 6};
  const ForwardDpResult r = forward_dp(pol, 0, slate);
  std::vector<std::uint64_t> uniq = r.audit.queried;
  uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
  CHECK(static_cast<long>(uniq.size()) == r.audit.count);
}

TEST_CASE("log-space agrees with linear space") {
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    const auto pol = ContextDependentPlPolicy::seeded(1, 10, 1.2, 0.6, 0.8, 2000 + seed);
    const std::vector<int> slate = {0, 2, 3, 5, 7, 9};
    const ForwardDpResult lin = forward_dp(pol, 0, slate, false);
    const ForwardDpResult lg = forward_dp(pol, 0, slate, true);
    REQUIRE(lg.table.log_space);
    REQUIRE(!lin.table.log_space);
    if (lin.propensity >= 1e-12) {
      CHECK(std::abs(lg.propensity - lin.propensity) <= 1e-9 * lin.propensity);
    }
    // Per-subset flows agree too.
    for (std::size_t i = 0; i < lin.table.flow.size(); ++i) {
      const double a = lin.table.flow[i];
      const double b = lg.table.flow[i] == -std::numeric_limits<double>::infinity()
                           ? 0.0
                           : std::exp(lg.table.flow[i]);
      if (a >= 1e-12) CHECK(std::abs(a - b) <= 1e-9 * a);
    }
  }
}

TEST_CASE("underflow escalates to log space without repeat queries") {
  // A score gap of 720 drives one first-pick probability below 1e-300.
  const std::vector<std::vector<double>> scores = {{-720.0, 0.0, 0.0}};
  const FixedScorePlPolicy pol(scores, 1.0);
  const std::vector<int> slate = {0, 1};
  const ForwardDpResult r = forward_dp(pol, 0, slate);
  CHECK(r.escalated_to_log);
  CHECK(r.table.log_space);
  CHECK(r.propensity >= 0.0);
  CHECK(r.audit.count == 3);  // cache served the rerun
  CHECK(std::isfinite(r.propensity));
}

TEST_CASE("zero-probability items yield zero flows without error") {
  // Temperature-1 softmax never emits exact zeros, so build zeros through
  // the gumbel-unfriendly route: -inf is rejected, so use a policy whose
  // scores push mass numerically to zero at long distance.
  const std::vector<std::vector<double>> scores = {{0.0, -800.0, 0.0}};
  const FixedScorePlPolicy pol(scores, 1.0);
  const std::vector<int> slate = {0, 1};
  const ForwardDpResult r = forward_dp(pol, 0, slate);
  CHECK(r.propensity >= 0.0);  // legal, tiny or zero
}

TEST_CASE("slate validation") {
  const auto pol = uniform_slate_policy(1, 6);
  std::vector<int> dup = {1, 1};
  CHECK_THROWS_AS((void)forward_dp(pol, 0, dup), ValidationError);
  std::vector<int> outside = {1, 7};
  CHECK_THROWS_AS((void)forward_dp(pol, 0, outside), ValidationError);
  std::vector<int> empty;
  CHECK_THROWS_AS((void)forward_dp(pol, 0, empty), ValidationError);
  CHECK_THROWS_AS((void)forward_dp(pol, 3, std::vector<int>{0}), ValidationError);

  const auto big = uniform_slate_policy(1, 30);
  std::vector<int> huge(25);
  std::iota(huge.begin(), huge.end(), 0);
  CHECK_THROWS_AS((void)forward_dp(big, 0, huge), ValidationError);

  std::vector<int> eleven(11);
  std::iota(eleven.begin(), eleven.end(), 0);
  CHECK_THROWS_AS((void)enumerate_orderings(big, 0, eleven), BudgetExceeded);
}

TEST_CASE("gumbel sampler: exhaustive slate and agreement with the exact propensity") {
  {
    const std::vector<double> logits = {0.4, -0.3};
    const std::vector<int> slate = {0, 1};
    const GumbelMcResult r = gumbel_top_k_mc(logits, slate, 1000, 1);
    CHECK(r.estimate == 1.0);
    CHECK(r.std_error == 0.0);
  }
  {
    const auto pol = FixedScorePlPolicy::seeded(1, 8, 1.0, 0.7, 42);
    const std::vector<int> slate = {1, 4, 6};
    const double exact = forward_dp(pol, 0, slate).propensity;
    const auto logits = pol.fixed_scores(0);
    REQUIRE(logits.has_value());
    const GumbelMcResult mc = gumbel_top_k_mc(*logits, slate, 200000, 7);
    CHECK(std::abs(mc.estimate - exact) <= 3.0 * mc.std_error + 1e-9);

    const GumbelMcResult ser = gumbel_top_k_mc_serial(*logits, slate, 50000, 7);
    const GumbelMcResult par = gumbel_top_k_mc(*logits, slate, 50000, 7);
    CHECK(ser.estimate == par.estimate);  // integer hit counts, bitwise equal
  }
  {
    const auto ctx_pol = ContextDependentPlPolicy::seeded(1, 6, 1.0, 0.5, 1.0, 9);
    const std::vector<int> slate = {0, 1};
    CHECK_THROWS_AS((void)gumbel_top_k_mc(ctx_pol, 0, slate, 100, 1), ValidationError);
  }
}

TEST_CASE("lattice flows: uniform closed forms") {
  {
    const auto pol = uniform_slate_policy(1, 4);
    const LatticeFlows lat = full_lattice_flows(pol, 0, 2);
    REQUIRE(lat.levels[2].size() == 6);
    for (const auto& [mask, f] : lat.levels[2]) CHECK(f == doctest::Approx(1.0 / 6.0).epsilon(1e-14));
    for (double m : lat.inclusion_marginals) CHECK(m == doctest::Approx(0.5).epsilon(1e-14));
  }
  {
    const auto pol = uniform_slate_policy(1, 3);
    const LatticeFlows lat = full_lattice_flows(pol, 0, 3);
    REQUIRE(lat.levels[3].size() == 1);
    CHECK(lat.levels[3][0].second == doctest::Approx(1.0).epsilon(1e-14));
  }
}

TEST_CASE("lattice flows: normalization, marginals, and agreement with per-slate dp") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto pol = ContextDependentPlPolicy::seeded(2, 8, 1.0, 0.7, 0.9, 300 + seed);
    const int ctx = static_cast<int>(seed % 2);
    const LatticeFlows lat = full_lattice_flows(pol, ctx, 3);

    double total = 0.0;
    for (const auto& [mask, f] : lat.levels[3]) total += f;
    CHECK(std::abs(total - 1.0) <= 1e-9);

    double marg_sum = 0.0;
    for (double m : lat.inclusion_marginals) marg_sum += m;
    CHECK(std::abs(marg_sum - 3.0) <= 1e-9);

    for (const auto& [mask, f] : lat.levels[3]) {
      std::vector<int> slate;
      for (int a = 0; a < 8; ++a) {
        if ((mask >> a) & 1ull) slate.push_back(a);
      }
      const double dp = forward_dp(pol, ctx, slate).propensity;
      CHECK(dp == f);  // same arithmetic in the same order
    }
  }
}

TEST_CASE("lattice flows refuse oversized enumerations") {
  const auto pol = uniform_slate_policy(1, 20);
  CHECK_THROWS_AS((void)full_lattice_flows(pol, 0, 10, 1000), BudgetExceeded);
  CHECK(binomial_or_cap(20, 10, 1000000) == 184756);
  CHECK(binomial_or_cap(20, 10, 1000) == 1001);
  CHECK(binomial_or_cap(64, 24, ~0ull >> 1) == 250649105469666120ull);
}

TEST_CASE("log_add_exp handles empty operands") {
  const double ninf = -std::numeric_limits<double>::infinity();
  CHECK(log_add_exp(ninf, ninf) == ninf);
  CHECK(log_add_exp(ninf, 0.0) == 0.0);
  CHECK(log_add_exp(std::log(0.25), std::log(0.75)) == doctest::Approx(0.0).epsilon(1e-14));
}
