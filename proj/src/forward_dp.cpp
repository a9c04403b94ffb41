#include "ffis/forward_dp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_map>

#include "ffis/rng.hpp"

namespace ffis {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kUnderflowGuard = 1e-300;
constexpr int kMaxSlate = 24;
constexpr int kAuditMaskLimit = 16;
constexpr int kDirectLogThreshold = 16;

std::vector<int> checked_sorted_slate(const SetSufficientPolicy& policy, int context,
                                      std::span<const int> slate, int max_size) {
  if (context < 0 || context >= policy.num_contexts()) {
    throw ValidationError("slate propensity: context out of range");
  }
  if (slate.empty()) throw ValidationError("slate propensity: empty slate");
  if (static_cast<int>(slate.size()) > max_size) {
    throw ValidationError("slate propensity: slate size " + std::to_string(slate.size()) +
                          " exceeds the limit of " + std::to_string(max_size));
  }
  std::vector<int> items(slate.begin(), slate.end());
  std::sort(items.begin(), items.end());
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (items[i] < 0 || items[i] >= policy.catalog_size()) {
      throw ValidationError("slate propensity: item " + std::to_string(items[i]) + " outside the catalog");
    }
    if (i > 0 && items[i] == items[i - 1]) {
      throw ValidationError("slate propensity: duplicate item " + std::to_string(items[i]));
    }
  }
  return items;
}

std::uint64_t catalog_mask(const std::vector<int>& items, std::uint32_t local_mask) {
  std::uint64_t m = 0;
  for (std::size_t j = 0; j < items.size(); ++j) {
    if ((local_mask >> j) & 1u) m |= 1ull << items[j];
  }
  return m;
}

}  // namespace

double log_add_exp(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double mx = std::max(a, b);
  return mx + std::log1p(std::exp(std::min(a, b) - mx));
}

ForwardDpResult forward_dp(const SetSufficientPolicy& policy, int context, std::span<const int> slate,
                           bool log_space) {
  const std::vector<int> items = checked_sorted_slate(policy, context, slate, kMaxSlate);
  const int k = static_cast<int>(items.size());
  const std::uint32_t full = (k == 32) ? ~0u : ((1u << k) - 1u);

  ForwardDpResult result;
  result.table.slate_items = items;

  const bool keep_masks = k <= kAuditMaskLimit;
  const bool cache_probs = k <= kDirectLogThreshold;
  bool run_log = log_space || k > kDirectLogThreshold;

  // Slate-item probabilities per proper subset, kept so an underflow rerun
  // does not query the policy a second time.
  std::vector<double> prob_cache;
  if (cache_probs) prob_cache.assign(static_cast<std::size_t>(full) * k, 0.0);

  std::vector<double> dist(static_cast<std::size_t>(policy.catalog_size()));
  std::vector<double> flow;

  const auto query = [&](std::uint32_t sub) {
    policy.next_item_dist(context, catalog_mask(items, sub), dist);
    result.audit.count += 1;
    if (keep_masks) result.audit.queried.push_back(catalog_mask(items, sub));
    if (cache_probs) {
      for (int j = 0; j < k; ++j) {
        prob_cache[static_cast<std::size_t>(sub) * k + j] = dist[static_cast<std::size_t>(items[j])];
      }
    }
  };

  // Push pass in ascending local-mask order: every proper subset of the
  // slate is final before it is expanded, and is expanded exactly once.
  const auto run_pass = [&](bool log_pass, bool from_cache) -> bool {
    flow.assign(static_cast<std::size_t>(full) + 1, log_pass ? kNegInf : 0.0);
    flow[0] = log_pass ? 0.0 : 1.0;
    bool underflow = false;
    for (std::uint32_t sub = 0; sub < full; ++sub) {
      if ((log_pass && flow[sub] == kNegInf) || (!log_pass && flow[sub] == 0.0)) {
        if (!from_cache) query(sub);  // still counts toward the audit contract
        continue;
      }
      if (!from_cache) query(sub);
      for (int j = 0; j < k; ++j) {
        if ((sub >> j) & 1u) continue;
        const double p = cache_probs ? prob_cache[static_cast<std::size_t>(sub) * k + j]
                                     : dist[static_cast<std::size_t>(items[j])];
        const std::uint32_t nxt = sub | (1u << j);
        if (log_pass) {
          if (p > 0.0) flow[nxt] = log_add_exp(flow[nxt], flow[sub] + std::log(p));
        } else {
          flow[nxt] += flow[sub] * p;
        }
      }
      if (!log_pass) {
        const double f = flow[sub];
        if (f != 0.0 && f < kUnderflowGuard) underflow = true;
      }
    }
    if (!log_pass) {
      for (double f : flow) {
        if (f != 0.0 && f < kUnderflowGuard) underflow = true;
      }
    }
    return underflow;
  };

  if (!run_log) {
    const bool underflow = run_pass(false, false);
    if (underflow) {
      result.escalated_to_log = true;
      run_log = true;
      if (cache_probs) {
        run_pass(true, true);
      } else {
        result.audit.count = 0;
        result.audit.queried.clear();
        run_pass(true, false);
      }
    }
  } else {
    run_pass(true, false);
  }

  result.table.flow = std::move(flow);
  result.table.log_space = run_log;
  result.propensity = run_log ? std::exp(result.table.flow.back()) : result.table.flow.back();
  if (keep_masks) std::sort(result.audit.queried.begin(), result.audit.queried.end());
  return result;
}

namespace {

template <typename Policy>
double enumerate_impl(const Policy& policy, int context, const std::vector<int>& items) {
  const int k = static_cast<int>(items.size());
  std::vector<double> dist(static_cast<std::size_t>(policy.catalog_size()));
  std::vector<int> prefix;
  prefix.reserve(static_cast<std::size_t>(k));
  std::vector<bool> used(items.size(), false);
  double total = 0.0;

  // Depth-first walk over ordered prefixes; one distribution query per
  // internal node. The query buffer is shared across levels, so the branch
  // probabilities are copied out before recursing.
  const auto walk = [&](auto&& self, double prob) -> void {
    if (static_cast<int>(prefix.size()) == k) {
      total += prob;
      return;
    }
    policy.next_item_dist(context, std::span<const int>(prefix), dist);
    std::vector<double> branch(items.size());
    for (std::size_t j = 0; j < items.size(); ++j) {
      branch[j] = dist[static_cast<std::size_t>(items[j])];
    }
    for (std::size_t j = 0; j < items.size(); ++j) {
      if (used[j] || branch[j] == 0.0) continue;
      used[j] = true;
      prefix.push_back(items[j]);
      self(self, prob * branch[j]);
      prefix.pop_back();
      used[j] = false;
    }
  };
  walk(walk, 1.0);
  return total;
}

}  // namespace

double enumerate_orderings(const OrderConditionedPolicy& policy, int context, std::span<const int> slate,
                           int max_size) {
  if (context < 0 || context >= policy.num_contexts()) {
    throw ValidationError("ordering enumeration: context out of range");
  }
  if (slate.empty()) throw ValidationError("ordering enumeration: empty slate");
  if (static_cast<int>(slate.size()) > max_size) {
    throw BudgetExceeded("ordering enumeration over " + std::to_string(slate.size()) +
                         "! orderings refused; the guard is " + std::to_string(max_size));
  }
  std::vector<int> items(slate.begin(), slate.end());
  std::sort(items.begin(), items.end());
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (items[i] < 0 || items[i] >= policy.catalog_size()) {
      throw ValidationError("ordering enumeration: item outside the catalog");
    }
    if (i > 0 && items[i] == items[i - 1]) {
      throw ValidationError("ordering enumeration: duplicate item");
    }
  }
  return enumerate_impl(policy, context, items);
}

double enumerate_orderings(const SetSufficientPolicy& policy, int context, std::span<const int> slate,
                           int max_size) {
  if (static_cast<int>(slate.size()) > max_size) {
    throw BudgetExceeded("ordering enumeration over " + std::to_string(slate.size()) +
                         "! orderings refused; the guard is " + std::to_string(max_size));
  }
  const std::vector<int> items = checked_sorted_slate(policy, context, slate, kMaxSlate);
  const AsOrderConditioned view(policy);
  return enumerate_impl(view, context, items);
}

namespace {

long gumbel_hits(std::span<const double> logits, std::uint64_t slate_mask, int k, long begin, long end,
                 std::uint64_t seed) {
  const int m = static_cast<int>(logits.size());
  long hits = 0;
  std::vector<double> keys(static_cast<std::size_t>(m));
  for (long i = begin; i < end; ++i) {
    CounterRng rng(seed, static_cast<std::uint64_t>(i));
    for (int a = 0; a < m; ++a) {
      const double u = 1.0 - rng.uniform();  // (0, 1]
      keys[static_cast<std::size_t>(a)] = logits[static_cast<std::size_t>(a)] - std::log(-std::log(u));
    }
    std::uint64_t picked = 0;
    for (int pick = 0; pick < k; ++pick) {
      int best = -1;
      double best_key = kNegInf;
      for (int a = 0; a < m; ++a) {
        if ((picked >> a) & 1ull) continue;
        if (keys[static_cast<std::size_t>(a)] > best_key) {
          best_key = keys[static_cast<std::size_t>(a)];
          best = a;
        }
      }
      picked |= 1ull << best;
    }
    if (picked == slate_mask) ++hits;
  }
  return hits;
}

GumbelMcResult gumbel_finish(long hits, long n) {
  GumbelMcResult r;
  r.n_samples = n;
  r.estimate = static_cast<double>(hits) / static_cast<double>(n);
  r.std_error = std::sqrt(r.estimate * (1.0 - r.estimate) / static_cast<double>(n));
  return r;
}

std::uint64_t gumbel_checked_mask(std::span<const double> logits, std::span<const int> slate, long n) {
  if (n < 1) throw ValidationError("gumbel sampler: need at least one sample");
  if (logits.empty() || logits.size() > 64) {
    throw ValidationError("gumbel sampler: catalog must have 1..64 items");
  }
  if (slate.empty() || slate.size() > logits.size()) {
    throw ValidationError("gumbel sampler: bad slate size");
  }
  std::uint64_t mask = 0;
  for (int item : slate) {
    if (item < 0 || static_cast<std::size_t>(item) >= logits.size()) {
      throw ValidationError("gumbel sampler: item outside the catalog");
    }
    if ((mask >> item) & 1ull) throw ValidationError("gumbel sampler: duplicate item");
    mask |= 1ull << item;
  }
  return mask;
}

}  // namespace

GumbelMcResult gumbel_top_k_mc_serial(std::span<const double> logits, std::span<const int> slate,
                                      long n_samples, std::uint64_t seed) {
  const std::uint64_t mask = gumbel_checked_mask(logits, slate, n_samples);
  const long hits =
      gumbel_hits(logits, mask, static_cast<int>(slate.size()), 0, n_samples, seed);
  return gumbel_finish(hits, n_samples);
}

GumbelMcResult gumbel_top_k_mc(std::span<const double> logits, std::span<const int> slate, long n_samples,
                               std::uint64_t seed) {
  const std::uint64_t mask = gumbel_checked_mask(logits, slate, n_samples);
  const int k = static_cast<int>(slate.size());
  long hits = 0;
#pragma omp parallel for schedule(static) reduction(+ : hits)
  for (long i = 0; i < n_samples; ++i) {
    hits += gumbel_hits(logits, mask, k, i, i + 1, seed);
  }
  return gumbel_finish(hits, n_samples);
}

GumbelMcResult gumbel_top_k_mc(const SetSufficientPolicy& policy, int context, std::span<const int> slate,
                               long n_samples, std::uint64_t seed) {
  const auto logits = policy.fixed_scores(context);
  if (!logits.has_value()) {
    throw ValidationError("gumbel sampler: the policy is not fixed-score; its next-item distribution "
                          "depends on the picked set");
  }
  return gumbel_top_k_mc(*logits, slate, n_samples, seed);
}

std::uint64_t binomial_or_cap(int n, int k, std::uint64_t cap) {
  if (k < 0 || k > n) return 0;
  k = std::min(k, n - k);
  // n <= 64 keeps every intermediate inside uint64; bail once past the cap.
  std::uint64_t result = 1;
  for (int i = 1; i <= k; ++i) {
    result = result * static_cast<std::uint64_t>(n - k + i) / static_cast<std::uint64_t>(i);
    if (result > cap) return cap + 1;
  }
  return result;
}

double LatticeFlows::flow(std::uint64_t mask) const {
  const int k = static_cast<int>(__builtin_popcountll(mask));
  if (k >= static_cast<int>(levels.size())) return 0.0;
  const auto& level = levels[static_cast<std::size_t>(k)];
  auto it = std::lower_bound(level.begin(), level.end(), mask,
                             [](const std::pair<std::uint64_t, double>& e, std::uint64_t m) {
                               return e.first < m;
                             });
  if (it == level.end() || it->first != mask) return 0.0;
  return it->second;
}

LatticeFlows full_lattice_flows(const SetSufficientPolicy& policy, int context, int slate_size,
                                long budget) {
  if (context < 0 || context >= policy.num_contexts()) {
    throw ValidationError("lattice flows: context out of range");
  }
  const int m = policy.catalog_size();
  if (slate_size < 1 || slate_size > m) throw ValidationError("lattice flows: bad slate size");
  if (budget < 1) throw ValidationError("lattice flows: budget must be positive");
  const std::uint64_t need = binomial_or_cap(m, slate_size, static_cast<std::uint64_t>(budget));
  if (need > static_cast<std::uint64_t>(budget)) {
    throw BudgetExceeded("lattice flows: C(" + std::to_string(m) + ", " + std::to_string(slate_size) +
                         ") subsets exceed the budget of " + std::to_string(budget));
  }

  LatticeFlows out;
  out.catalog_size = m;
  out.slate_size = slate_size;
  out.levels.resize(static_cast<std::size_t>(slate_size) + 1);
  out.levels[0] = {{0ull, 1.0}};
  std::vector<double> dist(static_cast<std::size_t>(m));

  for (int k = 0; k < slate_size; ++k) {
    // Expansion in ascending mask order with ascending items keeps the
    // accumulation order, and therefore every floating-point sum, fixed.
    std::unordered_map<std::uint64_t, double> next;
    next.reserve(out.levels[static_cast<std::size_t>(k)].size() * static_cast<std::size_t>(m));
    for (const auto& [mask, f] : out.levels[static_cast<std::size_t>(k)]) {
      policy.next_item_dist(context, mask, dist);
      for (int a = 0; a < m; ++a) {
        if ((mask >> a) & 1ull) continue;
        const double p = dist[static_cast<std::size_t>(a)];
        if (p == 0.0 && f == 0.0) continue;
        next[mask | (1ull << a)] += f * p;
      }
    }
    auto& level = out.levels[static_cast<std::size_t>(k) + 1];
    level.assign(next.begin(), next.end());
    std::sort(level.begin(), level.end());
  }

  out.inclusion_marginals.assign(static_cast<std::size_t>(m), 0.0);
  for (const auto& [mask, f] : out.levels[static_cast<std::size_t>(slate_size)]) {
    for (int a = 0; a < m; ++a) {
      if ((mask >> a) & 1ull) out.inclusion_marginals[static_cast<std::size_t>(a)] += f;
    }
  }
  return out;
}

std::pair<long, long> verify_query_bound(const SetSufficientPolicy& policy, int context,
                                         std::span<const int> slate) {
  const ForwardDpResult r = forward_dp(policy, context, slate);
  const long bound = (1l << slate.size()) - 1;
  return {r.audit.count, bound};
}

}  // namespace ffis
