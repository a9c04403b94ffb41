#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "ffis/slate_policy.hpp"

namespace ffis {

// Flows over the subset lattice of one slate. Index bit j of the local mask
// corresponds to the j-th slate item in ascending id order; flow values are
// probabilities, or their logs when log_space is set (impossible subsets are
// -inf). flow.front() is the empty set (1 or 0), flow.back() the full slate.
struct SubsetFlowTable {
  std::vector<int> slate_items;  // ascending
  std::vector<double> flow;      // size 2^K
  bool log_space = false;

  int size() const { return static_cast<int>(slate_items.size()); }
};

// Which picked sets were handed to next_item_dist. The mask list is kept for
// slates small enough to audit cheaply; the count is always exact and equals
// the number of distinct queries (each proper subset is queried once).
struct QueryAudit {
  long count = 0;
  std::vector<std::uint64_t> queried;  // catalog masks, ascending; empty when K > 16
};

struct ForwardDpResult {
  double propensity = 0.0;  // always linear scale
  SubsetFlowTable table;
  QueryAudit audit;
  bool escalated_to_log = false;
};

// Unordered slate propensity via the forward recursion over picked subsets:
//   F(empty) = 1,  F(S) = sum_{a in S} F(S \ a) * mu(a | x, S \ a)
// One pass in ascending local-mask order queries each proper subset exactly
// once (2^K - 1 queries). Slates above 16 items, or any pass that produces a
// positive flow below 1e-300, run in log space (sums via logaddexp); zero
// flows stay legal either way. K is capped at 24.
ForwardDpResult forward_dp(const SetSufficientPolicy& policy, int context, std::span<const int> slate,
                           bool log_space = false);

// Reference oracle: sums the ordered propensity over all K! orderings by
// depth-first walk of the prefix tree. Cost grows factorially; guarded.
double enumerate_orderings(const OrderConditionedPolicy& policy, int context, std::span<const int> slate,
                           int max_size = 10);
double enumerate_orderings(const SetSufficientPolicy& policy, int context, std::span<const int> slate,
                           int max_size = 10);

// Monte Carlo propensity for fixed-score policies: perturb the logits with
// Gumbel noise, keep the top K, count exact set matches. Context-dependent
// policies are rejected.
struct GumbelMcResult {
  double estimate = 0.0;
  double std_error = 0.0;
  long n_samples = 0;
};

GumbelMcResult gumbel_top_k_mc(std::span<const double> logits, std::span<const int> slate, long n_samples,
                               std::uint64_t seed);
GumbelMcResult gumbel_top_k_mc_serial(std::span<const double> logits, std::span<const int> slate,
                                      long n_samples, std::uint64_t seed);
GumbelMcResult gumbel_top_k_mc(const SetSufficientPolicy& policy, int context, std::span<const int> slate,
                               long n_samples, std::uint64_t seed);

// Flows over every subset of the catalog up to size K (not just one slate's
// sublattice). Refused when C(M, K) exceeds the budget. Level k holds
// (catalog mask, flow) pairs in ascending mask order; size-K flows sum to 1
// and the per-item inclusion marginals sum to K.
struct LatticeFlows {
  int catalog_size = 0;
  int slate_size = 0;
  std::vector<std::vector<std::pair<std::uint64_t, double>>> levels;  // [k][...]
  std::vector<double> inclusion_marginals;                            // per item

  double flow(std::uint64_t mask) const;  // 0 when absent
};

LatticeFlows full_lattice_flows(const SetSufficientPolicy& policy, int context, int slate_size,
                                long budget = 200000);

// (observed distinct queries, 2^K - 1). Equal by construction; exposed so
// callers can audit the bound.
std::pair<long, long> verify_query_bound(const SetSufficientPolicy& policy, int context,
                                         std::span<const int> slate);

double log_add_exp(double a, double b);
std::uint64_t binomial_or_cap(int n, int k, std::uint64_t cap);

}  // namespace ffis
