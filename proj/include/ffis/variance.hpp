#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ffis/mdp.hpp"
#include "ffis/quotient.hpp"
#include "ffis/slate_policy.hpp"

namespace ffis {

// One enumerated outcome: a complete trajectory (or display ordering) with
// its probability under both policies and its terminal class label.
struct Atom {
  std::int64_t cls = 0;
  double p_beta = 0.0;
  double p_pi = 0.0;
};

struct AtomSystem {
  std::vector<Atom> atoms;
  void validate() const;  // masses nonnegative, both measures sum to 1 within 1e-9
};

struct PerClassTerm {
  std::int64_t cls = 0;
  double f_beta = 0.0;        // class mass under the logger
  double g = 0.0;             // class value
  double w = 0.0;             // class mass ratio
  double chi2 = 0.0;          // divergence between the in-class conditionals
  double contribution = 0.0;  // f_beta * g^2 * w^2 * chi2
};

struct GapReport {
  double analytic_gap = 0.0;
  double empirical_var_traj = 0.0;
  double empirical_var_ff = 0.0;
  double empirical_gap = 0.0;
  long n_samples = 0;
  std::vector<PerClassTerm> per_class_terms;
};

// Sum over the support of q of (p - q)^2 / q. Both vectors must be
// distributions; p mass where q vanishes is a support violation.
double chi_square_divergence(std::span<const double> p, std::span<const double> q);

// Variance removed by replacing the per-atom ratio with the class-mass ratio
// when the integrand depends on the atom only through its class. The report
// sums per-class terms and is cross-checked internally against the directly
// enumerated difference of the two variances.
GapReport exact_variance_gap(const AtomSystem& system, const std::function<double(std::int64_t)>& g,
                             long max_atoms = 1000000);

// Enumerates every full trajectory of the MDP, labeling each with its class
// at the final pre-action layer. Identity quotients are rejected: their class
// ids only exist relative to an interner built from data.
AtomSystem enumerate_terminal_atoms(const TabularMdp& mdp, const StochasticPolicy& target,
                                    const StochasticPolicy& behavior, const QuotientSpec& spec,
                                    long max_atoms = 1000000);

GapReport exact_variance_gap(const TabularMdp& mdp, const StochasticPolicy& target,
                             const StochasticPolicy& behavior, const QuotientSpec& spec,
                             const std::function<double(std::int64_t)>& g, long max_atoms = 1000000);

// Monte Carlo counterpart drawn from the logger measure; fills the empirical
// fields on top of the exact report. Per-sample counter streams make the
// parallel and serial paths bit-identical.
GapReport empirical_variance_gap(const AtomSystem& system, const std::function<double(std::int64_t)>& g,
                                 long n_samples, std::uint64_t seed, long max_atoms = 1000000);
GapReport empirical_variance_gap_serial(const AtomSystem& system,
                                        const std::function<double(std::int64_t)>& g, long n_samples,
                                        std::uint64_t seed, long max_atoms = 1000000);

// Slate world small enough to enumerate every display ordering. Rewards are
// described by their conditional mean and variance given the display order;
// both must be invariant to the order within each slate.
struct EnumerableSlateWorld {
  std::vector<double> context_probs;
  int slate_size = 0;
  std::function<double(int, std::span<const int>)> reward_mean;
  std::function<double(int, std::span<const int>)> reward_var;
};

// Variance removed by replacing the ordered (sequential-ratio) slate weight
// with the unordered flow ratio: sum over contexts and slates of
//   p(x) F_beta(S|x) E[R^2|x,S] W(x,S)^2 chi2(pi(.|x,S) || beta(.|x,S)),
// the divergence taken between the conditional ordering distributions.
// Cross-checked against the directly enumerated variance difference.
// per_class_terms rows are ordered by (context, ascending slate mask) and
// cls is the row index.
GapReport ordering_nuisance_gap(const EnumerableSlateWorld& world, const SetSufficientPolicy& target,
                                const SetSufficientPolicy& behavior);

enum class SubsetMode { random, behavior_induced };
SubsetMode parse_subset_mode(const std::string& name);
std::string subset_mode_name(SubsetMode m);

struct TvdRow {
  int size = 0;
  double median_max = 0.0;
  double p90_max = 0.0;
  double median_mean = 0.0;
};

// How far a policy strays from set-sufficiency: for each drawn (context,
// subset) pair, the next-item distribution is evaluated under every ordering
// of the subset and the max / mean pairwise total-variation distance is
// recorded; rows aggregate the draws per subset size. random mode draws
// subsets uniformly; behavior_induced follows the policy itself, presenting
// each prefix in ascending item order.
std::vector<TvdRow> set_sufficiency_tvd(const OrderedSlatePolicy& policy,
                                        std::span<const double> context_probs, SubsetMode mode,
                                        std::span<const int> sizes, int n_draws, std::uint64_t seed);
std::vector<TvdRow> set_sufficiency_tvd_serial(const OrderedSlatePolicy& policy,
                                               std::span<const double> context_probs, SubsetMode mode,
                                               std::span<const int> sizes, int n_draws,
                                               std::uint64_t seed);

}  // namespace ffis
