#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "ffis/common.hpp"

namespace ffis {

// Finite-horizon tabular MDP. Rewards are Gaussian around reward_mean(s, a)
// with a shared noise scale; episodes always run exactly `horizon` steps.
struct TabularMdp {
  int num_states = 0;
  int num_actions = 0;
  int horizon = 0;
  double discount = 1.0;
  double reward_noise_std = 0.0;
  std::vector<double> transition;    // (s, a, s') row-major, rows sum to 1
  std::vector<double> reward_mean;   // (s, a)
  std::vector<double> initial_dist;  // (s), sums to 1

  double p(int s, int a, int s2) const {
    return transition[(static_cast<std::size_t>(s) * num_actions + a) * num_states + s2];
  }
  double r(int s, int a) const { return reward_mean[static_cast<std::size_t>(s) * num_actions + a]; }

  // Throws ValidationError on shape or normalization problems.
  void validate() const;
};

// Tabular stochastic policy. layered() policies hold one (s, a) table per
// decision step; stationary ones hold a single table.
struct StochasticPolicy {
  int num_states = 0;
  int num_actions = 0;
  int layers = 0;                // 0 means stationary
  std::vector<double> probs;     // (t, s, a) if layered, else (s, a)

  bool layered() const { return layers > 0; }

  double prob(int s, int a, int t = 0) const {
    const std::size_t base = layered() ? static_cast<std::size_t>(t) * num_states * num_actions : 0;
    return probs[base + static_cast<std::size_t>(s) * num_actions + a];
  }

  void validate() const;
};

struct Trajectory {
  struct Step {
    int state;
    int action;
    double reward;
  };
  std::int64_t seed_id = 0;
  std::vector<Step> steps;  // length == horizon
};

enum class PolicyKind { softmax_of_table, epsilon_greedy_of_table, uniform };

PolicyKind parse_policy_kind(const std::string& name);

// softmax_of_table: rows softmax(table / param), param > 0.
// epsilon_greedy_of_table: mass 1-eps on the row argmax (lowest index on
// ties) plus eps spread uniformly; param in [0, 1].
// uniform: 1/num_actions everywhere, table supplies shape only.
StochasticPolicy build_policy(PolicyKind kind, const std::vector<double>& table, int num_states,
                              int num_actions, double param);

// pi(a|s,t) / beta(a|s,t). Zero behavior probability is a support violation
// whether or not the target also vanishes: such a step cannot be reweighted.
double step_ratio(const StochasticPolicy& target, const StochasticPolicy& behavior, int s, int a, int t);

// Exact V(pi) by propagating the state marginal layer by layer.
double exact_value(const TabularMdp& mdp, const StochasticPolicy& policy);

// State marginals d_t(s) for t = 0..horizon-1, each row summing to 1.
std::vector<std::vector<double>> state_marginals(const TabularMdp& mdp, const StochasticPolicy& policy);

// Draws n episodes. Trajectory i consumes RNG stream (seed, i) only, so the
// result is independent of thread count and schedule; seed_id records i.
std::vector<Trajectory> sample_trajectories(const TabularMdp& mdp, const StochasticPolicy& policy,
                                            long n, std::uint64_t seed);
std::vector<Trajectory> sample_trajectories_serial(const TabularMdp& mdp, const StochasticPolicy& policy,
                                                   long n, std::uint64_t seed);

// Line-delimited serialization; reals are written with enough digits to
// round-trip bit-exactly.
void write_trajectories(std::ostream& out, const std::vector<Trajectory>& trajectories);
void write_trajectories_file(const std::string& path, const std::vector<Trajectory>& trajectories);
std::vector<Trajectory> read_trajectories(std::istream& in);
std::vector<Trajectory> read_trajectories_file(const std::string& path);

// Seeded generator for benchmark worlds: full-support transitions, rewards
// uniform on [-1, 1], normalized random initial distribution.
TabularMdp make_random_mdp(int num_states, int num_actions, int horizon, double reward_noise_std,
                           double discount, std::uint64_t seed);

// Finite-horizon optimal Q at the first step via backward induction,
// flattened to one (s, a) table. Used to seed policy tables.
std::vector<double> backward_induction_q(const TabularMdp& mdp);

}  // namespace ffis
