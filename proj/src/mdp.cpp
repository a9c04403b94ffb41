#include "ffis/mdp.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ffis/rng.hpp"

namespace ffis {

namespace {

constexpr double kRowTol = 1e-12;

void check_distribution(const double* row, int n, const char* what) {
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    if (!std::isfinite(row[i]) || row[i] < 0.0) {
      throw ValidationError(std::string(what) + ": negative or non-finite probability");
    }
    sum += row[i];
  }
  if (std::abs(sum - 1.0) > kRowTol) {
    throw ValidationError(std::string(what) + ": row sums to " + std::to_string(sum) + ", expected 1");
  }
}

std::string format_real(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void TabularMdp::validate() const {
  if (num_states < 1 || num_actions < 1) throw ValidationError("mdp: need at least one state and action");
  if (horizon < 1) throw ValidationError("mdp: horizon must be >= 1");
  if (discount <= 0.0 || discount > 1.0) throw ValidationError("mdp: discount must lie in (0, 1]");
  if (reward_noise_std < 0.0 || !std::isfinite(reward_noise_std)) {
    throw ValidationError("mdp: reward_noise_std must be finite and >= 0");
  }
  const std::size_t sa = static_cast<std::size_t>(num_states) * num_actions;
  if (transition.size() != sa * num_states) throw ValidationError("mdp: transition table has wrong size");
  if (reward_mean.size() != sa) throw ValidationError("mdp: reward table has wrong size");
  if (initial_dist.size() != static_cast<std::size_t>(num_states)) {
    throw ValidationError("mdp: initial distribution has wrong size");
  }
  for (int s = 0; s < num_states; ++s) {
    for (int a = 0; a < num_actions; ++a) {
      check_distribution(&transition[(static_cast<std::size_t>(s) * num_actions + a) * num_states],
                         num_states, "mdp transition");
    }
  }
  for (double r : reward_mean) {
    if (!std::isfinite(r)) throw ValidationError("mdp: non-finite reward mean");
  }
  check_distribution(initial_dist.data(), num_states, "mdp initial distribution");
}

void StochasticPolicy::validate() const {
  if (num_states < 1 || num_actions < 1) throw ValidationError("policy: need at least one state and action");
  const std::size_t sa = static_cast<std::size_t>(num_states) * num_actions;
  const std::size_t expect = layered() ? sa * layers : sa;
  if (probs.size() != expect) throw ValidationError("policy: probability table has wrong size");
  const int nt = layered() ? layers : 1;
  for (int t = 0; t < nt; ++t) {
    for (int s = 0; s < num_states; ++s) {
      check_distribution(&probs[(static_cast<std::size_t>(t) * num_states + s) * num_actions], num_actions,
                         "policy row");
    }
  }
}

PolicyKind parse_policy_kind(const std::string& name) {
  if (name == "softmax_of_table") return PolicyKind::softmax_of_table;
  if (name == "epsilon_greedy_of_table") return PolicyKind::epsilon_greedy_of_table;
  if (name == "uniform") return PolicyKind::uniform;
  throw ValidationError("unknown policy kind: " + name);
}

StochasticPolicy build_policy(PolicyKind kind, const std::vector<double>& table, int num_states,
                              int num_actions, double param) {
  if (num_states < 1 || num_actions < 1) throw ValidationError("build_policy: bad shape");
  if (table.size() != static_cast<std::size_t>(num_states) * num_actions) {
    throw ValidationError("build_policy: table size does not match shape");
  }
  for (double v : table) {
    if (!std::isfinite(v)) throw ValidationError("build_policy: non-finite table entry");
  }
  StochasticPolicy p;
  p.num_states = num_states;
  p.num_actions = num_actions;
  p.layers = 0;
  p.probs.assign(table.size(), 0.0);
  for (int s = 0; s < num_states; ++s) {
    const double* row = &table[static_cast<std::size_t>(s) * num_actions];
    double* out = &p.probs[static_cast<std::size_t>(s) * num_actions];
    switch (kind) {
      case PolicyKind::softmax_of_table: {
        if (!(param > 0.0)) throw ValidationError("build_policy: softmax temperature must be > 0");
        double mx = row[0];
        for (int a = 1; a < num_actions; ++a) mx = std::max(mx, row[a]);
        double sum = 0.0;
        for (int a = 0; a < num_actions; ++a) {
          out[a] = std::exp((row[a] - mx) / param);
          sum += out[a];
        }
        for (int a = 0; a < num_actions; ++a) out[a] /= sum;
        break;
      }
      case PolicyKind::epsilon_greedy_of_table: {
        if (param < 0.0 || param > 1.0) throw ValidationError("build_policy: epsilon must lie in [0, 1]");
        int best = 0;
        for (int a = 1; a < num_actions; ++a) {
          if (row[a] > row[best]) best = a;
        }
        const double base = param / num_actions;
        for (int a = 0; a < num_actions; ++a) out[a] = base;
        out[best] += 1.0 - param;
        break;
      }
      case PolicyKind::uniform: {
        const double u = 1.0 / num_actions;
        for (int a = 0; a < num_actions; ++a) out[a] = u;
        break;
      }
    }
  }
  p.validate();
  return p;
}

double step_ratio(const StochasticPolicy& target, const StochasticPolicy& behavior, int s, int a, int t) {
  const double pb = behavior.prob(s, a, t);
  const double pt = target.prob(s, a, t);
  if (pb <= 0.0) {
    throw SupportViolation("step_ratio: behavior probability is zero at state " + std::to_string(s) +
                           ", action " + std::to_string(a) + ", step " + std::to_string(t) +
                           (pt > 0.0 ? " while the target probability is positive" : ""));
  }
  return pt / pb;
}

std::vector<std::vector<double>> state_marginals(const TabularMdp& mdp, const StochasticPolicy& policy) {
  mdp.validate();
  policy.validate();
  if (policy.num_states != mdp.num_states || policy.num_actions != mdp.num_actions) {
    throw ValidationError("state_marginals: policy shape does not match the MDP");
  }
  if (policy.layered() && policy.layers < mdp.horizon) {
    throw ValidationError("state_marginals: layered policy has fewer layers than the horizon");
  }
  std::vector<std::vector<double>> d(mdp.horizon, std::vector<double>(mdp.num_states, 0.0));
  d[0] = mdp.initial_dist;
  for (int t = 0; t + 1 < mdp.horizon; ++t) {
    for (int s = 0; s < mdp.num_states; ++s) {
      const double ds = d[t][s];
      if (ds == 0.0) continue;
      for (int a = 0; a < mdp.num_actions; ++a) {
        const double pa = policy.prob(s, a, t);
        if (pa == 0.0) continue;
        const double w = ds * pa;
        for (int s2 = 0; s2 < mdp.num_states; ++s2) {
          d[t + 1][s2] += w * mdp.p(s, a, s2);
        }
      }
    }
  }
  return d;
}

double exact_value(const TabularMdp& mdp, const StochasticPolicy& policy) {
  const auto d = state_marginals(mdp, policy);
  double value = 0.0;
  double disc = 1.0;
  for (int t = 0; t < mdp.horizon; ++t) {
    double layer = 0.0;
    for (int s = 0; s < mdp.num_states; ++s) {
      if (d[t][s] == 0.0) continue;
      double mean_r = 0.0;
      for (int a = 0; a < mdp.num_actions; ++a) mean_r += policy.prob(s, a, t) * mdp.r(s, a);
      layer += d[t][s] * mean_r;
    }
    value += disc * layer;
    disc *= mdp.discount;
  }
  return value;
}

namespace {

Trajectory sample_one(const TabularMdp& mdp, const StochasticPolicy& policy, std::uint64_t seed, long index) {
  CounterRng rng(seed, static_cast<std::uint64_t>(index));
  Trajectory traj;
  traj.seed_id = index;
  traj.steps.resize(mdp.horizon);
  const std::span<const double> init(mdp.initial_dist);
  int s = rng.categorical(init);
  for (int t = 0; t < mdp.horizon; ++t) {
    const std::size_t base = (policy.layered() ? static_cast<std::size_t>(t) * policy.num_states : 0);
    const std::span<const double> row(&policy.probs[(base + s) * policy.num_actions],
                                      static_cast<std::size_t>(policy.num_actions));
    const int a = rng.categorical(row);
    double reward = mdp.r(s, a);
    if (mdp.reward_noise_std > 0.0) reward += mdp.reward_noise_std * rng.gaussian();
    traj.steps[t] = {s, a, reward};
    const std::span<const double> trow(&mdp.transition[(static_cast<std::size_t>(s) * mdp.num_actions + a) *
                                                       mdp.num_states],
                                       static_cast<std::size_t>(mdp.num_states));
    s = rng.categorical(trow);
  }
  return traj;
}

void check_sampling_args(const TabularMdp& mdp, const StochasticPolicy& policy, long n) {
  mdp.validate();
  policy.validate();
  if (policy.num_states != mdp.num_states || policy.num_actions != mdp.num_actions) {
    throw ValidationError("sample_trajectories: policy shape does not match the MDP");
  }
  if (policy.layered() && policy.layers < mdp.horizon) {
    throw ValidationError("sample_trajectories: layered policy has fewer layers than the horizon");
  }
  if (n < 0) throw ValidationError("sample_trajectories: negative count");
}

}  // namespace

std::vector<Trajectory> sample_trajectories_serial(const TabularMdp& mdp, const StochasticPolicy& policy,
                                                   long n, std::uint64_t seed) {
  check_sampling_args(mdp, policy, n);
  std::vector<Trajectory> out(static_cast<std::size_t>(n));
  for (long i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = sample_one(mdp, policy, seed, i);
  return out;
}

std::vector<Trajectory> sample_trajectories(const TabularMdp& mdp, const StochasticPolicy& policy, long n,
                                            std::uint64_t seed) {
  check_sampling_args(mdp, policy, n);
  std::vector<Trajectory> out(static_cast<std::size_t>(n));
#pragma omp parallel for schedule(static)
  for (long i = 0; i < n; ++i) {
    out[static_cast<std::size_t>(i)] = sample_one(mdp, policy, seed, i);
  }
  return out;
}

void write_trajectories(std::ostream& out, const std::vector<Trajectory>& trajectories) {
  for (const Trajectory& t : trajectories) {
    out << "{\"seed_id\":" << t.seed_id << ",\"steps\":[";
    for (std::size_t i = 0; i < t.steps.size(); ++i) {
      if (i) out << ',';
      out << '[' << t.steps[i].state << ',' << t.steps[i].action << ',' << format_real(t.steps[i].reward)
          << ']';
    }
    out << "]}\n";
  }
}

void write_trajectories_file(const std::string& path, const std::vector<Trajectory>& trajectories) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ValidationError("cannot open for writing: " + path);
  write_trajectories(f, trajectories);
}

std::vector<Trajectory> read_trajectories(std::istream& in) {
  std::vector<Trajectory> out;
  std::string line;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("trajectory line " + std::to_string(lineno) + ": " + e.what());
    }
    if (!j.is_object() || !j.contains("seed_id") || !j.contains("steps")) {
      throw ValidationError("trajectory line " + std::to_string(lineno) + ": missing seed_id or steps");
    }
    Trajectory t;
    t.seed_id = j["seed_id"].get<std::int64_t>();
    for (const auto& step : j["steps"]) {
      if (!step.is_array() || step.size() != 3) {
        throw ValidationError("trajectory line " + std::to_string(lineno) + ": malformed step");
      }
      t.steps.push_back({step[0].get<int>(), step[1].get<int>(), step[2].get<double>()});
    }
    out.push_back(std::move(t));
  }
  return out;
}

std::vector<Trajectory> read_trajectories_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ValidationError("cannot open for reading: " + path);
  return read_trajectories(f);
}

TabularMdp make_random_mdp(int num_states, int num_actions, int horizon, double reward_noise_std,
                           double discount, std::uint64_t seed) {
  TabularMdp mdp;
  mdp.num_states = num_states;
  mdp.num_actions = num_actions;
  mdp.horizon = horizon;
  mdp.discount = discount;
  mdp.reward_noise_std = reward_noise_std;
  const std::size_t sa = static_cast<std::size_t>(num_states) * num_actions;
  mdp.transition.resize(sa * num_states);
  mdp.reward_mean.resize(sa);
  mdp.initial_dist.resize(num_states);

  CounterRng trans_rng(seed, 0);
  for (std::size_t row = 0; row < sa; ++row) {
    double sum = 0.0;
    double* p = &mdp.transition[row * num_states];
    for (int s2 = 0; s2 < num_states; ++s2) {
      p[s2] = 0.05 + trans_rng.uniform();  // full support keeps every ratio defined
      sum += p[s2];
    }
    for (int s2 = 0; s2 < num_states; ++s2) p[s2] /= sum;
  }
  CounterRng reward_rng(seed, 1);
  for (std::size_t i = 0; i < sa; ++i) mdp.reward_mean[i] = reward_rng.uniform(-1.0, 1.0);
  CounterRng init_rng(seed, 2);
  double sum = 0.0;
  for (int s = 0; s < num_states; ++s) {
    mdp.initial_dist[s] = 0.05 + init_rng.uniform();
    sum += mdp.initial_dist[s];
  }
  for (int s = 0; s < num_states; ++s) mdp.initial_dist[s] /= sum;
  mdp.validate();
  return mdp;
}

std::vector<double> backward_induction_q(const TabularMdp& mdp) {
  mdp.validate();
  const std::size_t sa = static_cast<std::size_t>(mdp.num_states) * mdp.num_actions;
  std::vector<double> v(mdp.num_states, 0.0);
  std::vector<double> q(sa, 0.0);
  for (int t = mdp.horizon - 1; t >= 0; --t) {
    for (int s = 0; s < mdp.num_states; ++s) {
      for (int a = 0; a < mdp.num_actions; ++a) {
        double nxt = 0.0;
        for (int s2 = 0; s2 < mdp.num_states; ++s2) nxt += mdp.p(s, a, s2) * v[s2];
        q[static_cast<std::size_t>(s) * mdp.num_actions + a] = mdp.r(s, a) + mdp.discount * nxt;
      }
    }
    for (int s = 0; s < mdp.num_states; ++s) {
      double best = q[static_cast<std::size_t>(s) * mdp.num_actions];
      for (int a = 1; a < mdp.num_actions; ++a) {
        best = std::max(best, q[static_cast<std::size_t>(s) * mdp.num_actions + a]);
      }
      v[s] = best;
    }
  }
  return q;
}

}  // namespace ffis
