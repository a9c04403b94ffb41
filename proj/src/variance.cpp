#include "ffis/variance.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

#include "ffis/rng.hpp"

namespace ffis {

namespace {

constexpr double kMassTol = 1e-9;

void check_distribution(std::span<const double> v, const char* what) {
  double total = 0.0;
  for (double x : v) {
    if (x < 0.0 || !std::isfinite(x)) throw ValidationError(std::string(what) + ": negative or non-finite mass");
    total += x;
  }
  if (std::abs(total - 1.0) > kMassTol) {
    throw ValidationError(std::string(what) + ": masses sum to " + std::to_string(total) + ", not 1");
  }
}

double quantile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  if (v.size() == 1) return v[0];
  const double pos = q * static_cast<double>(v.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(pos);
  if (lo + 1 == v.size()) return v.back();
  const double frac = pos - static_cast<double>(lo);
  return v[lo] + frac * (v[lo + 1] - v[lo]);
}

}  // namespace

void AtomSystem::validate() const {
  if (atoms.empty()) throw ValidationError("atom system: no atoms");
  double sum_beta = 0.0, sum_pi = 0.0;
  for (const Atom& a : atoms) {
    if (a.p_beta < 0.0 || a.p_pi < 0.0 || !std::isfinite(a.p_beta) || !std::isfinite(a.p_pi)) {
      throw ValidationError("atom system: negative or non-finite mass");
    }
    sum_beta += a.p_beta;
    sum_pi += a.p_pi;
  }
  if (std::abs(sum_beta - 1.0) > kMassTol || std::abs(sum_pi - 1.0) > kMassTol) {
    throw ValidationError("atom system: measures must each sum to 1");
  }
}

double chi_square_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw ValidationError("chi-square: dimension mismatch");
  check_distribution(p, "chi-square p");
  check_distribution(q, "chi-square q");
  double div = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (q[i] <= 0.0) {
      if (p[i] > 0.0) {
        throw SupportViolation("chi-square: p places mass " + std::to_string(p[i]) +
                               " at index " + std::to_string(i) + " where q vanishes");
      }
      continue;
    }
    const double d = p[i] - q[i];
    div += d * d / q[i];
  }
  return div;
}

GapReport exact_variance_gap(const AtomSystem& system, const std::function<double(std::int64_t)>& g,
                             long max_atoms) {
  if (!g) throw ValidationError("variance gap: no class value function supplied");
  if (static_cast<long>(system.atoms.size()) > max_atoms) {
    throw BudgetExceeded("variance gap: " + std::to_string(system.atoms.size()) +
                         " atoms exceed the enumeration guard of " + std::to_string(max_atoms));
  }
  system.validate();

  std::map<std::int64_t, std::vector<const Atom*>> classes;
  for (const Atom& a : system.atoms) classes[a.cls].push_back(&a);

  GapReport report;
  double mean_ff = 0.0, sq_ff = 0.0;
  for (const auto& [cls, members] : classes) {
    double f_beta = 0.0, f_pi = 0.0;
    for (const Atom* a : members) {
      f_beta += a->p_beta;
      f_pi += a->p_pi;
    }
    if (f_beta <= 0.0) {
      if (f_pi > 0.0) {
        throw SupportViolation("variance gap: class " + std::to_string(cls) +
                               " is reachable under the target but not the logger");
      }
      continue;
    }
    PerClassTerm term;
    term.cls = cls;
    term.f_beta = f_beta;
    term.g = g(cls);
    term.w = f_pi / f_beta;
    if (f_pi > 0.0) {
      std::vector<double> cond_pi(members.size()), cond_beta(members.size());
      for (std::size_t i = 0; i < members.size(); ++i) {
        cond_pi[i] = members[i]->p_pi / f_pi;
        cond_beta[i] = members[i]->p_beta / f_beta;
      }
      term.chi2 = chi_square_divergence(cond_pi, cond_beta);
    }
    term.contribution = f_beta * term.g * term.g * term.w * term.w * term.chi2;
    report.analytic_gap += term.contribution;
    report.per_class_terms.push_back(term);

    mean_ff += f_beta * term.w * term.g;
    sq_ff += f_beta * term.w * term.g * term.w * term.g;
  }

  // Independent cross-check: the same gap from the two variances directly.
  double mean_traj = 0.0, sq_traj = 0.0;
  for (const Atom& a : system.atoms) {
    if (a.p_beta <= 0.0) continue;
    const double rho_g = (a.p_pi / a.p_beta) * g(a.cls);
    mean_traj += a.p_beta * rho_g;
    sq_traj += a.p_beta * rho_g * rho_g;
  }
  const double var_traj = sq_traj - mean_traj * mean_traj;
  const double var_ff = sq_ff - mean_ff * mean_ff;
  const double direct = var_traj - var_ff;
  if (std::abs(direct - report.analytic_gap) >
      1e-9 * std::max({1.0, std::abs(var_traj), std::abs(var_ff)})) {
    throw std::logic_error("variance gap: per-class sum and direct enumeration disagree");
  }
  return report;
}

AtomSystem enumerate_terminal_atoms(const TabularMdp& mdp, const StochasticPolicy& target,
                                    const StochasticPolicy& behavior, const QuotientSpec& spec,
                                    long max_atoms) {
  mdp.validate();
  target.validate();
  behavior.validate();
  spec.validate(mdp.num_states);
  if (spec.kind == QuotientKind::identity) {
    throw ValidationError("terminal atoms: identity quotients have no enumerable class space");
  }
  if (target.num_states != mdp.num_states || behavior.num_states != mdp.num_states ||
      target.num_actions != mdp.num_actions || behavior.num_actions != mdp.num_actions) {
    throw ValidationError("terminal atoms: policy shape does not match the MDP");
  }

  double bound = 1.0;
  for (int t = 0; t < mdp.horizon; ++t) {
    bound *= static_cast<double>(mdp.num_states) * mdp.num_actions;
    if (bound > static_cast<double>(max_atoms)) {
      throw BudgetExceeded("terminal atoms: trajectory count exceeds the enumeration guard of " +
                           std::to_string(max_atoms));
    }
  }

  AtomSystem system;
  // Depth-first in (state, action) ascending order; zero-mass branches under
  // both measures are pruned, zero-logger branches with target mass are kept.
  struct Frame {
    const TabularMdp& mdp;
    const StochasticPolicy& target;
    const StochasticPolicy& behavior;
    const QuotientSpec& spec;
    AtomSystem& out;

    void walk(int t, int s, double pb, double pp) {
      const int last = mdp.horizon - 1;
      for (int a = 0; a < mdp.num_actions; ++a) {
        const double b = behavior.prob(s, a, t);
        const double p = target.prob(s, a, t);
        if (b <= 0.0 && p <= 0.0) continue;
        if (t == last) {
          Atom atom;
          atom.cls = spec.kind == QuotientKind::state_time ? s : spec.class_of_state[s];
          atom.p_beta = pb * b;
          atom.p_pi = pp * p;
          out.atoms.push_back(atom);
          continue;
        }
        for (int s2 = 0; s2 < mdp.num_states; ++s2) {
          const double tr = mdp.p(s, a, s2);
          if (tr <= 0.0) continue;
          walk(t + 1, s2, pb * b * tr, pp * p * tr);
        }
      }
    }
  };
  Frame frame{mdp, target, behavior, spec, system};
  for (int s = 0; s < mdp.num_states; ++s) {
    if (mdp.initial_dist[static_cast<std::size_t>(s)] <= 0.0) continue;
    frame.walk(0, s, mdp.initial_dist[static_cast<std::size_t>(s)],
               mdp.initial_dist[static_cast<std::size_t>(s)]);
  }
  return system;
}

GapReport exact_variance_gap(const TabularMdp& mdp, const StochasticPolicy& target,
                             const StochasticPolicy& behavior, const QuotientSpec& spec,
                             const std::function<double(std::int64_t)>& g, long max_atoms) {
  return exact_variance_gap(enumerate_terminal_atoms(mdp, target, behavior, spec, max_atoms), g,
                            max_atoms);
}

namespace {

GapReport empirical_gap_impl(const AtomSystem& system, const std::function<double(std::int64_t)>& g,
                             long n_samples, std::uint64_t seed, long max_atoms, bool parallel) {
  if (n_samples < 2) throw ValidationError("empirical gap: need at least two samples");
  GapReport report = exact_variance_gap(system, g, max_atoms);

  std::map<std::int64_t, double> w_of;
  for (const PerClassTerm& t : report.per_class_terms) w_of[t.cls] = t.w;

  std::vector<double> cumulative(system.atoms.size());
  double run = 0.0;
  for (std::size_t i = 0; i < system.atoms.size(); ++i) {
    run += system.atoms[i].p_beta;
    cumulative[i] = run;
  }

  std::vector<double> traj_stat(static_cast<std::size_t>(n_samples));
  std::vector<double> ff_stat(static_cast<std::size_t>(n_samples));
  const auto draw = [&](long i) {
    CounterRng rng(seed, static_cast<std::uint64_t>(i));
    const double u = rng.uniform() * run;
    const std::size_t idx = static_cast<std::size_t>(
        std::upper_bound(cumulative.begin(), cumulative.end(), u) - cumulative.begin());
    const Atom& a = system.atoms[std::min(idx, system.atoms.size() - 1)];
    const double gv = g(a.cls);
    traj_stat[static_cast<std::size_t>(i)] = (a.p_pi / a.p_beta) * gv;
    ff_stat[static_cast<std::size_t>(i)] = w_of.at(a.cls) * gv;
  };
  if (parallel) {
#pragma omp parallel for schedule(static)
    for (long i = 0; i < n_samples; ++i) draw(i);
  } else {
    for (long i = 0; i < n_samples; ++i) draw(i);
  }

  const auto sample_variance = [n_samples](const std::vector<double>& xs) {
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(n_samples);
    double ss = 0.0;
    for (double x : xs) ss += (x - mean) * (x - mean);
    return ss / static_cast<double>(n_samples - 1);
  };
  report.empirical_var_traj = sample_variance(traj_stat);
  report.empirical_var_ff = sample_variance(ff_stat);
  report.empirical_gap = report.empirical_var_traj - report.empirical_var_ff;
  report.n_samples = n_samples;
  return report;
}

}  // namespace

GapReport empirical_variance_gap(const AtomSystem& system, const std::function<double(std::int64_t)>& g,
                                 long n_samples, std::uint64_t seed, long max_atoms) {
  return empirical_gap_impl(system, g, n_samples, seed, max_atoms, true);
}

GapReport empirical_variance_gap_serial(const AtomSystem& system,
                                        const std::function<double(std::int64_t)>& g, long n_samples,
                                        std::uint64_t seed, long max_atoms) {
  return empirical_gap_impl(system, g, n_samples, seed, max_atoms, false);
}

namespace {

struct OrderingEntry {
  double p_beta = 0.0;
  double p_pi = 0.0;
  double reward_mean = 0.0;
  double reward_var = 0.0;
};

// Ordered sequences over the union support of the two policies, grouped by
// the picked set.
void walk_orderings(const SetSufficientPolicy& target, const SetSufficientPolicy& behavior, int ctx,
                    int depth, std::uint64_t picked, std::vector<int>& prefix, double pp, double pb,
                    const EnumerableSlateWorld& world,
                    std::map<std::uint64_t, std::vector<std::pair<std::vector<int>, OrderingEntry>>>& out) {
  if (depth == world.slate_size) {
    OrderingEntry e;
    e.p_beta = pb;
    e.p_pi = pp;
    e.reward_mean = world.reward_mean(ctx, prefix);
    e.reward_var = world.reward_var(ctx, prefix);
    if (!std::isfinite(e.reward_mean) || !std::isfinite(e.reward_var) || e.reward_var < 0.0) {
      throw ValidationError("ordering gap: reward moments must be finite with nonnegative variance");
    }
    out[picked].emplace_back(prefix, e);
    return;
  }
  const int m = target.catalog_size();
  std::vector<double> dt(static_cast<std::size_t>(m)), db(static_cast<std::size_t>(m));
  target.next_item_dist(ctx, picked, dt);
  behavior.next_item_dist(ctx, picked, db);
  for (int a = 0; a < m; ++a) {
    const double t = dt[static_cast<std::size_t>(a)];
    const double b = db[static_cast<std::size_t>(a)];
    if (t <= 0.0 && b <= 0.0) continue;
    prefix.push_back(a);
    walk_orderings(target, behavior, ctx, depth + 1, picked | (1ull << a), prefix, pp * t, pb * b,
                   world, out);
    prefix.pop_back();
  }
}

}  // namespace

GapReport ordering_nuisance_gap(const EnumerableSlateWorld& world, const SetSufficientPolicy& target,
                                const SetSufficientPolicy& behavior) {
  if (!world.reward_mean || !world.reward_var) {
    throw ValidationError("ordering gap: the world must supply reward mean and variance");
  }
  check_distribution(world.context_probs, "ordering gap contexts");
  if (target.catalog_size() != behavior.catalog_size()) {
    throw ValidationError("ordering gap: policies disagree on catalog size");
  }
  const int m = target.catalog_size();
  const int k = world.slate_size;
  if (k < 1 || k > m) throw ValidationError("ordering gap: slate size out of range");
  if (k > 6) throw BudgetExceeded("ordering gap: slate size " + std::to_string(k) +
                                  " exceeds the factorial enumeration guard of 6");
  double sequences = 1.0;
  for (int j = 0; j < k; ++j) sequences *= static_cast<double>(m - j);
  if (sequences > 1e6) {
    throw BudgetExceeded("ordering gap: ordered sequence count exceeds the enumeration guard");
  }

  GapReport report;
  double mean_traj = 0.0, sq_traj = 0.0, mean_ff = 0.0, sq_ff = 0.0;
  std::int64_t row = 0;
  for (std::size_t ctx = 0; ctx < world.context_probs.size(); ++ctx) {
    const double px = world.context_probs[ctx];
    if (px <= 0.0) continue;
    std::map<std::uint64_t, std::vector<std::pair<std::vector<int>, OrderingEntry>>> by_mask;
    std::vector<int> prefix;
    walk_orderings(target, behavior, static_cast<int>(ctx), 0, 0, prefix, 1.0, 1.0, world, by_mask);

    for (const auto& [mask, entries] : by_mask) {
      const OrderingEntry& first = entries.front().second;
      for (const auto& [order, e] : entries) {
        if (std::abs(e.reward_mean - first.reward_mean) >
                1e-12 * std::max(1.0, std::abs(first.reward_mean)) ||
            std::abs(e.reward_var - first.reward_var) >
                1e-12 * std::max(1.0, std::abs(first.reward_var))) {
          throw ValidationError("ordering gap: reward moments vary with display order within a slate");
        }
      }
      const double er2 = first.reward_mean * first.reward_mean + first.reward_var;

      double f_beta = 0.0, f_pi = 0.0;
      for (const auto& [order, e] : entries) {
        f_beta += e.p_beta;
        f_pi += e.p_pi;
      }
      if (f_beta <= 0.0) {
        if (f_pi > 0.0) {
          throw SupportViolation("ordering gap: a slate is reachable under the target but not the logger");
        }
        continue;
      }
      PerClassTerm term;
      term.cls = row++;
      term.f_beta = px * f_beta;
      term.g = std::sqrt(er2);
      term.w = f_pi / f_beta;
      if (f_pi > 0.0) {
        std::vector<double> cond_pi(entries.size()), cond_beta(entries.size());
        for (std::size_t i = 0; i < entries.size(); ++i) {
          cond_pi[i] = entries[i].second.p_pi / f_pi;
          cond_beta[i] = entries[i].second.p_beta / f_beta;
        }
        term.chi2 = chi_square_divergence(cond_pi, cond_beta);
      }
      term.contribution = term.f_beta * er2 * term.w * term.w * term.chi2;
      report.analytic_gap += term.contribution;
      report.per_class_terms.push_back(term);

      for (const auto& [order, e] : entries) {
        if (e.p_beta <= 0.0) continue;
        const double rho = e.p_pi / e.p_beta;
        mean_traj += px * e.p_beta * rho * first.reward_mean;
        sq_traj += px * e.p_beta * rho * rho * er2;
      }
      mean_ff += px * f_pi * first.reward_mean;
      sq_ff += px * f_beta * term.w * term.w * er2;
    }
  }

  const double var_traj = sq_traj - mean_traj * mean_traj;
  const double var_ff = sq_ff - mean_ff * mean_ff;
  if (std::abs((var_traj - var_ff) - report.analytic_gap) >
      1e-9 * std::max({1.0, std::abs(var_traj), std::abs(var_ff)})) {
    throw std::logic_error("ordering gap: per-slate sum and direct enumeration disagree");
  }
  return report;
}

SubsetMode parse_subset_mode(const std::string& name) {
  if (name == "random") return SubsetMode::random;
  if (name == "behavior_induced") return SubsetMode::behavior_induced;
  throw ValidationError("unknown subset mode: " + name);
}

std::string subset_mode_name(SubsetMode m) {
  return m == SubsetMode::random ? "random" : "behavior_induced";
}

namespace {

int uniform_int(CounterRng& rng, int n) {
  const std::uint32_t bound = 0xFFFFFFFFu - 0xFFFFFFFFu % static_cast<std::uint32_t>(n);
  std::uint32_t u;
  do {
    u = rng.next_u32();
  } while (u >= bound);
  return static_cast<int>(u % static_cast<std::uint32_t>(n));
}

double tvd(std::span<const double> p, std::span<const double> q) {
  double l1 = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) l1 += std::abs(p[i] - q[i]);
  return 0.5 * l1;
}

std::vector<TvdRow> tvd_impl(const OrderedSlatePolicy& policy, std::span<const double> context_probs,
                             SubsetMode mode, std::span<const int> sizes, int n_draws,
                             std::uint64_t seed, bool parallel) {
  check_distribution(context_probs, "tvd contexts");
  if (static_cast<int>(context_probs.size()) > policy.num_contexts()) {
    throw ValidationError("tvd: more context probabilities than policy contexts");
  }
  if (n_draws < 1) throw ValidationError("tvd: need at least one draw");
  const int m = policy.catalog_size();
  for (int t : sizes) {
    if (t < 1 || t > m) throw ValidationError("tvd: subset size out of range");
    if (t > 7) throw BudgetExceeded("tvd: subset size " + std::to_string(t) +
                                    " exceeds the factorial enumeration guard of 7");
  }

  std::vector<TvdRow> rows;
  for (int t : sizes) {
    std::vector<double> max_vals(static_cast<std::size_t>(n_draws));
    std::vector<double> mean_vals(static_cast<std::size_t>(n_draws));

    const auto one_draw = [&](int d) {
      CounterRng rng(seed, (static_cast<std::uint64_t>(t) << 32) | static_cast<std::uint64_t>(d));
      const int ctx = rng.categorical(context_probs);

      std::vector<int> items;
      if (mode == SubsetMode::random) {
        std::uint64_t picked = 0;
        while (static_cast<int>(items.size()) < t) {
          const int a = uniform_int(rng, m);
          if ((picked >> a) & 1ull) continue;
          picked |= 1ull << a;
          items.push_back(a);
        }
        std::sort(items.begin(), items.end());
      } else {
        // The policy extends its own prefix, always presented in ascending
        // item order.
        std::vector<double> dist(static_cast<std::size_t>(m));
        for (int j = 0; j < t; ++j) {
          policy.next_item_dist(ctx, items, dist);
          const int a = rng.categorical(dist);
          items.insert(std::upper_bound(items.begin(), items.end(), a), a);
        }
      }

      // Group bitwise-identical distributions so near-set-sufficient policies
      // cost far fewer pairwise comparisons.
      std::map<std::vector<double>, long> groups;
      std::vector<int> order = items;
      long total_orderings = 0;
      do {
        std::vector<double> dist(static_cast<std::size_t>(m));
        policy.next_item_dist(ctx, order, dist);
        ++groups[dist];
        ++total_orderings;
      } while (std::next_permutation(order.begin(), order.end()));

      double max_tvd = 0.0, pair_sum = 0.0;
      for (auto i = groups.begin(); i != groups.end(); ++i) {
        for (auto j = std::next(i); j != groups.end(); ++j) {
          const double d_ij = tvd(i->first, j->first);
          max_tvd = std::max(max_tvd, d_ij);
          pair_sum += static_cast<double>(i->second) * static_cast<double>(j->second) * d_ij;
        }
      }
      const double total_pairs = 0.5 * static_cast<double>(total_orderings) *
                                 static_cast<double>(total_orderings - 1);
      max_vals[static_cast<std::size_t>(d)] = max_tvd;
      mean_vals[static_cast<std::size_t>(d)] = total_pairs > 0.0 ? pair_sum / total_pairs : 0.0;
    };

    if (parallel) {
#pragma omp parallel for schedule(dynamic)
      for (int d = 0; d < n_draws; ++d) one_draw(d);
    } else {
      for (int d = 0; d < n_draws; ++d) one_draw(d);
    }

    TvdRow row;
    row.size = t;
    row.median_max = quantile(max_vals, 0.5);
    row.p90_max = quantile(max_vals, 0.9);
    row.median_mean = quantile(mean_vals, 0.5);
    rows.push_back(row);
  }
  return rows;
}

}  // namespace

std::vector<TvdRow> set_sufficiency_tvd(const OrderedSlatePolicy& policy,
                                        std::span<const double> context_probs, SubsetMode mode,
                                        std::span<const int> sizes, int n_draws, std::uint64_t seed) {
  return tvd_impl(policy, context_probs, mode, sizes, n_draws, seed, true);
}

std::vector<TvdRow> set_sufficiency_tvd_serial(const OrderedSlatePolicy& policy,
                                               std::span<const double> context_probs, SubsetMode mode,
                                               std::span<const int> sizes, int n_draws,
                                               std::uint64_t seed) {
  return tvd_impl(policy, context_probs, mode, sizes, n_draws, seed, false);
}

}  // namespace ffis
