#include "ffis/quotient.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

namespace ffis {

namespace {

constexpr double kFlowTol = 1e-9;

std::string format_real(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

QuotientKind parse_quotient_kind(const std::string& name) {
  if (name == "identity") return QuotientKind::identity;
  if (name == "state_time") return QuotientKind::state_time;
  if (name == "abstraction") return QuotientKind::abstraction;
  throw ValidationError("unknown quotient kind: " + name);
}

int QuotientSpec::num_classes(int num_states) const {
  switch (kind) {
    case QuotientKind::identity:
      throw ValidationError("identity quotient has no enumerable class space");
    case QuotientKind::state_time:
      return num_states;
    case QuotientKind::abstraction: {
      int mx = -1;
      for (int c : class_of_state) mx = std::max(mx, c);
      return mx + 1;
    }
  }
  return 0;
}

void QuotientSpec::validate(int num_states) const {
  if (kind != QuotientKind::abstraction) return;
  if (class_of_state.size() != static_cast<std::size_t>(num_states)) {
    throw ValidationError("abstraction quotient: class_of_state size does not match the state count");
  }
  int mx = -1;
  for (int c : class_of_state) {
    if (c < 0) throw ValidationError("abstraction quotient: negative class id");
    mx = std::max(mx, c);
  }
  std::vector<bool> seen(static_cast<std::size_t>(mx + 1), false);
  for (int c : class_of_state) seen[static_cast<std::size_t>(c)] = true;
  for (std::size_t c = 0; c < seen.size(); ++c) {
    if (!seen[c]) {
      throw ValidationError("abstraction quotient: class ids must be contiguous, missing " +
                            std::to_string(c));
    }
  }
}

PrefixInterner::PrefixInterner(int layers) : maps_(static_cast<std::size_t>(layers)) {
  if (layers < 1) throw ValidationError("prefix interner needs at least one layer");
}

std::size_t PrefixInterner::KeyHash::operator()(const Key& k) const {
  // FNV-1a over the packed fields
  std::uint64_t h = 1469598103934665603ull;
  const auto mix = [&h](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xFF;
      h *= 1099511628211ull;
    }
  };
  mix(static_cast<std::uint64_t>(static_cast<std::uint32_t>(k.prev)) |
      (static_cast<std::uint64_t>(static_cast<std::uint32_t>(k.action)) << 32));
  mix(k.reward_bits);
  mix(static_cast<std::uint64_t>(static_cast<std::uint32_t>(k.state)));
  return static_cast<std::size_t>(h);
}

std::vector<int> PrefixInterner::map_impl(const Trajectory& traj, bool insert) {
  if (traj.steps.size() != maps_.size()) {
    throw ValidationError("prefix interner: trajectory length does not match the layer count");
  }
  std::vector<int> ids(maps_.size(), -1);
  int prev = -1;
  for (std::size_t t = 0; t < maps_.size(); ++t) {
    Key key{prev, 0, 0, traj.steps[t].state};
    if (t > 0) {
      key.action = traj.steps[t - 1].action;
      double r = traj.steps[t - 1].reward;
      std::uint64_t bits;
      std::memcpy(&bits, &r, sizeof(bits));
      key.reward_bits = bits;
    }
    if (prev == -2) {  // an earlier layer was already unseen
      ids[t] = -1;
      continue;
    }
    auto& m = maps_[t];
    auto it = m.find(key);
    if (it == m.end()) {
      if (!insert) {
        ids[t] = -1;
        prev = -2;
        continue;
      }
      it = m.emplace(key, static_cast<int>(m.size())).first;
    }
    ids[t] = it->second;
    prev = it->second;
  }
  return ids;
}

std::vector<int> PrefixInterner::assign(const Trajectory& traj) { return map_impl(traj, true); }

std::vector<int> PrefixInterner::lookup(const Trajectory& traj) const {
  return const_cast<PrefixInterner*>(this)->map_impl(traj, false);
}

int PrefixInterner::classes_at(int layer) const {
  return static_cast<int>(maps_[static_cast<std::size_t>(layer)].size());
}

std::vector<int> assign_classes(const Trajectory& traj, const QuotientSpec& spec, PrefixInterner* interner,
                                bool insert) {
  switch (spec.kind) {
    case QuotientKind::identity: {
      if (interner == nullptr) throw ValidationError("identity quotient requires a prefix interner");
      return insert ? interner->assign(traj) : interner->lookup(traj);
    }
    case QuotientKind::state_time: {
      std::vector<int> ids(traj.steps.size());
      for (std::size_t t = 0; t < traj.steps.size(); ++t) ids[t] = traj.steps[t].state;
      return ids;
    }
    case QuotientKind::abstraction: {
      std::vector<int> ids(traj.steps.size());
      for (std::size_t t = 0; t < traj.steps.size(); ++t) {
        const int s = traj.steps[t].state;
        if (s < 0 || static_cast<std::size_t>(s) >= spec.class_of_state.size()) {
          throw ValidationError("abstraction quotient: state out of range");
        }
        ids[t] = spec.class_of_state[static_cast<std::size_t>(s)];
      }
      return ids;
    }
  }
  throw ValidationError("unreachable quotient kind");
}

void FlowTable::validate() const {
  for (std::size_t t = 0; t < flow.size(); ++t) {
    double sum = 0.0;
    for (double f : flow[t]) {
      if (f < 0.0 || !std::isfinite(f)) throw ValidationError("flow table: negative or non-finite flow");
      sum += f;
    }
    if (std::abs(sum - 1.0) > kFlowTol) {
      throw ValidationError("flow table: layer " + std::to_string(t) + " sums to " + std::to_string(sum));
    }
  }
}

FlowTable exact_flows(const TabularMdp& mdp, const StochasticPolicy& policy, const QuotientSpec& spec) {
  if (spec.kind == QuotientKind::identity) {
    throw ValidationError("identity quotient flows are not enumerable; use an empirical ratio mode");
  }
  spec.validate(mdp.num_states);
  const auto d = state_marginals(mdp, policy);
  FlowTable table;
  const int nc = spec.num_classes(mdp.num_states);
  table.flow.assign(d.size(), std::vector<double>(static_cast<std::size_t>(nc), 0.0));
  for (std::size_t t = 0; t < d.size(); ++t) {
    for (int s = 0; s < mdp.num_states; ++s) {
      const int c = spec.kind == QuotientKind::state_time ? s : spec.class_of_state[static_cast<std::size_t>(s)];
      table.flow[t][static_cast<std::size_t>(c)] += d[t][static_cast<std::size_t>(s)];
    }
  }
  table.validate();
  return table;
}

RatioMode parse_ratio_mode(const std::string& name) {
  if (name == "exact") return RatioMode::exact;
  if (name == "pooled") return RatioMode::pooled;
  if (name == "split") return RatioMode::split;
  if (name == "leave_one_out") return RatioMode::leave_one_out;
  throw ValidationError("unknown ratio mode: " + name);
}

int QuotientRatioTable::layers() const {
  return static_cast<int>(mode == RatioMode::exact ? exact_ratio.size() : cells.size());
}

long QuotientRatioTable::support_count(int layer, int cls) const {
  if (mode == RatioMode::exact) return 0;
  const auto& row = cells[static_cast<std::size_t>(layer)];
  if (cls < 0 || static_cast<std::size_t>(cls) >= row.size()) return 0;
  return row[static_cast<std::size_t>(cls)].count;
}

bool QuotientRatioTable::ratio_at(int layer, int cls, double own_rho, double* out) const {
  if (cls < 0) return false;
  if (mode == RatioMode::exact) {
    const auto& row = exact_ratio[static_cast<std::size_t>(layer)];
    if (static_cast<std::size_t>(cls) >= row.size()) return false;
    const double r = row[static_cast<std::size_t>(cls)];
    if (!std::isfinite(r)) return false;
    *out = r;
    return true;
  }
  const auto& row = cells[static_cast<std::size_t>(layer)];
  if (static_cast<std::size_t>(cls) >= row.size()) return false;
  const Cell& cell = row[static_cast<std::size_t>(cls)];
  if (mode == RatioMode::leave_one_out) {
    if (cell.count < 2) return false;
    *out = (cell.sum - own_rho) / static_cast<double>(cell.count - 1);
    return true;
  }
  if (cell.count < 1) return false;
  *out = cell.sum / static_cast<double>(cell.count);
  return true;
}

QuotientRatioTable exact_ratio_table(const FlowTable& target_flows, const FlowTable& behavior_flows) {
  target_flows.validate();
  behavior_flows.validate();
  if (target_flows.layers() != behavior_flows.layers()) {
    throw ValidationError("exact ratio table: flow tables have different layer counts");
  }
  QuotientRatioTable table;
  table.mode = RatioMode::exact;
  table.exact_ratio.resize(target_flows.flow.size());
  for (std::size_t t = 0; t < target_flows.flow.size(); ++t) {
    const auto& fp = target_flows.flow[t];
    const auto& fb = behavior_flows.flow[t];
    if (fp.size() != fb.size()) {
      throw ValidationError("exact ratio table: class counts differ at layer " + std::to_string(t));
    }
    auto& row = table.exact_ratio[t];
    row.assign(fp.size(), std::numeric_limits<double>::quiet_NaN());
    for (std::size_t c = 0; c < fp.size(); ++c) {
      if (fb[c] > 0.0) {
        row[c] = fp[c] / fb[c];
      }
      // zero behavior flow with positive target flow is only a problem if a
      // logged sample lands there; the estimator raises it then
    }
  }
  return table;
}

QuotientRatioTable empirical_quotient_ratio(const std::vector<Trajectory>& data, const QuotientSpec& spec,
                                            const StochasticPolicy& target,
                                            const StochasticPolicy& behavior, RatioMode mode,
                                            double split_fraction) {
  if (mode == RatioMode::exact) {
    throw ValidationError("exact ratios come from flow tables, not from logged data");
  }
  if (data.empty()) throw ValidationError("empirical ratios need at least one trajectory");
  target.validate();
  behavior.validate();
  const std::size_t layers = data[0].steps.size();
  if (layers == 0) throw ValidationError("empirical ratios: empty trajectory");
  for (const auto& traj : data) {
    if (traj.steps.size() != layers) {
      throw ValidationError("empirical ratios: trajectories have inconsistent lengths");
    }
  }

  QuotientRatioTable table;
  table.mode = mode;
  table.cells.resize(layers);

  long fit_end = static_cast<long>(data.size());
  if (mode == RatioMode::split) {
    if (!(split_fraction > 0.0 && split_fraction < 1.0)) {
      throw ValidationError("split_fraction must lie strictly between 0 and 1");
    }
    fit_end = static_cast<long>(std::ceil(split_fraction * static_cast<double>(data.size())));
    if (fit_end < 1 || fit_end >= static_cast<long>(data.size())) {
      throw ValidationError("split mode needs at least one fit and one evaluation trajectory");
    }
    table.eval_start = fit_end;
  }

  std::shared_ptr<PrefixInterner> interner;
  if (spec.kind == QuotientKind::identity) {
    interner = std::make_shared<PrefixInterner>(static_cast<int>(layers));
  } else {
    spec.validate(target.num_states);
  }

  for (long i = 0; i < fit_end; ++i) {
    const Trajectory& traj = data[static_cast<std::size_t>(i)];
    const std::vector<int> cls = assign_classes(traj, spec, interner.get(), true);
    double prefix = 1.0;
    for (std::size_t t = 0; t < layers; ++t) {
      auto& row = table.cells[t];
      const int c = cls[t];
      if (static_cast<std::size_t>(c) >= row.size()) row.resize(static_cast<std::size_t>(c) + 1);
      row[static_cast<std::size_t>(c)].sum += prefix;
      row[static_cast<std::size_t>(c)].count += 1;
      prefix *= step_ratio(target, behavior, traj.steps[t].state, traj.steps[t].action,
                           static_cast<int>(t));
    }
  }
  table.interner = interner;
  return table;
}

EstimatorMethod parse_estimator_method(const std::string& name) {
  if (name == "ois") return EstimatorMethod::ois;
  if (name == "wis") return EstimatorMethod::wis;
  if (name == "pdis") return EstimatorMethod::pdis;
  if (name == "wpdis") return EstimatorMethod::wpdis;
  if (name == "ff_ois") return EstimatorMethod::ff_ois;
  if (name == "ff_wis") return EstimatorMethod::ff_wis;
  throw ValidationError("unknown estimator method: " + name);
}

std::string estimator_method_name(EstimatorMethod m) {
  switch (m) {
    case EstimatorMethod::ois: return "ois";
    case EstimatorMethod::wis: return "wis";
    case EstimatorMethod::pdis: return "pdis";
    case EstimatorMethod::wpdis: return "wpdis";
    case EstimatorMethod::ff_ois: return "ff_ois";
    case EstimatorMethod::ff_wis: return "ff_wis";
  }
  return "?";
}

EstimateReport estimate_value(const std::vector<Trajectory>& data, EstimatorMethod method,
                              const StochasticPolicy& target, const StochasticPolicy& behavior,
                              double discount, const QuotientSpec* spec,
                              const QuotientRatioTable* ratios) {
  target.validate();
  behavior.validate();
  if (discount <= 0.0 || discount > 1.0) throw ValidationError("estimate_value: discount must lie in (0, 1]");
  const bool is_ff = method == EstimatorMethod::ff_ois || method == EstimatorMethod::ff_wis;
  if (is_ff && (spec == nullptr || ratios == nullptr)) {
    throw ValidationError("forward-flow estimators need a quotient spec and a ratio table");
  }
  if (data.empty()) throw ValidationError("estimate_value: empty dataset");
  const std::size_t horizon = data[0].steps.size();
  for (const auto& traj : data) {
    if (traj.steps.size() != horizon) {
      throw ValidationError("estimate_value: trajectories have inconsistent lengths");
    }
  }

  long start = 0;
  if (is_ff && ratios->mode == RatioMode::split) start = ratios->eval_start;

  EstimateReport report;
  report.method = estimator_method_name(method);

  const bool per_decision = method != EstimatorMethod::ois && method != EstimatorMethod::wis;
  const bool normalized = method == EstimatorMethod::wis || method == EstimatorMethod::wpdis ||
                          method == EstimatorMethod::ff_wis;

  double acc = 0.0;           // ois / pdis / ff_ois accumulator
  double wis_num = 0.0, wis_den = 0.0;
  std::vector<double> num_t(horizon, 0.0), den_t(horizon, 0.0);
  double sum_w = 0.0, sum_w2 = 0.0;
  double min_w = std::numeric_limits<double>::infinity();
  double max_w = -std::numeric_limits<double>::infinity();
  long n_used = 0, n_skipped = 0;

  std::vector<double> rho(horizon), applied(horizon);
  std::vector<double> disc(horizon);
  {
    double d = 1.0;
    for (std::size_t t = 0; t < horizon; ++t) {
      disc[t] = d;
      d *= discount;
    }
  }

  PrefixInterner* interner = nullptr;
  if (is_ff && ratios->interner) interner = const_cast<PrefixInterner*>(ratios->interner.get());

  for (long i = start; i < static_cast<long>(data.size()); ++i) {
    const Trajectory& traj = data[static_cast<std::size_t>(i)];
    for (std::size_t t = 0; t < horizon; ++t) {
      rho[t] = step_ratio(target, behavior, traj.steps[t].state, traj.steps[t].action, static_cast<int>(t));
    }

    bool usable = true;
    if (is_ff) {
      const std::vector<int> cls = assign_classes(traj, *spec, interner, false);
      double prefix = 1.0;
      for (std::size_t t = 0; t < horizon; ++t) {
        double w;
        if (!ratios->ratio_at(static_cast<int>(t), cls[t], prefix, &w)) {
          if (ratios->mode == RatioMode::exact) {
            throw SupportViolation("forward-flow estimate: class " + std::to_string(cls[t]) + " at layer " +
                                   std::to_string(t) + " has zero behavior flow for a logged sample");
          }
          usable = false;
          break;
        }
        applied[t] = w * rho[t];
        prefix *= rho[t];
      }
    } else if (per_decision) {
      double prefix = 1.0;
      for (std::size_t t = 0; t < horizon; ++t) {
        applied[t] = prefix * rho[t];
        prefix *= rho[t];
      }
    } else {
      double full = 1.0;
      for (std::size_t t = 0; t < horizon; ++t) full *= rho[t];
      applied[0] = full;
    }

    if (!usable) {
      ++n_skipped;
      continue;
    }
    ++n_used;

    if (per_decision) {
      double traj_sum = 0.0;
      for (std::size_t t = 0; t < horizon; ++t) {
        const double term = disc[t] * (applied[t] * traj.steps[t].reward);
        traj_sum += term;
        num_t[t] += applied[t] * traj.steps[t].reward;
        den_t[t] += applied[t];
        sum_w += applied[t];
        sum_w2 += applied[t] * applied[t];
        min_w = std::min(min_w, applied[t]);
        max_w = std::max(max_w, applied[t]);
      }
      acc += traj_sum;
    } else {
      const double w = applied[0];
      double g = 0.0;
      for (std::size_t t = 0; t < horizon; ++t) g += disc[t] * traj.steps[t].reward;
      acc += w * g;
      wis_num += w * g;
      wis_den += w;
      sum_w += w;
      sum_w2 += w * w;
      min_w = std::min(min_w, w);
      max_w = std::max(max_w, w);
    }
  }

  if (n_used == 0) throw ValidationError("estimate_value: no usable trajectories");

  switch (method) {
    case EstimatorMethod::ois:
      report.estimate = acc / static_cast<double>(n_used);
      break;
    case EstimatorMethod::wis:
      if (wis_den == 0.0) throw ValidationError("wis: all importance weights are zero");
      report.estimate = wis_num / wis_den;
      break;
    case EstimatorMethod::pdis:
    case EstimatorMethod::ff_ois:
      report.estimate = acc / static_cast<double>(n_used);
      break;
    case EstimatorMethod::wpdis:
    case EstimatorMethod::ff_wis: {
      double est = 0.0;
      for (std::size_t t = 0; t < horizon; ++t) {
        if (den_t[t] != 0.0) est += disc[t] * (num_t[t] / den_t[t]);
      }
      report.estimate = est;
      break;
    }
  }
  (void)normalized;

  report.ess = sum_w2 > 0.0 ? (sum_w * sum_w) / sum_w2 : 0.0;
  report.min_weight = min_w;
  report.max_weight = max_w;
  report.n_used = n_used;
  report.n_skipped = n_skipped;
  return report;
}

double check_sufficiency(const TabularMdp& mdp, const QuotientSpec& spec, const StochasticPolicy& target,
                         const StochasticPolicy& behavior) {
  mdp.validate();
  target.validate();
  behavior.validate();
  if (spec.kind != QuotientKind::abstraction) return 0.0;  // singleton classes collapse nothing
  spec.validate(mdp.num_states);

  const int nc = spec.num_classes(mdp.num_states);
  double worst = 0.0;
  for (int c = 0; c < nc; ++c) {
    std::vector<int> members;
    for (int s = 0; s < mdp.num_states; ++s) {
      if (spec.class_of_state[static_cast<std::size_t>(s)] == c) members.push_back(s);
    }
    for (std::size_t i = 0; i < members.size(); ++i) {
      for (std::size_t j = i + 1; j < members.size(); ++j) {
        const int s1 = members[i], s2 = members[j];
        const auto policy_gap = [&](const StochasticPolicy& p) {
          const int nt = p.layered() ? p.layers : 1;
          double g = 0.0;
          for (int t = 0; t < nt; ++t) {
            for (int a = 0; a < mdp.num_actions; ++a) {
              g = std::max(g, std::abs(p.prob(s1, a, t) - p.prob(s2, a, t)));
            }
          }
          return g;
        };
        worst = std::max(worst, policy_gap(target));
        worst = std::max(worst, policy_gap(behavior));
        for (int a = 0; a < mdp.num_actions; ++a) {
          worst = std::max(worst, std::abs(mdp.r(s1, a) - mdp.r(s2, a)));
          for (int s3 = 0; s3 < mdp.num_states; ++s3) {
            worst = std::max(worst, std::abs(mdp.p(s1, a, s3) - mdp.p(s2, a, s3)));
          }
        }
      }
    }
  }
  return worst;
}

namespace {

void write_columnar(std::ostream& out, const std::vector<ColumnarRow>& rows) {
  out << "layer,class,value,support_count\n";
  for (const auto& r : rows) {
    out << r.layer << ',' << r.cls << ',' << format_real(r.value) << ',' << r.support_count << '\n';
  }
}

}  // namespace

void write_ratio_table(std::ostream& out, const QuotientRatioTable& table) {
  std::vector<ColumnarRow> rows;
  if (table.mode == RatioMode::exact) {
    for (std::size_t t = 0; t < table.exact_ratio.size(); ++t) {
      for (std::size_t c = 0; c < table.exact_ratio[t].size(); ++c) {
        const double v = table.exact_ratio[t][c];
        if (std::isfinite(v)) rows.push_back({static_cast<int>(t), static_cast<int>(c), v, 0});
      }
    }
  } else {
    for (std::size_t t = 0; t < table.cells.size(); ++t) {
      for (std::size_t c = 0; c < table.cells[t].size(); ++c) {
        const auto& cell = table.cells[t][c];
        if (cell.count > 0) {
          rows.push_back({static_cast<int>(t), static_cast<int>(c),
                          cell.sum / static_cast<double>(cell.count), cell.count});
        }
      }
    }
  }
  write_columnar(out, rows);
}

void write_flow_table(std::ostream& out, const FlowTable& table) {
  std::vector<ColumnarRow> rows;
  for (std::size_t t = 0; t < table.flow.size(); ++t) {
    for (std::size_t c = 0; c < table.flow[t].size(); ++c) {
      rows.push_back({static_cast<int>(t), static_cast<int>(c), table.flow[t][c], 0});
    }
  }
  write_columnar(out, rows);
}

std::vector<ColumnarRow> read_columnar_table(std::istream& in) {
  std::vector<ColumnarRow> rows;
  std::string line;
  if (!std::getline(in, line)) throw ValidationError("columnar table: empty input");
  if (line != "layer,class,value,support_count") {
    throw ValidationError("columnar table: unexpected header: " + line);
  }
  long lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    ColumnarRow r{};
    char* end = nullptr;
    const char* p = line.c_str();
    r.layer = static_cast<int>(std::strtol(p, &end, 10));
    if (*end != ',') throw ValidationError("columnar table: bad line " + std::to_string(lineno));
    p = end + 1;
    r.cls = static_cast<int>(std::strtol(p, &end, 10));
    if (*end != ',') throw ValidationError("columnar table: bad line " + std::to_string(lineno));
    p = end + 1;
    r.value = std::strtod(p, &end);
    if (*end != ',') throw ValidationError("columnar table: bad line " + std::to_string(lineno));
    p = end + 1;
    r.support_count = std::strtol(p, &end, 10);
    rows.push_back(r);
  }
  return rows;
}

}  // namespace ffis
