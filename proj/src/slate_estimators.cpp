#include "ffis/slate_estimators.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

namespace ffis {

namespace {

std::string format_real(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

std::uint64_t SlateRecord::slate_mask() const {
  std::uint64_t m = 0;
  for (int item : order) m |= 1ull << item;
  return m;
}

void LoggedSlateDataset::validate() const {
  if (catalog_size < 1 || catalog_size > 64) throw ValidationError("slate dataset: catalog must be 1..64");
  if (slate_size < 1 || slate_size > catalog_size) {
    throw ValidationError("slate dataset: slate size must be in 1..catalog");
  }
  for (std::size_t i = 0; i < records.size(); ++i) {
    const SlateRecord& r = records[i];
    if (static_cast<int>(r.order.size()) != slate_size) {
      throw ValidationError("slate dataset: record " + std::to_string(i) + " has the wrong slate size");
    }
    std::uint64_t seen = 0;
    for (int item : r.order) {
      if (item < 0 || item >= catalog_size) {
        throw ValidationError("slate dataset: record " + std::to_string(i) + " references item " +
                              std::to_string(item) + " outside the catalog");
      }
      if ((seen >> item) & 1ull) {
        throw ValidationError("slate dataset: record " + std::to_string(i) + " repeats item " +
                              std::to_string(item));
      }
      seen |= 1ull << item;
    }
    if (r.context < 0) throw ValidationError("slate dataset: negative context id");
    if (!std::isfinite(r.reward)) throw ValidationError("slate dataset: non-finite reward");
  }
}

void write_slate_dataset(std::ostream& out, const LoggedSlateDataset& data) {
  out << "{\"catalog_size\":" << data.catalog_size << ",\"slate_size\":" << data.slate_size
      << ",\"behavior\":\"" << data.behavior_id << "\"}\n";
  for (const SlateRecord& r : data.records) {
    out << "{\"context\":" << r.context << ",\"order\":[";
    for (std::size_t i = 0; i < r.order.size(); ++i) {
      if (i) out << ',';
      out << r.order[i];
    }
    out << "],\"reward\":" << format_real(r.reward) << "}\n";
  }
}

void write_slate_dataset_file(const std::string& path, const LoggedSlateDataset& data) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ValidationError("cannot open for writing: " + path);
  write_slate_dataset(f, data);
}

LoggedSlateDataset read_slate_dataset(std::istream& in) {
  LoggedSlateDataset data;
  std::string line;
  if (!std::getline(in, line)) throw ValidationError("slate dataset: missing header line");
  try {
    const nlohmann::json h = nlohmann::json::parse(line);
    data.catalog_size = h.at("catalog_size").get<int>();
    data.slate_size = h.at("slate_size").get<int>();
    data.behavior_id = h.value("behavior", "");
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("slate dataset header: ") + e.what());
  }
  long lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const nlohmann::json j = nlohmann::json::parse(line);
      SlateRecord r;
      r.context = j.at("context").get<int>();
      r.reward = j.at("reward").get<double>();
      for (const auto& v : j.at("order")) r.order.push_back(v.get<int>());
      data.records.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("slate dataset line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  data.validate();
  return data;
}

LoggedSlateDataset read_slate_dataset_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ValidationError("cannot open for reading: " + path);
  return read_slate_dataset(f);
}

namespace {

std::uint64_t reward_key(int context, std::uint64_t mask) {
  // Context in the high bits; catalogs are at most 64 items so masks use all
  // 64, hash the pair instead of packing.
  std::uint64_t h = 1469598103934665603ull;
  const auto mix = [&h](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xFF;
      h *= 1099511628211ull;
    }
  };
  mix(static_cast<std::uint64_t>(context));
  mix(mask);
  return h;
}

}  // namespace

EmpiricalMeanRewardModel::EmpiricalMeanRewardModel(std::span<const SlateRecord> fit_records) {
  if (fit_records.empty()) throw ValidationError("reward model: empty fit split");
  double total = 0.0;
  for (const SlateRecord& r : fit_records) {
    Cell& c = cells_[reward_key(r.context, r.slate_mask())];
    c.sum += r.reward;
    c.count += 1;
    total += r.reward;
  }
  global_mean_ = total / static_cast<double>(fit_records.size());
}

double EmpiricalMeanRewardModel::predict(int context, std::uint64_t slate_mask) const {
  const auto it = cells_.find(reward_key(context, slate_mask));
  if (it == cells_.end()) return global_mean_;
  return (it->second.sum + global_mean_) / static_cast<double>(it->second.count + 1);
}

SlatePropensityCache SlatePropensityCache::build_impl(const SetSufficientPolicy& policy,
                                                      std::span<const SlateRecord> records,
                                                      bool parallel) {
  SlatePropensityCache cache;
  for (const SlateRecord& r : records) {
    cache.keys_.emplace_back(static_cast<std::uint64_t>(r.context), r.slate_mask());
  }
  std::sort(cache.keys_.begin(), cache.keys_.end());
  cache.keys_.erase(std::unique(cache.keys_.begin(), cache.keys_.end()), cache.keys_.end());
  cache.values_.assign(cache.keys_.size(), 0.0);

  const long n = static_cast<long>(cache.keys_.size());
  const auto fill = [&](long i) {
    const auto& [ctx, mask] = cache.keys_[static_cast<std::size_t>(i)];
    std::vector<int> slate;
    for (int a = 0; a < policy.catalog_size(); ++a) {
      if ((mask >> a) & 1ull) slate.push_back(a);
    }
    cache.values_[static_cast<std::size_t>(i)] =
        forward_dp(policy, static_cast<int>(ctx), slate).propensity;
  };
  if (parallel) {
#pragma omp parallel for schedule(dynamic)
    for (long i = 0; i < n; ++i) fill(i);
  } else {
    for (long i = 0; i < n; ++i) fill(i);
  }
  return cache;
}

SlatePropensityCache SlatePropensityCache::build(const SetSufficientPolicy& policy,
                                                 std::span<const SlateRecord> records) {
  return build_impl(policy, records, true);
}

SlatePropensityCache SlatePropensityCache::build_serial(const SetSufficientPolicy& policy,
                                                        std::span<const SlateRecord> records) {
  return build_impl(policy, records, false);
}

double SlatePropensityCache::get(int context, std::uint64_t slate_mask) const {
  const std::pair<std::uint64_t, std::uint64_t> key(static_cast<std::uint64_t>(context), slate_mask);
  const auto it = std::lower_bound(keys_.begin(), keys_.end(), key);
  if (it == keys_.end() || *it != key) {
    throw ValidationError("propensity cache: unknown (context, slate) key");
  }
  return values_[static_cast<std::size_t>(it - keys_.begin())];
}

std::optional<double> tree_weight(const SetSufficientPolicy& target, const SetSufficientPolicy& behavior,
                                  const SlateRecord& record) {
  std::vector<double> dist_t(static_cast<std::size_t>(target.catalog_size()));
  std::vector<double> dist_b(static_cast<std::size_t>(behavior.catalog_size()));
  std::uint64_t picked = 0;
  double ratio = 1.0;
  for (std::size_t t = 0; t < record.order.size(); ++t) {
    const int item = record.order[t];
    target.next_item_dist(record.context, picked, dist_t);
    behavior.next_item_dist(record.context, picked, dist_b);
    const double pb = dist_b[static_cast<std::size_t>(item)];
    const double pt = dist_t[static_cast<std::size_t>(item)];
    if (pb <= 0.0) {
      if (pt > 0.0) {
        throw SupportViolation("tree weight: behavior probability vanishes at position " +
                               std::to_string(t) + " for item " + std::to_string(item) +
                               " while the target probability is positive");
      }
      return std::nullopt;
    }
    ratio *= pt / pb;
    picked |= 1ull << item;
  }
  return ratio;
}

std::optional<double> ff_weight(const SetSufficientPolicy& target, const SetSufficientPolicy& behavior,
                                const SlateRecord& record, const SlatePropensityCache* target_cache,
                                const SlatePropensityCache* behavior_cache) {
  const std::uint64_t mask = record.slate_mask();
  std::vector<int> slate(record.order);
  std::sort(slate.begin(), slate.end());
  const double fp = target_cache ? target_cache->get(record.context, mask)
                                 : forward_dp(target, record.context, slate).propensity;
  const double fb = behavior_cache ? behavior_cache->get(record.context, mask)
                                   : forward_dp(behavior, record.context, slate).propensity;
  if (fb <= 0.0) {
    if (fp > 0.0) {
      throw SupportViolation("forward-flow weight: behavior propensity vanishes for a slate the target "
                             "can produce");
    }
    return std::nullopt;
  }
  return fp / fb;
}

std::optional<double> dp_mpl_weight(const LatticeFlows& target_flows, const LatticeFlows& behavior_flows,
                                    std::uint64_t slate_mask) {
  double ratio = 1.0;
  for (int a = 0; a < target_flows.catalog_size; ++a) {
    if (!((slate_mask >> a) & 1ull)) continue;
    const double mb = behavior_flows.inclusion_marginals[static_cast<std::size_t>(a)];
    const double mt = target_flows.inclusion_marginals[static_cast<std::size_t>(a)];
    if (mb <= 0.0) {
      if (mt > 0.0) {
        throw SupportViolation("marginal weight: behavior never includes item " + std::to_string(a) +
                               " while the target does");
      }
      return std::nullopt;
    }
    ratio *= mt / mb;
  }
  return ratio;
}

std::optional<double> dp_opcb_weight(const LatticeFlows& target_flows, const LatticeFlows& behavior_flows,
                                     std::uint64_t slate_mask,
                                     const std::function<std::int64_t(std::uint64_t)>& class_fn) {
  if (!class_fn) throw ValidationError("class-probability weight: no class function supplied");
  const std::int64_t cls = class_fn(slate_mask);
  // Normalized by the level total so the masses form a distribution over
  // classes; a class covering the whole level then weighs exactly one.
  const auto class_mass = [&](const LatticeFlows& lat) {
    double mass = 0.0;
    double total = 0.0;
    for (const auto& [mask, f] : lat.levels[static_cast<std::size_t>(lat.slate_size)]) {
      total += f;
      if (class_fn(mask) == cls) mass += f;
    }
    return total > 0.0 ? mass / total : 0.0;
  };
  const double pb = class_mass(behavior_flows);
  const double pt = class_mass(target_flows);
  if (pb <= 0.0) {
    if (pt > 0.0) {
      throw SupportViolation("class-probability weight: behavior class mass vanishes while the target "
                             "class mass is positive");
    }
    return std::nullopt;
  }
  return pt / pb;
}

SlateMethod parse_slate_method(const std::string& name) {
  if (name == "tree_ois") return SlateMethod::tree_ois;
  if (name == "tree_wis") return SlateMethod::tree_wis;
  if (name == "ff_ois") return SlateMethod::ff_ois;
  if (name == "ff_wis") return SlateMethod::ff_wis;
  if (name == "tree_dr") return SlateMethod::tree_dr;
  if (name == "ff_dr") return SlateMethod::ff_dr;
  if (name == "dm") return SlateMethod::dm;
  if (name == "dp_mpl_ois") return SlateMethod::dp_mpl_ois;
  if (name == "dp_mpl_wis") return SlateMethod::dp_mpl_wis;
  if (name == "dp_opcb_ois") return SlateMethod::dp_opcb_ois;
  if (name == "dp_opcb_dr") return SlateMethod::dp_opcb_dr;
  throw ValidationError("unknown slate method: " + name);
}

std::string slate_method_name(SlateMethod m) {
  switch (m) {
    case SlateMethod::tree_ois: return "tree_ois";
    case SlateMethod::tree_wis: return "tree_wis";
    case SlateMethod::ff_ois: return "ff_ois";
    case SlateMethod::ff_wis: return "ff_wis";
    case SlateMethod::tree_dr: return "tree_dr";
    case SlateMethod::ff_dr: return "ff_dr";
    case SlateMethod::dm: return "dm";
    case SlateMethod::dp_mpl_ois: return "dp_mpl_ois";
    case SlateMethod::dp_mpl_wis: return "dp_mpl_wis";
    case SlateMethod::dp_opcb_ois: return "dp_opcb_ois";
    case SlateMethod::dp_opcb_dr: return "dp_opcb_dr";
  }
  return "?";
}

double direct_method_value(const LatticeFlows& target_flows, const SlateRewardModel& model, int context) {
  double value = 0.0;
  for (const auto& [mask, f] : target_flows.levels[static_cast<std::size_t>(target_flows.slate_size)]) {
    if (f != 0.0) value += f * model.predict(context, mask);
  }
  return value;
}

SlateEstimatorReport estimate_slate_value(const LoggedSlateDataset& data, SlateMethod method,
                                          const SetSufficientPolicy& target,
                                          const SetSufficientPolicy& behavior,
                                          const SlateEstimateOptions& opts) {
  data.validate();
  if (target.catalog_size() != data.catalog_size || behavior.catalog_size() != data.catalog_size) {
    throw ValidationError("estimate_slate_value: policy catalog does not match the dataset");
  }
  if (data.records.empty()) throw ValidationError("estimate_slate_value: empty dataset");

  const bool needs_ff = method == SlateMethod::ff_ois || method == SlateMethod::ff_wis ||
                        method == SlateMethod::ff_dr;
  const bool needs_dm = method == SlateMethod::tree_dr || method == SlateMethod::ff_dr ||
                        method == SlateMethod::dm || method == SlateMethod::dp_opcb_dr;
  const bool needs_lattice = method == SlateMethod::dp_mpl_ois || method == SlateMethod::dp_mpl_wis ||
                             method == SlateMethod::dp_opcb_ois || method == SlateMethod::dp_opcb_dr;
  const bool needs_class = method == SlateMethod::dp_opcb_ois || method == SlateMethod::dp_opcb_dr;
  const bool weighted = method != SlateMethod::dm;
  const bool normalized = method == SlateMethod::tree_wis || method == SlateMethod::ff_wis ||
                          method == SlateMethod::dp_mpl_wis;

  if (needs_dm && opts.reward_model == nullptr) {
    throw ValidationError(slate_method_name(method) + " needs a reward model");
  }
  if (needs_class && !opts.class_fn) {
    throw ValidationError(slate_method_name(method) + " needs a class function");
  }

  // Sequential pre-pass: caches are immutable before the per-record loop.
  std::optional<SlatePropensityCache> target_cache, behavior_cache;
  if (needs_ff) {
    target_cache = SlatePropensityCache::build(target, data.records);
    behavior_cache = SlatePropensityCache::build(behavior, data.records);
  }
  std::map<int, LatticeFlows> target_lat, behavior_lat;
  if (needs_dm || needs_lattice) {
    for (const SlateRecord& r : data.records) {
      if ((needs_dm || needs_lattice) && !target_lat.count(r.context)) {
        target_lat.emplace(r.context,
                           full_lattice_flows(target, r.context, data.slate_size, opts.lattice_budget));
      }
      if (needs_lattice && !behavior_lat.count(r.context)) {
        behavior_lat.emplace(r.context,
                             full_lattice_flows(behavior, r.context, data.slate_size, opts.lattice_budget));
      }
    }
  }

  enum class Status : unsigned char { ok, excluded, violation };
  const long n = static_cast<long>(data.records.size());
  std::vector<double> weights(static_cast<std::size_t>(n), 0.0);
  std::vector<Status> status(static_cast<std::size_t>(n), Status::ok);
  std::vector<std::string> messages(static_cast<std::size_t>(n));

  const auto compute_weight = [&](long i) {
    const SlateRecord& r = data.records[static_cast<std::size_t>(i)];
    std::optional<double> w(1.0);
    switch (method) {
      case SlateMethod::dm:
        break;
      case SlateMethod::tree_ois:
      case SlateMethod::tree_wis:
      case SlateMethod::tree_dr:
        w = tree_weight(target, behavior, r);
        break;
      case SlateMethod::ff_ois:
      case SlateMethod::ff_wis:
      case SlateMethod::ff_dr:
        w = ff_weight(target, behavior, r, &*target_cache, &*behavior_cache);
        break;
      case SlateMethod::dp_mpl_ois:
      case SlateMethod::dp_mpl_wis:
        w = dp_mpl_weight(target_lat.at(r.context), behavior_lat.at(r.context), r.slate_mask());
        break;
      case SlateMethod::dp_opcb_ois:
      case SlateMethod::dp_opcb_dr:
        w = dp_opcb_weight(target_lat.at(r.context), behavior_lat.at(r.context), r.slate_mask(),
                           opts.class_fn);
        break;
    }
    if (w.has_value()) {
      weights[static_cast<std::size_t>(i)] = *w;
    } else {
      status[static_cast<std::size_t>(i)] = Status::excluded;
    }
  };

  // tree/ff weights are pure given the frozen caches; exceptions cannot cross
  // the parallel region, so violations are recorded and re-raised in order.
#pragma omp parallel for schedule(static)
  for (long i = 0; i < n; ++i) {
    try {
      compute_weight(i);
    } catch (const SupportViolation& e) {
      status[static_cast<std::size_t>(i)] = Status::violation;
      messages[static_cast<std::size_t>(i)] = e.what();
    }
  }

  SlateEstimatorReport report;
  report.method = slate_method_name(method);
  double acc = 0.0, num = 0.0, den = 0.0;
  double sum_w = 0.0, sum_w2 = 0.0;
  double min_w = std::numeric_limits<double>::infinity();
  double max_w = -std::numeric_limits<double>::infinity();

  for (long i = 0; i < n; ++i) {
    const SlateRecord& r = data.records[static_cast<std::size_t>(i)];
    if (status[static_cast<std::size_t>(i)] == Status::violation) {
      if (!opts.permissive) throw SupportViolation(messages[static_cast<std::size_t>(i)]);
      ++report.n_skipped_support;
      continue;
    }
    if (status[static_cast<std::size_t>(i)] == Status::excluded) {
      ++report.n_skipped_support;
      continue;
    }
    ++report.n_used;
    const double w = weights[static_cast<std::size_t>(i)];
    double contribution = 0.0;
    if (method == SlateMethod::dm) {
      contribution = direct_method_value(target_lat.at(r.context), *opts.reward_model, r.context);
    } else if (needs_dm) {
      const double dm = direct_method_value(target_lat.at(r.context), *opts.reward_model, r.context);
      contribution = dm + w * (r.reward - opts.reward_model->predict(r.context, r.slate_mask()));
    } else {
      contribution = w * r.reward;
    }
    acc += contribution;
    num += w * r.reward;
    den += w;
    sum_w += w;
    sum_w2 += w * w;
    min_w = std::min(min_w, w);
    max_w = std::max(max_w, w);
  }

  if (report.n_used == 0) throw ValidationError("estimate_slate_value: no usable records");

  if (normalized) {
    if (den == 0.0) throw ValidationError(slate_method_name(method) + ": all weights are zero");
    report.estimate = num / den;
  } else {
    report.estimate = acc / static_cast<double>(report.n_used);
  }
  report.ess = sum_w2 > 0.0 ? (sum_w * sum_w) / sum_w2 : 0.0;
  report.min_weight = weighted ? min_w : 1.0;
  report.max_weight = weighted ? max_w : 1.0;
  return report;
}

}  // namespace ffis
