#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "ffis/forward_dp.hpp"
#include "ffis/slate_policy.hpp"

namespace ffis {

struct SlateRecord {
  int context = 0;
  std::vector<int> order;  // items as shown, in display order
  double reward = 0.0;

  std::uint64_t slate_mask() const;
};

struct LoggedSlateDataset {
  int catalog_size = 0;
  int slate_size = 0;
  std::string behavior_id;
  std::vector<SlateRecord> records;

  void validate() const;  // distinct items, exact slate size, items in range
};

// Line-delimited: one metadata header line, then one record per line. Reals
// round-trip bit-exactly.
void write_slate_dataset(std::ostream& out, const LoggedSlateDataset& data);
void write_slate_dataset_file(const std::string& path, const LoggedSlateDataset& data);
LoggedSlateDataset read_slate_dataset(std::istream& in);
LoggedSlateDataset read_slate_dataset_file(const std::string& path);

class SlateRewardModel {
 public:
  virtual ~SlateRewardModel() = default;
  virtual double predict(int context, std::uint64_t slate_mask) const = 0;
  virtual std::string provenance() const = 0;
};

class OracleRewardModel final : public SlateRewardModel {
 public:
  explicit OracleRewardModel(std::function<double(int, std::uint64_t)> fn) : fn_(std::move(fn)) {}
  double predict(int context, std::uint64_t slate_mask) const override { return fn_(context, slate_mask); }
  std::string provenance() const override { return "fixed"; }

 private:
  std::function<double(int, std::uint64_t)> fn_;
};

// Per-(context, slate) empirical mean shrunk toward the global mean with one
// pseudo-observation; unseen slates fall back to the global mean.
class EmpiricalMeanRewardModel final : public SlateRewardModel {
 public:
  explicit EmpiricalMeanRewardModel(std::span<const SlateRecord> fit_records);
  double predict(int context, std::uint64_t slate_mask) const override;
  std::string provenance() const override { return "fitted_on_split"; }

 private:
  struct Cell {
    double sum = 0.0;
    long count = 0;
  };
  std::unordered_map<std::uint64_t, Cell> cells_;  // key mixes context and mask
  double global_mean_ = 0.0;
};

// Immutable per-policy table of slate propensities for every distinct
// (context, slate) in a record span. Key discovery is sequential; the
// forward-dp fills are independent per key, so the parallel build is
// bit-identical to the serial one.
class SlatePropensityCache {
 public:
  static SlatePropensityCache build(const SetSufficientPolicy& policy,
                                    std::span<const SlateRecord> records);
  static SlatePropensityCache build_serial(const SetSufficientPolicy& policy,
                                           std::span<const SlateRecord> records);

  double get(int context, std::uint64_t slate_mask) const;  // every dataset key is present
  std::size_t size() const { return keys_.size(); }

 private:
  std::vector<std::pair<std::uint64_t, std::uint64_t>> keys_;  // (context, mask), ascending
  std::vector<double> values_;

  static SlatePropensityCache build_impl(const SetSufficientPolicy& policy,
                                         std::span<const SlateRecord> records, bool parallel);
};

// Importance weights for one logged slate. Empty optionals mean the record
// is unproducible under both policies and must be excluded; a zero behavior
// probability against positive target mass throws SupportViolation.
std::optional<double> tree_weight(const SetSufficientPolicy& target, const SetSufficientPolicy& behavior,
                                  const SlateRecord& record);
std::optional<double> ff_weight(const SetSufficientPolicy& target, const SetSufficientPolicy& behavior,
                                const SlateRecord& record, const SlatePropensityCache* target_cache = nullptr,
                                const SlatePropensityCache* behavior_cache = nullptr);
// Product of per-item inclusion-marginal ratios. Cheap but biased whenever
// item inclusions are correlated; exact for single-item slates.
std::optional<double> dp_mpl_weight(const LatticeFlows& target_flows, const LatticeFlows& behavior_flows,
                                    std::uint64_t slate_mask);
// Ratio of class probabilities under a user labeling of slates. The identity
// labeling recovers ff_weight; a constant labeling collapses to one.
std::optional<double> dp_opcb_weight(const LatticeFlows& target_flows, const LatticeFlows& behavior_flows,
                                     std::uint64_t slate_mask,
                                     const std::function<std::int64_t(std::uint64_t)>& class_fn);

enum class SlateMethod {
  tree_ois,
  tree_wis,
  ff_ois,
  ff_wis,
  tree_dr,
  ff_dr,
  dm,
  dp_mpl_ois,
  dp_mpl_wis,
  dp_opcb_ois,
  dp_opcb_dr,
};

SlateMethod parse_slate_method(const std::string& name);
std::string slate_method_name(SlateMethod m);

struct SlateEstimateOptions {
  bool permissive = false;  // count support violations as skips instead of throwing
  long lattice_budget = 200000;
  const SlateRewardModel* reward_model = nullptr;           // required by *_dr and dm
  std::function<std::int64_t(std::uint64_t)> class_fn;      // required by dp_opcb_*
};

struct SlateEstimatorReport {
  std::string method;
  double estimate = 0.0;
  double ess = 0.0;
  double min_weight = 0.0;
  double max_weight = 0.0;
  long n_used = 0;
  long n_skipped_support = 0;  // n_used + n_skipped_support == record count
};

SlateEstimatorReport estimate_slate_value(const LoggedSlateDataset& data, SlateMethod method,
                                          const SetSufficientPolicy& target,
                                          const SetSufficientPolicy& behavior,
                                          const SlateEstimateOptions& opts = {});

// Direct-method value of the target policy at one context: the lattice
// flow-weighted sum of predicted rewards over all size-K slates.
double direct_method_value(const LatticeFlows& target_flows, const SlateRewardModel& model, int context);

}  // namespace ffis
