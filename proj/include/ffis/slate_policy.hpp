#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ffis/common.hpp"

namespace ffis {

// Sequential slate policy whose next-item distribution depends on the items
// already picked only through their set. Contexts are integer ids; picked
// sets are catalog bitmasks (item ids below 64). Implementations write a
// full-catalog distribution: exactly zero on picked items, the rest summing
// to one.
class SetSufficientPolicy {
 public:
  virtual ~SetSufficientPolicy() = default;

  virtual int catalog_size() const = 0;
  virtual int num_contexts() const = 0;
  virtual void next_item_dist(int context, std::uint64_t picked_mask, std::span<double> out) const = 0;

  // Fixed-score policies expose their effective logits so sampling shortcuts
  // (perturb-and-top-k) can apply; others return nothing.
  virtual std::optional<std::vector<double>> fixed_scores(int) const { return std::nullopt; }

  void validate_query(int context, std::uint64_t picked_mask) const;
};

// Plackett-Luce over a per-context score vector: the next item is a softmax
// of scores/temperature over the unpicked items. Set-sufficient by
// construction and independent of pick order.
class FixedScorePlPolicy final : public SetSufficientPolicy {
 public:
  FixedScorePlPolicy(std::vector<std::vector<double>> scores, double temperature);

  static FixedScorePlPolicy seeded(int num_contexts, int catalog_size, double score_scale,
                                   double temperature, std::uint64_t seed);

  int catalog_size() const override { return catalog_size_; }
  int num_contexts() const override { return static_cast<int>(scores_.size()); }
  void next_item_dist(int context, std::uint64_t picked_mask, std::span<double> out) const override;
  std::optional<std::vector<double>> fixed_scores(int context) const override;

  double temperature() const { return temperature_; }

 private:
  std::vector<std::vector<double>> scores_;
  int catalog_size_;
  double temperature_;
};

// Plackett-Luce whose logits shift with the picked set:
//   logit(a | x, S) = base(x, a) + interaction_scale * sum_{b in S} I(b, a)
// Still set-sufficient (the sum ignores pick order) but not fixed-score.
class ContextDependentPlPolicy final : public SetSufficientPolicy {
 public:
  ContextDependentPlPolicy(std::vector<std::vector<double>> base, std::vector<double> interactions,
                           double interaction_scale, double temperature);

  static ContextDependentPlPolicy seeded(int num_contexts, int catalog_size, double base_scale,
                                         double interaction_scale, double temperature, std::uint64_t seed);

  int catalog_size() const override { return catalog_size_; }
  int num_contexts() const override { return static_cast<int>(base_.size()); }
  void next_item_dist(int context, std::uint64_t picked_mask, std::span<double> out) const override;

 private:
  std::vector<std::vector<double>> base_;
  std::vector<double> interactions_;  // (b, a) row-major, catalog x catalog
  int catalog_size_;
  double interaction_scale_;
  double temperature_;
};

// Ordered-prefix view of a slate policy: the next-item distribution is allowed
// to depend on the pick order, not just the picked set.
class OrderedSlatePolicy {
 public:
  virtual ~OrderedSlatePolicy() = default;
  virtual int catalog_size() const = 0;
  virtual int num_contexts() const = 0;
  virtual void next_item_dist(int context, std::span<const int> prefix, std::span<double> out) const = 0;
};

// Slate policy that may condition on the pick order, used to probe how far a
// logger strays from set-sufficiency. position_bias = 0 reduces to a
// set-sufficient policy:
//   logit(a | x, s_1..s_j) = base(x, a)
//       + interaction_scale * sum_j (1 + position_bias * j) * I(s_j, a)
class OrderConditionedPolicy final : public OrderedSlatePolicy {
 public:
  OrderConditionedPolicy(std::vector<std::vector<double>> base, std::vector<double> interactions,
                         double interaction_scale, double position_bias, double temperature);

  static OrderConditionedPolicy seeded(int num_contexts, int catalog_size, double base_scale,
                                       double interaction_scale, double position_bias, double temperature,
                                       std::uint64_t seed);

  int catalog_size() const override { return catalog_size_; }
  int num_contexts() const override { return static_cast<int>(base_.size()); }
  void next_item_dist(int context, std::span<const int> prefix, std::span<double> out) const override;

 private:
  std::vector<std::vector<double>> base_;
  std::vector<double> interactions_;
  int catalog_size_;
  double interaction_scale_;
  double position_bias_;
  double temperature_;
};

// Views a set-sufficient policy through the order-conditioned interface.
class AsOrderConditioned final : public OrderedSlatePolicy {
 public:
  explicit AsOrderConditioned(const SetSufficientPolicy& inner) : inner_(inner) {}
  int catalog_size() const override { return inner_.catalog_size(); }
  int num_contexts() const override { return inner_.num_contexts(); }
  void next_item_dist(int context, std::span<const int> prefix, std::span<double> out) const override;

 private:
  const SetSufficientPolicy& inner_;
};

// JSON policy spec loader. Kinds: fixed_score_pl, context_dependent_pl,
// uniform. Scores/interactions come either inline or from a seed.
struct LoadedPolicy {
  std::unique_ptr<SetSufficientPolicy> policy;
  std::string id;  // stable identifier recorded in dataset metadata
};

LoadedPolicy load_slate_policy(const std::string& path);
LoadedPolicy parse_slate_policy(const std::string& json_text, const std::string& id_hint);

}  // namespace ffis
