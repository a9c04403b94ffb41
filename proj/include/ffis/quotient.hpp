#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "ffis/mdp.hpp"

namespace ffis {

// How pre-action histories are grouped at each decision step.
//   identity:   every distinct history is its own class (ids interned)
//   state_time: histories sharing the current state collapse
//   abstraction: histories collapse through a user state labeling
enum class QuotientKind { identity, state_time, abstraction };

QuotientKind parse_quotient_kind(const std::string& name);

struct QuotientSpec {
  QuotientKind kind = QuotientKind::state_time;
  std::vector<int> class_of_state;  // abstraction only; ids contiguous from 0

  int num_classes(int num_states) const;
  void validate(int num_states) const;
};

// Interns full pre-action histories layer by layer. A history's id at layer
// t is determined by (id at t-1, a_{t-1}, r_{t-1} bits, s_t), so equal ids
// mean equal histories. Ids are contiguous per layer in first-seen order.
class PrefixInterner {
 public:
  explicit PrefixInterner(int layers);

  std::vector<int> assign(const Trajectory& traj);        // inserts unseen prefixes
  std::vector<int> lookup(const Trajectory& traj) const;  // unseen -> -1 from that layer on
  int classes_at(int layer) const;
  int layers() const { return static_cast<int>(maps_.size()); }

 private:
  struct Key {
    int prev;
    int action;
    std::uint64_t reward_bits;
    int state;
    bool operator==(const Key&) const = default;
  };
  struct KeyHash {
    std::size_t operator()(const Key& k) const;
  };
  std::vector<std::unordered_map<Key, int, KeyHash>> maps_;

  std::vector<int> map_impl(const Trajectory& traj, bool insert);
  friend class QuotientRatioTable;
};

// Class labels of a trajectory's pre-action histories, one per layer. The
// identity kind requires an interner; pass insert=false to look up against a
// frozen one (unseen prefixes yield -1).
std::vector<int> assign_classes(const Trajectory& traj, const QuotientSpec& spec,
                                PrefixInterner* interner = nullptr, bool insert = true);

// Occupancy of each class per layer under one policy. Rows sum to 1.
struct FlowTable {
  std::vector<std::vector<double>> flow;  // [layer][class]

  int layers() const { return static_cast<int>(flow.size()); }
  void validate() const;  // layer sums within 1e-9 of 1
};

// Exact class occupancies by propagating state marginals. The identity kind
// has no enumerable class space and is rejected.
FlowTable exact_flows(const TabularMdp& mdp, const StochasticPolicy& policy, const QuotientSpec& spec);

enum class RatioMode { exact, pooled, split, leave_one_out };

RatioMode parse_ratio_mode(const std::string& name);

// Per-(layer, class) estimates of the mean prefix likelihood ratio. In exact
// mode the entry is a flow ratio; in the empirical modes it is an average of
// observed prefix ratios (leave_one_out subtracts the caller's own term).
class QuotientRatioTable {
 public:
  RatioMode mode = RatioMode::pooled;
  long eval_start = 0;  // split mode: index of the first evaluation trajectory

  struct Cell {
    double sum = 0.0;
    long count = 0;
  };

  // Empirical payload, dense per layer. Exact mode fills ratio_ / supported_.
  std::vector<std::vector<Cell>> cells;
  std::vector<std::vector<double>> exact_ratio;
  std::shared_ptr<const PrefixInterner> interner;  // identity quotients only

  int layers() const;
  long support_count(int layer, int cls) const;

  // Mean ratio for a class; own_rho is subtracted in leave_one_out mode.
  // Returns false when the class cannot be scored (never seen, singleton in
  // leave_one_out, or zero behavior flow in exact mode).
  bool ratio_at(int layer, int cls, double own_rho, double* out) const;
};

QuotientRatioTable exact_ratio_table(const FlowTable& target_flows, const FlowTable& behavior_flows);

// Fits ratio cells from logged trajectories. split mode fits on the first
// ceil(split_fraction * n) trajectories and marks the rest for evaluation;
// the other modes fit on everything.
QuotientRatioTable empirical_quotient_ratio(const std::vector<Trajectory>& data, const QuotientSpec& spec,
                                            const StochasticPolicy& target,
                                            const StochasticPolicy& behavior, RatioMode mode,
                                            double split_fraction = 0.5);

enum class EstimatorMethod { ois, wis, pdis, wpdis, ff_ois, ff_wis };

EstimatorMethod parse_estimator_method(const std::string& name);
std::string estimator_method_name(EstimatorMethod m);

struct EstimateReport {
  std::string method;
  double estimate = 0.0;
  double ess = 0.0;  // (sum w)^2 / sum w^2 over applied weights
  double min_weight = 0.0;
  double max_weight = 0.0;
  long n_used = 0;
  long n_skipped = 0;  // unsupported classes / leave-one-out singletons
};

// Off-policy value estimate on logged trajectories. The ff_* methods need a
// quotient spec and ratio table; trajectory-level methods ignore them. For
// per-decision methods the weight diagnostics cover each applied per-step
// weight; for trajectory-level methods they cover the episode weights. In
// split mode only the evaluation half enters the estimate; fit trajectories
// are not counted in n_used or n_skipped.
EstimateReport estimate_value(const std::vector<Trajectory>& data, EstimatorMethod method,
                              const StochasticPolicy& target, const StochasticPolicy& behavior,
                              double discount, const QuotientSpec* spec = nullptr,
                              const QuotientRatioTable* ratios = nullptr);

// Largest sup-norm discrepancy between same-class states across target rows,
// behavior rows, mean rewards, and transition rows. Zero means the grouping
// is lossless for these dynamics and policies.
double check_sufficiency(const TabularMdp& mdp, const QuotientSpec& spec, const StochasticPolicy& target,
                         const StochasticPolicy& behavior);

// Columnar text serialization shared by ratio and flow tables:
// layer,class,value,support_count (support is 0 where not applicable).
struct ColumnarRow {
  int layer;
  int cls;
  double value;
  long support_count;
};

void write_ratio_table(std::ostream& out, const QuotientRatioTable& table);
void write_flow_table(std::ostream& out, const FlowTable& table);
std::vector<ColumnarRow> read_columnar_table(std::istream& in);

}  // namespace ffis
