#include "ffis/slate_policy.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ffis/rng.hpp"

namespace ffis {

namespace {

void check_shape(int num_contexts, int catalog_size) {
  if (num_contexts < 1) throw ValidationError("slate policy: need at least one context");
  if (catalog_size < 1) throw ValidationError("slate policy: need at least one catalog item");
  if (catalog_size > 64) throw ValidationError("slate policy: catalog is limited to 64 items");
}

// Masked softmax of logits/temperature over unpicked items, written into a
// full-catalog buffer with exact zeros on picked entries.
void masked_softmax(std::span<const double> logits, double temperature, std::uint64_t picked_mask,
                    std::span<double> out) {
  const int m = static_cast<int>(logits.size());
  double mx = -std::numeric_limits<double>::infinity();
  for (int a = 0; a < m; ++a) {
    if ((picked_mask >> a) & 1ull) continue;
    mx = std::max(mx, logits[static_cast<std::size_t>(a)]);
  }
  if (mx == -std::numeric_limits<double>::infinity()) {
    throw ValidationError("slate policy: every catalog item is already picked");
  }
  double sum = 0.0;
  for (int a = 0; a < m; ++a) {
    if ((picked_mask >> a) & 1ull) {
      out[static_cast<std::size_t>(a)] = 0.0;
    } else {
      const double e = std::exp((logits[static_cast<std::size_t>(a)] - mx) / temperature);
      out[static_cast<std::size_t>(a)] = e;
      sum += e;
    }
  }
  for (int a = 0; a < m; ++a) {
    if (!((picked_mask >> a) & 1ull)) out[static_cast<std::size_t>(a)] /= sum;
  }
}

std::vector<std::vector<double>> seeded_matrix(int rows, int cols, double scale, std::uint64_t seed,
                                               std::uint64_t stream) {
  std::vector<std::vector<double>> m(static_cast<std::size_t>(rows),
                                     std::vector<double>(static_cast<std::size_t>(cols)));
  CounterRng rng(seed, stream);
  for (auto& row : m) {
    for (double& v : row) v = scale * rng.uniform(-1.0, 1.0);
  }
  return m;
}

}  // namespace

void SetSufficientPolicy::validate_query(int context, std::uint64_t picked_mask) const {
  if (context < 0 || context >= num_contexts()) {
    throw ValidationError("slate policy: context " + std::to_string(context) + " out of range");
  }
  const int m = catalog_size();
  if (m < 64 && (picked_mask >> m) != 0) {
    throw ValidationError("slate policy: picked mask references items beyond the catalog");
  }
}

FixedScorePlPolicy::FixedScorePlPolicy(std::vector<std::vector<double>> scores, double temperature)
    : scores_(std::move(scores)), temperature_(temperature) {
  if (scores_.empty()) throw ValidationError("fixed-score policy: empty score table");
  catalog_size_ = static_cast<int>(scores_[0].size());
  check_shape(static_cast<int>(scores_.size()), catalog_size_);
  if (!(temperature_ > 0.0)) throw ValidationError("fixed-score policy: temperature must be > 0");
  for (const auto& row : scores_) {
    if (static_cast<int>(row.size()) != catalog_size_) {
      throw ValidationError("fixed-score policy: ragged score table");
    }
    for (double v : row) {
      if (!std::isfinite(v)) throw ValidationError("fixed-score policy: non-finite score");
    }
  }
}

FixedScorePlPolicy FixedScorePlPolicy::seeded(int num_contexts, int catalog_size, double score_scale,
                                              double temperature, std::uint64_t seed) {
  check_shape(num_contexts, catalog_size);
  return FixedScorePlPolicy(seeded_matrix(num_contexts, catalog_size, score_scale, seed, 0), temperature);
}

void FixedScorePlPolicy::next_item_dist(int context, std::uint64_t picked_mask,
                                        std::span<double> out) const {
  validate_query(context, picked_mask);
  masked_softmax(scores_[static_cast<std::size_t>(context)], temperature_, picked_mask, out);
}

std::optional<std::vector<double>> FixedScorePlPolicy::fixed_scores(int context) const {
  validate_query(context, 0);
  std::vector<double> logits = scores_[static_cast<std::size_t>(context)];
  for (double& v : logits) v /= temperature_;
  return logits;
}

ContextDependentPlPolicy::ContextDependentPlPolicy(std::vector<std::vector<double>> base,
                                                   std::vector<double> interactions,
                                                   double interaction_scale, double temperature)
    : base_(std::move(base)),
      interactions_(std::move(interactions)),
      interaction_scale_(interaction_scale),
      temperature_(temperature) {
  if (base_.empty()) throw ValidationError("context-dependent policy: empty base table");
  catalog_size_ = static_cast<int>(base_[0].size());
  check_shape(static_cast<int>(base_.size()), catalog_size_);
  if (!(temperature_ > 0.0)) throw ValidationError("context-dependent policy: temperature must be > 0");
  if (interactions_.size() != static_cast<std::size_t>(catalog_size_) * catalog_size_) {
    throw ValidationError("context-dependent policy: interaction matrix must be catalog x catalog");
  }
  for (const auto& row : base_) {
    if (static_cast<int>(row.size()) != catalog_size_) {
      throw ValidationError("context-dependent policy: ragged base table");
    }
  }
}

ContextDependentPlPolicy ContextDependentPlPolicy::seeded(int num_contexts, int catalog_size,
                                                          double base_scale, double interaction_scale,
                                                          double temperature, std::uint64_t seed) {
  check_shape(num_contexts, catalog_size);
  auto inter = seeded_matrix(catalog_size, catalog_size, 1.0, seed, 1);
  std::vector<double> flat;
  flat.reserve(static_cast<std::size_t>(catalog_size) * catalog_size);
  for (const auto& row : inter) flat.insert(flat.end(), row.begin(), row.end());
  return ContextDependentPlPolicy(seeded_matrix(num_contexts, catalog_size, base_scale, seed, 0),
                                  std::move(flat), interaction_scale, temperature);
}

void ContextDependentPlPolicy::next_item_dist(int context, std::uint64_t picked_mask,
                                              std::span<double> out) const {
  validate_query(context, picked_mask);
  const auto& base = base_[static_cast<std::size_t>(context)];
  std::vector<double> logits(static_cast<std::size_t>(catalog_size_));
  for (int a = 0; a < catalog_size_; ++a) {
    double shift = 0.0;
    for (int b = 0; b < catalog_size_; ++b) {
      if ((picked_mask >> b) & 1ull) {
        shift += interactions_[static_cast<std::size_t>(b) * catalog_size_ + a];
      }
    }
    logits[static_cast<std::size_t>(a)] = base[static_cast<std::size_t>(a)] + interaction_scale_ * shift;
  }
  masked_softmax(logits, temperature_, picked_mask, out);
}

OrderConditionedPolicy::OrderConditionedPolicy(std::vector<std::vector<double>> base,
                                               std::vector<double> interactions, double interaction_scale,
                                               double position_bias, double temperature)
    : base_(std::move(base)),
      interactions_(std::move(interactions)),
      interaction_scale_(interaction_scale),
      position_bias_(position_bias),
      temperature_(temperature) {
  if (base_.empty()) throw ValidationError("order-conditioned policy: empty base table");
  catalog_size_ = static_cast<int>(base_[0].size());
  check_shape(static_cast<int>(base_.size()), catalog_size_);
  if (!(temperature_ > 0.0)) throw ValidationError("order-conditioned policy: temperature must be > 0");
  if (interactions_.size() != static_cast<std::size_t>(catalog_size_) * catalog_size_) {
    throw ValidationError("order-conditioned policy: interaction matrix must be catalog x catalog");
  }
}

OrderConditionedPolicy OrderConditionedPolicy::seeded(int num_contexts, int catalog_size, double base_scale,
                                                      double interaction_scale, double position_bias,
                                                      double temperature, std::uint64_t seed) {
  check_shape(num_contexts, catalog_size);
  auto inter = seeded_matrix(catalog_size, catalog_size, 1.0, seed, 1);
  std::vector<double> flat;
  flat.reserve(static_cast<std::size_t>(catalog_size) * catalog_size);
  for (const auto& row : inter) flat.insert(flat.end(), row.begin(), row.end());
  return OrderConditionedPolicy(seeded_matrix(num_contexts, catalog_size, base_scale, seed, 0),
                                std::move(flat), interaction_scale, position_bias, temperature);
}

void OrderConditionedPolicy::next_item_dist(int context, std::span<const int> prefix,
                                            std::span<double> out) const {
  if (context < 0 || context >= num_contexts()) {
    throw ValidationError("order-conditioned policy: context out of range");
  }
  std::uint64_t picked = 0;
  for (int item : prefix) {
    if (item < 0 || item >= catalog_size_) {
      throw ValidationError("order-conditioned policy: prefix item out of range");
    }
    if ((picked >> item) & 1ull) throw ValidationError("order-conditioned policy: repeated prefix item");
    picked |= 1ull << item;
  }
  const auto& base = base_[static_cast<std::size_t>(context)];
  std::vector<double> logits(static_cast<std::size_t>(catalog_size_));
  for (int a = 0; a < catalog_size_; ++a) {
    double shift = 0.0;
    for (std::size_t j = 0; j < prefix.size(); ++j) {
      shift += (1.0 + position_bias_ * static_cast<double>(j)) *
               interactions_[static_cast<std::size_t>(prefix[j]) * catalog_size_ + a];
    }
    logits[static_cast<std::size_t>(a)] = base[static_cast<std::size_t>(a)] + interaction_scale_ * shift;
  }
  masked_softmax(logits, temperature_, picked, out);
}

void AsOrderConditioned::next_item_dist(int context, std::span<const int> prefix,
                                        std::span<double> out) const {
  std::uint64_t picked = 0;
  for (int item : prefix) picked |= 1ull << item;
  inner_.next_item_dist(context, picked, out);
}

namespace {

std::vector<std::vector<double>> matrix_from_json(const nlohmann::json& j, const char* what) {
  std::vector<std::vector<double>> m;
  if (!j.is_array() || j.empty()) throw ValidationError(std::string(what) + " must be a non-empty array");
  for (const auto& row : j) {
    if (!row.is_array()) throw ValidationError(std::string(what) + " rows must be arrays");
    m.emplace_back();
    for (const auto& v : row) m.back().push_back(v.get<double>());
  }
  return m;
}

void reject_unknown_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : allowed) {
      if (it.key() == k) {
        ok = true;
        break;
      }
    }
    if (!ok) throw ValidationError("policy spec: unknown key '" + it.key() + "'");
  }
}

}  // namespace

LoadedPolicy parse_slate_policy(const std::string& json_text, const std::string& id_hint) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("policy spec: ") + e.what());
  }
  if (!j.is_object() || !j.contains("kind")) throw ValidationError("policy spec: missing 'kind'");
  const std::string kind = j["kind"].get<std::string>();
  LoadedPolicy out;
  out.id = id_hint.empty() ? kind : id_hint;

  const auto get_or = [&](const char* key, double dflt) {
    return j.contains(key) ? j[key].get<double>() : dflt;
  };

  if (kind == "fixed_score_pl" || kind == "uniform") {
    reject_unknown_keys(j, {"kind", "temperature", "scores", "num_contexts", "catalog_size", "score_scale",
                            "seed"});
    const double temperature = get_or("temperature", 1.0);
    if (j.contains("scores")) {
      out.policy = std::make_unique<FixedScorePlPolicy>(matrix_from_json(j["scores"], "scores"),
                                                        temperature);
    } else {
      if (!j.contains("num_contexts") || !j.contains("catalog_size")) {
        throw ValidationError("policy spec: need scores or (num_contexts, catalog_size)");
      }
      const int nc = j["num_contexts"].get<int>();
      const int m = j["catalog_size"].get<int>();
      if (kind == "uniform") {
        out.policy = std::make_unique<FixedScorePlPolicy>(
            std::vector<std::vector<double>>(static_cast<std::size_t>(nc),
                                             std::vector<double>(static_cast<std::size_t>(m), 0.0)),
            1.0);
      } else {
        out.policy = std::make_unique<FixedScorePlPolicy>(FixedScorePlPolicy::seeded(
            nc, m, get_or("score_scale", 1.0), temperature,
            j.contains("seed") ? j["seed"].get<std::uint64_t>() : 0));
      }
    }
    return out;
  }
  if (kind == "context_dependent_pl") {
    reject_unknown_keys(j, {"kind", "temperature", "base", "interactions", "interaction_scale",
                            "num_contexts", "catalog_size", "base_scale", "seed"});
    const double temperature = get_or("temperature", 1.0);
    const double kappa = get_or("interaction_scale", 1.0);
    if (j.contains("base") && j.contains("interactions")) {
      auto base = matrix_from_json(j["base"], "base");
      auto inter = matrix_from_json(j["interactions"], "interactions");
      std::vector<double> flat;
      for (const auto& row : inter) flat.insert(flat.end(), row.begin(), row.end());
      out.policy = std::make_unique<ContextDependentPlPolicy>(std::move(base), std::move(flat), kappa,
                                                              temperature);
    } else {
      if (!j.contains("num_contexts") || !j.contains("catalog_size")) {
        throw ValidationError("policy spec: need base+interactions or (num_contexts, catalog_size)");
      }
      out.policy = std::make_unique<ContextDependentPlPolicy>(ContextDependentPlPolicy::seeded(
          j["num_contexts"].get<int>(), j["catalog_size"].get<int>(), get_or("base_scale", 1.0), kappa,
          temperature, j.contains("seed") ? j["seed"].get<std::uint64_t>() : 0));
    }
    return out;
  }
  throw ValidationError("policy spec: unknown kind '" + kind + "'");
}

LoadedPolicy load_slate_policy(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ValidationError("cannot open policy spec: " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_slate_policy(ss.str(), path);
}

}  // namespace ffis
