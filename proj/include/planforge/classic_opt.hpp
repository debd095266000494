#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "planforge/executor.hpp"
#include "planforge/plan.hpp"
#include "planforge/schema.hpp"

namespace planforge {

/// Selectivity estimates seen by the classical optimizer: truth times a
/// multiplicative error e^u, u ~ U[-ln s, ln s], per join edge and per alias.
struct EstimatedStats {
  std::vector<double> edge_selectivity;   // indexed like query.edges()
  std::vector<double> alias_selectivity;  // indexed by local alias
  double error_spread = 1.0;

  static EstimatedStats truthful(const Query& query);
  static EstimatedStats distorted(const Query& query, double error_spread, uint64_t seed);

  double cardinality(const Query& query, uint32_t alias_set) const;
};

/// Bit sets over JoinOp and InnerAccess values.
struct HintSet {
  uint8_t join_ops = 0b111;
  uint8_t access_modes = 0b111;

  bool allows(JoinOp op) const { return join_ops >> static_cast<int>(op) & 1u; }
  bool allows(InnerAccess a) const { return access_modes >> static_cast<int>(a) & 1u; }
  std::string label() const;

  static HintSet all() { return {}; }
};

/// The 7 x 7 non-empty (join operator subset, inner access subset) pairs.
std::vector<HintSet> all_hint_sets();

inline constexpr int kDefaultDpCap = 10;

struct ClassicOptimizerConfig {
  CostModelConfig cost;
  int dp_cap = kDefaultDpCap;
  /// Added per hint violation, so a compliant plan wins whenever one exists.
  double disabled_penalty = 1e12;
};

/// Selinger-style DP over connected sub-plans (no cross joins) under the
/// estimated cardinalities. Ties break on plan text.
JoinTree optimize_default(const Query& query, const EstimatedStats& stats, const ClassicOptimizerConfig& config = {});
JoinTree optimize_hinted(const Query& query, const EstimatedStats& stats, const HintSet& hints,
                         const ClassicOptimizerConfig& config = {});

/// The default plan followed by the plan of each of the 49 hint sets.
std::vector<JoinTree> hints49_plans(const Query& query, const EstimatedStats& stats,
                                    const ClassicOptimizerConfig& config = {});

/// Number of join nodes in `plan` that the hint set disallows.
int hint_violations(const Query& query, const JoinTree& plan, const HintSet& hints, const CostModelConfig& cost);

struct OraclePlan {
  JoinTree plan;
  double latency_s = 0.0;
};

/// Exhaustive minimum of the true latency over every plan.
OraclePlan brute_force_optimum(const Query& query, const CostModelConfig& cost = {},
                               int cap = kDefaultEnumerationCap, bool exclude_cross_joins = false);

}  // namespace planforge
