#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "planforge/plan.hpp"
#include "planforge/schema.hpp"

namespace planforge {

/// Per-operator cost constants, in abstract cost units per row.
struct CostModelConfig {
  double hash_build = 2.0;
  double hash_probe = 1.0;
  double merge_sort = 0.25;  // per row * log2(1 + rows)
  double merge_scan = 0.5;
  double nestloop_inner = 0.05;  // per outer row per inner row
  double index_lookup = 1.0;     // per outer row * log2(1 + base rows)
  double output_row = 0.5;
  double time_scale = 1e-6;  // seconds per cost unit
  double noise_sigma = 0.0;  // lognormal latency noise, off by default
  bool index_lookups = true;

  void validate() const;
};

/// How a nested loop reads its inner (right) input.
enum class InnerAccess : uint8_t { IndexLookup = 0, FullInnerScan = 1, MaterializedInner = 2 };

/// Index lookup when the inner side is a single alias whose primary key is
/// joined to the outer side; a rescan of a base alias otherwise; a
/// materialized intermediate when the inner side is itself a join.
InnerAccess nestloop_inner_access(const Query& query, uint32_t outer, const JoinTree& inner,
                                  const CostModelConfig& config);

/// Cost of one join given input and output cardinalities.
double join_operator_cost(JoinOp op, double left_rows, double right_rows, double out_rows, InnerAccess access,
                          double inner_base_rows, const CostModelConfig& config);

/// Uniformity + referential integrity: product of filtered base cardinalities
/// times 1/|pk table| per join edge inside the set.
double true_cardinality(const Query& query, uint32_t alias_set);

/// Cardinality of every subset of the query's aliases, indexed by mask.
std::vector<double> cardinality_table(const Query& query);

double plan_cost(const Query& query, const JoinTree& plan, const CostModelConfig& config);
double plan_cost(const Query& query, const JoinTree& plan, const CostModelConfig& config,
                 const std::vector<double>& cards);

struct ExecutionResult {
  std::optional<double> latency_s;  // present iff the plan completed
  bool censored = false;
  double threshold_s = 0.0;
  JoinTree plan;

  /// Budget consumed: the timeout when censored, the latency otherwise.
  double charge() const { return censored ? threshold_s : *latency_s; }
};

/// Stateless simulated engine; every call sees the same snapshot.
class SimulatedExecutor {
 public:
  explicit SimulatedExecutor(CostModelConfig config = {}) : config_(config) { config_.validate(); }

  const CostModelConfig& config() const { return config_; }
  /// Uncensored latency; deterministic when noise is off.
  double latency(const Query& query, const JoinTree& plan, uint64_t seed = 0) const;
  ExecutionResult execute(const Query& query, const JoinTree& plan, double timeout_s, uint64_t seed = 0) const;

 private:
  CostModelConfig config_;
};

}  // namespace planforge
