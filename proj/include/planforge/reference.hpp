#pragma once

#include <cstdint>
#include <vector>

#include "planforge/classic_opt.hpp"
#include "planforge/schema.hpp"

namespace planforge {

/// The fixed desk-scale setup shared by tests, the acceptance suite and the
/// CLI defaults: six tables, FK density 0.5, two aliases per table.
inline constexpr int kReferenceTables = 6;
inline constexpr double kReferenceFkDensity = 0.5;
inline constexpr int kReferenceAliasK = 2;
inline constexpr uint64_t kReferenceSchemaSeed = 42;
inline constexpr int kReferenceQueryAliases = 5;
inline constexpr double kReferenceErrorSpread = 4.0;

inline Schema reference_schema() {
  return generate_schema(kReferenceTables, kReferenceFkDensity, kReferenceAliasK, kReferenceSchemaSeed);
}

inline Query reference_query(const Schema& schema, uint64_t seed, int n_aliases = kReferenceQueryAliases) {
  return sample_query(schema, n_aliases, seed);
}

/// Seed of the estimator distortion paired with a query seed.
inline uint64_t reference_distortion_seed(uint64_t query_seed) { return 1000 + query_seed; }

inline EstimatedStats reference_stats(const Query& query, uint64_t query_seed) {
  return EstimatedStats::distorted(query, kReferenceErrorSpread, reference_distortion_seed(query_seed));
}

/// The first query seed whose distorted default plan is slower than the
/// optimum and is beaten by at least one hinted plan.
inline constexpr uint64_t kReferenceQuerySeed = 8;

/// First `count` query seeds, in increasing order, whose distorted default
/// plan is strictly slower than the brute-force optimum.
inline std::vector<uint64_t> headroom_query_seeds(const Schema& schema, int count, const CostModelConfig& cost = {}) {
  std::vector<uint64_t> out;
  const SimulatedExecutor ex(cost);
  for (uint64_t seed = 0; static_cast<int>(out.size()) < count; ++seed) {
    const Query q = reference_query(schema, seed);
    ClassicOptimizerConfig oc;
    oc.cost = cost;
    const JoinTree def = optimize_default(q, reference_stats(q, seed), oc);
    if (ex.latency(q, def) > brute_force_optimum(q, cost).latency_s * (1 + 1e-9)) out.push_back(seed);
  }
  return out;
}

}  // namespace planforge
