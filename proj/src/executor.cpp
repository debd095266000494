#include "planforge/executor.hpp"

#include <bit>
#include <cmath>
#include <stdexcept>

#include "planforge/hash.hpp"
#include "planforge/random.hpp"

namespace planforge {

namespace {

double lg(double rows) { return std::log2(1.0 + rows); }

}  // namespace

void CostModelConfig::validate() const {
  for (double c : {hash_build, hash_probe, merge_sort, merge_scan, nestloop_inner, index_lookup, output_row, time_scale}) {
    if (!(c > 0.0)) throw std::invalid_argument("cost model constants must be positive");
  }
  if (!(noise_sigma >= 0.0)) throw std::invalid_argument("noise_sigma must be >= 0");
}

InnerAccess nestloop_inner_access(const Query& query, uint32_t outer, const JoinTree& inner,
                                  const CostModelConfig& config) {
  if (!inner.is_leaf()) return InnerAccess::MaterializedInner;
  if (config.index_lookups) {
    const int r = inner.alias();
    for (const auto& e : query.edges()) {
      if (e.pk_side == r && (outer & (1u << e.other(r)))) return InnerAccess::IndexLookup;
    }
  }
  return InnerAccess::FullInnerScan;
}

double join_operator_cost(JoinOp op, double l, double r, double out, InnerAccess access, double inner_base_rows,
                          const CostModelConfig& c) {
  switch (op) {
    case JoinOp::Hash:
      return c.hash_build * l + c.hash_probe * r + c.output_row * out;
    case JoinOp::Merge:
      return c.merge_sort * (l * lg(l) + r * lg(r)) + c.merge_scan * (l + r) + c.output_row * out;
    case JoinOp::NestLoop:
      if (access == InnerAccess::IndexLookup) return l * c.index_lookup * lg(inner_base_rows) + c.output_row * out;
      return l * c.nestloop_inner * r + c.output_row * out;
  }
  return 0.0;
}

double true_cardinality(const Query& query, uint32_t alias_set) {
  double card = 1.0;
  for (uint32_t m = alias_set; m; m &= m - 1) {
    const auto& a = query.alias(std::countr_zero(m));
    card *= a.base_rows * a.selectivity;
  }
  for (const auto& e : query.edges()) {
    if ((alias_set >> e.left & 1u) && (alias_set >> e.right & 1u)) card /= e.pk_rows;
  }
  return card;
}

std::vector<double> cardinality_table(const Query& query) {
  std::vector<double> cards(size_t{1} << query.size(), 1.0);
  for (uint32_t m = 1; m < cards.size(); ++m) cards[m] = true_cardinality(query, m);
  return cards;
}

namespace {

double cost_rec(const Query& q, const JoinTree& t, const CostModelConfig& c, const std::vector<double>& cards) {
  if (t.is_leaf()) return 0.0;
  const auto& l = t.left();
  const auto& r = t.right();
  const InnerAccess access = t.op() == JoinOp::NestLoop ? nestloop_inner_access(q, l.aliases(), r, c)
                                                        : InnerAccess::MaterializedInner;
  const double base = r.is_leaf() ? q.alias(r.alias()).base_rows : 0.0;
  return cost_rec(q, l, c, cards) + cost_rec(q, r, c, cards) +
         join_operator_cost(t.op(), cards[l.aliases()], cards[r.aliases()], cards[t.aliases()], access, base, c);
}

}  // namespace

double plan_cost(const Query& query, const JoinTree& plan, const CostModelConfig& config,
                 const std::vector<double>& cards) {
  return cost_rec(query, plan, config, cards);
}

double plan_cost(const Query& query, const JoinTree& plan, const CostModelConfig& config) {
  return plan_cost(query, plan, config, cardinality_table(query));
}

double SimulatedExecutor::latency(const Query& query, const JoinTree& plan, uint64_t seed) const {
  double lat = plan_cost(query, plan, config_) * config_.time_scale;
  if (config_.noise_sigma > 0.0) {
    Rng rng(derive_seed(seed, fnv1a(to_text(query, plan))));
    lat *= std::exp(config_.noise_sigma * rng.normal());
  }
  return lat;
}

ExecutionResult SimulatedExecutor::execute(const Query& query, const JoinTree& plan, double timeout_s,
                                           uint64_t seed) const {
  if (!(timeout_s > 0.0)) throw std::invalid_argument("execute: timeout must be positive");
  const double lat = latency(query, plan, seed);
  ExecutionResult r{std::nullopt, false, timeout_s, plan};
  if (lat > timeout_s) {
    r.censored = true;
  } else {
    r.latency_s = lat;
  }
  return r;
}

}  // namespace planforge
