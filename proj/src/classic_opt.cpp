#include "planforge/classic_opt.hpp"

#include <bit>
#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>

#include "planforge/random.hpp"

namespace planforge {

EstimatedStats EstimatedStats::truthful(const Query& query) {
  EstimatedStats s;
  for (const auto& e : query.edges()) s.edge_selectivity.push_back(1.0 / e.pk_rows);
  for (const auto& a : query.aliases()) s.alias_selectivity.push_back(a.selectivity);
  return s;
}

EstimatedStats EstimatedStats::distorted(const Query& query, double error_spread, uint64_t seed) {
  if (!(error_spread >= 1.0)) throw std::invalid_argument("error_spread must be >= 1");
  EstimatedStats s = truthful(query);
  s.error_spread = error_spread;
  const double w = std::log(error_spread);
  Rng rng(seed);
  for (auto& v : s.edge_selectivity) v *= std::exp(rng.uniform(-w, w));
  for (auto& v : s.alias_selectivity) v *= std::exp(rng.uniform(-w, w));
  return s;
}

double EstimatedStats::cardinality(const Query& query, uint32_t alias_set) const {
  double card = 1.0;
  for (uint32_t m = alias_set; m; m &= m - 1) {
    const int i = std::countr_zero(m);
    card *= query.alias(i).base_rows * alias_selectivity[i];
  }
  for (size_t e = 0; e < query.edges().size(); ++e) {
    const auto& edge = query.edges()[e];
    if ((alias_set >> edge.left & 1u) && (alias_set >> edge.right & 1u)) card *= edge_selectivity[e];
  }
  return card;
}

std::string HintSet::label() const {
  std::string s = "ops=";
  for (JoinOp op : kAllJoinOps) {
    if (allows(op)) s += op_name(op)[0];
  }
  s += ",inner=";
  const char* modes = "ifm";
  for (int a = 0; a < 3; ++a) {
    if (access_modes >> a & 1u) s += modes[a];
  }
  return s;
}

std::vector<HintSet> all_hint_sets() {
  std::vector<HintSet> out;
  for (uint8_t ops = 1; ops < 8; ++ops) {
    for (uint8_t modes = 1; modes < 8; ++modes) out.push_back({ops, modes});
  }
  return out;
}

namespace {

struct DpEntry {
  double cost = std::numeric_limits<double>::infinity();
  std::optional<JoinTree> plan;
};

// Returns the penalty-free join cost plus penalty * violations.
double hinted_join_cost(const Query& q, const JoinTree& l, const JoinTree& r, JoinOp op, const HintSet& hints,
                        const std::vector<double>& cards, const ClassicOptimizerConfig& cfg) {
  int violations = hints.allows(op) ? 0 : 1;
  InnerAccess access = InnerAccess::MaterializedInner;
  if (op == JoinOp::NestLoop) {
    access = nestloop_inner_access(q, l.aliases(), r, cfg.cost);
    if (!hints.allows(access)) ++violations;
  }
  const double base = r.is_leaf() ? q.alias(r.alias()).base_rows : 0.0;
  return join_operator_cost(op, cards[l.aliases()], cards[r.aliases()], cards[l.aliases() | r.aliases()], access,
                            base, cfg.cost) +
         cfg.disabled_penalty * violations;
}

bool better(const Query& q, double cost, const JoinTree& plan, const DpEntry& cur) {
  if (!cur.plan || cost < cur.cost) return true;
  if (cost > cur.cost) return false;
  return to_text(q, plan) < to_text(q, *cur.plan);
}

}  // namespace

JoinTree optimize_hinted(const Query& query, const EstimatedStats& stats, const HintSet& hints,
                         const ClassicOptimizerConfig& config) {
  if (query.size() > config.dp_cap) {
    throw std::invalid_argument("optimizer: query has " + std::to_string(query.size()) +
                                " aliases, above the DP cap of " + std::to_string(config.dp_cap));
  }
  if (hints.join_ops == 0 || hints.access_modes == 0) throw std::invalid_argument("empty hint set");
  const uint32_t full = query.all_mask();
  std::vector<double> cards(size_t{full} + 1, 0.0);
  for (uint32_t m = 1; m <= full; ++m) cards[m] = stats.cardinality(query, m);
  std::vector<DpEntry> best(size_t{full} + 1);
  for (int i = 0; i < query.size(); ++i) best[1u << i] = {0.0, JoinTree::leaf(i)};

  // Masks in increasing numeric order visit every submask first.
  for (uint32_t mask = 1; mask <= full; ++mask) {
    if (std::has_single_bit(mask) || !query.is_connected(mask)) continue;
    DpEntry& entry = best[mask];
    for (uint32_t left = (mask - 1) & mask; left; left = (left - 1) & mask) {
      const uint32_t right = mask ^ left;
      const DpEntry& bl = best[left];
      const DpEntry& br = best[right];
      if (!bl.plan || !br.plan || !query.has_edge_between(left, right)) continue;
      for (JoinOp op : kAllJoinOps) {
        const double c = bl.cost + br.cost + hinted_join_cost(query, *bl.plan, *br.plan, op, hints, cards, config);
        if (!(c <= entry.cost)) continue;
        JoinTree cand = JoinTree::join(*bl.plan, *br.plan, op);
        if (better(query, c, cand, entry)) entry = {c, std::move(cand)};
      }
    }
  }
  return *best[full].plan;
}

JoinTree optimize_default(const Query& query, const EstimatedStats& stats, const ClassicOptimizerConfig& config) {
  return optimize_hinted(query, stats, HintSet::all(), config);
}

std::vector<JoinTree> hints49_plans(const Query& query, const EstimatedStats& stats,
                                    const ClassicOptimizerConfig& config) {
  std::vector<JoinTree> out{optimize_default(query, stats, config)};
  for (const auto& h : all_hint_sets()) out.push_back(optimize_hinted(query, stats, h, config));
  return out;
}

int hint_violations(const Query& query, const JoinTree& plan, const HintSet& hints, const CostModelConfig& cost) {
  if (plan.is_leaf()) return 0;
  int v = hints.allows(plan.op()) ? 0 : 1;
  if (plan.op() == JoinOp::NestLoop && !hints.allows(nestloop_inner_access(query, plan.left().aliases(), plan.right(), cost))) {
    ++v;
  }
  return v + hint_violations(query, plan.left(), hints, cost) + hint_violations(query, plan.right(), hints, cost);
}

OraclePlan brute_force_optimum(const Query& query, const CostModelConfig& cost, int cap, bool exclude_cross_joins) {
  const auto cards = cardinality_table(query);
  std::optional<JoinTree> best;
  double best_cost = std::numeric_limits<double>::infinity();
  for_each_plan(
      query,
      [&](const JoinTree& t) {
        if (exclude_cross_joins && contains_cross_join(query, t)) return;
        const double c = plan_cost(query, t, cost, cards);
        if (c < best_cost || (c == best_cost && best && to_text(query, t) < to_text(query, *best))) {
          best_cost = c;
          best = t;
        }
      },
      cap);
  return {*best, best_cost * cost.time_scale};
}

}  // namespace planforge
