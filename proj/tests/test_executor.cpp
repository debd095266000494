#include <gtest/gtest.h>

#include <cmath>

#include "fixtures.hpp"
#include "planforge/classic_opt.hpp"
#include "planforge/executor.hpp"
#include "planforge/reference.hpp"

using namespace planforge;

TEST(Executor, CardinalityExamples) {
  const Schema s = fixtures::abc_schema(1000, 100, 200);
  EXPECT_DOUBLE_EQ(true_cardinality(fixtures::abc_query(s, {0.5, 1.0, 1.0}), 0b001), 500.0);
  const Query q = fixtures::abc_query(s);
  EXPECT_DOUBLE_EQ(true_cardinality(q, 0b011), 1000.0);
  EXPECT_DOUBLE_EQ(true_cardinality(q, 0b101), 200000.0);
  EXPECT_DOUBLE_EQ(true_cardinality(q, 0b111), 1000.0 * 200.0 / 100.0);
}

TEST(Executor, OperatorCostsByHand) {
  const Schema s = fixtures::abc_schema(1000, 100, 200);
  const Query q = fixtures::ab_query(s);
  const CostModelConfig c;
  const double lg_a = std::log2(1001.0), lg_b = std::log2(101.0);
  EXPECT_NEAR(plan_cost(q, parse_plan(q, "(A hash B)"), c), 2.0 * 1000 + 1.0 * 100 + 0.5 * 1000, 1e-9);
  EXPECT_NEAR(plan_cost(q, parse_plan(q, "(A merge B)"), c),
              0.25 * (1000 * lg_a + 100 * lg_b) + 0.5 * 1100 + 0.5 * 1000, 1e-9);
  // B's key is joined from A: index lookups into B.
  EXPECT_NEAR(plan_cost(q, parse_plan(q, "(A nestloop B)"), c), 1000 * 1.0 * lg_b + 0.5 * 1000, 1e-9);
  // A is the FK side: the inner is rescanned.
  EXPECT_NEAR(plan_cost(q, parse_plan(q, "(B nestloop A)"), c), 100 * 0.05 * 1000 + 0.5 * 1000, 1e-9);
}

TEST(Executor, LeafHasNoCost) {
  const Schema s = fixtures::abc_schema();
  const Query q(s, {{0, 1}}, {1.0}, "a");
  EXPECT_EQ(plan_cost(q, JoinTree::leaf(0), CostModelConfig{}), 0.0);
}

TEST(Executor, CompletedAndCensored) {
  const Schema s = reference_schema();
  const Query q = reference_query(s, 0);
  const JoinTree p = random_plan(q, 1);
  const SimulatedExecutor ex;
  const double lat = ex.latency(q, p);
  const ExecutionResult done = ex.execute(q, p, 2.5 * lat);
  ASSERT_TRUE(done.latency_s.has_value());
  EXPECT_FALSE(done.censored);
  EXPECT_EQ(*done.latency_s, lat);
  EXPECT_EQ(done.charge(), lat);
  const ExecutionResult cut = ex.execute(q, p, lat / 1.8);
  EXPECT_TRUE(cut.censored);
  EXPECT_FALSE(cut.latency_s.has_value());
  EXPECT_EQ(cut.charge(), lat / 1.8);
  EXPECT_THROW(ex.execute(q, p, 0.0), std::invalid_argument);
}

TEST(Executor, ChargeIsMinOfLatencyAndTimeout) {
  const Schema s = reference_schema();
  const SimulatedExecutor ex;
  for (uint64_t seed = 0; seed < 500; ++seed) {
    const Query q = reference_query(s, seed % 40, 2 + static_cast<int>(seed % 5));
    const JoinTree p = random_plan(q, seed);
    const double lat = ex.latency(q, p);
    const double tau = lat * std::exp(static_cast<double>(seed % 7) - 3.0);
    const ExecutionResult r = ex.execute(q, p, tau);
    ASSERT_DOUBLE_EQ(r.charge(), std::min(lat, tau));
    if (r.censored) {
      ASSERT_GE(lat, r.threshold_s);
    } else {
      ASSERT_LE(*r.latency_s, r.threshold_s);
    }
  }
}

TEST(Executor, DeterministicWithoutNoise) {
  const Schema s = reference_schema();
  const Query q = reference_query(s, 5);
  const JoinTree p = random_plan(q, 5);
  const SimulatedExecutor ex;
  EXPECT_EQ(ex.latency(q, p, 1), ex.latency(q, p, 2));
  CostModelConfig noisy;
  noisy.noise_sigma = 0.3;
  const SimulatedExecutor nx(noisy);
  EXPECT_EQ(nx.latency(q, p, 1), nx.latency(q, p, 1));
  EXPECT_NE(nx.latency(q, p, 1), nx.latency(q, p, 2));
}

TEST(Executor, PositiveCostForEveryJoinPlan) {
  const Schema s = reference_schema();
  const Query q = reference_query(s, 9, 4);
  for (const auto& p : enumerate_all_plans(q)) ASSERT_GT(plan_cost(q, p, CostModelConfig{}), 0.0);
}

TEST(Executor, EdgeSelectivityNeverIncreasesCardinality) {
  const Schema s = reference_schema();
  for (uint64_t seed = 0; seed < 50; ++seed) {
    const Query q = reference_query(s, seed, 5);
    const auto cards = cardinality_table(q);
    for (uint32_t m = 1; m < cards.size(); ++m) {
      double product = 1.0;
      for (int i = 0; i < q.size(); ++i) {
        if (m >> i & 1u) product *= q.alias(i).base_rows * q.alias(i).selectivity;
      }
      ASSERT_LE(cards[m], product * (1 + 1e-12));
    }
  }
}

TEST(Executor, ThreeAliasOptimumByEnumeration) {
  const Schema s = reference_schema();
  const Query q = reference_query(s, 3, 3);
  const auto plans = enumerate_all_plans(q);
  ASSERT_EQ(plans.size(), 108u);
  double best = INFINITY;
  for (const auto& p : plans) best = std::min(best, plan_cost(q, p, CostModelConfig{}));
  const OraclePlan o = brute_force_optimum(q);
  EXPECT_NEAR(o.latency_s, best * CostModelConfig{}.time_scale, 1e-15);
}

TEST(Executor, CrossJoinsCostMore) {
  const Schema s = reference_schema();
  for (uint64_t seed = 0; seed < 10; ++seed) {
    const Query q = reference_query(s, seed, 4);
    const OraclePlan best_clean = brute_force_optimum(q, {}, 6, true);
    double best_cross = INFINITY;
    for (const auto& p : enumerate_all_plans(q)) {
      if (contains_cross_join(q, p)) best_cross = std::min(best_cross, SimulatedExecutor().latency(q, p));
    }
    if (std::isfinite(best_cross)) {
      EXPECT_GT(best_cross, best_clean.latency_s) << "seed " << seed;
    }
  }
}
