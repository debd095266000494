#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "fixtures.hpp"
#include "planforge/bo.hpp"
#include "planforge/classic_opt.hpp"
#include "planforge/random.hpp"
#include "planforge/reference.hpp"

using namespace planforge;

namespace {

struct SmallSetup {
  Schema schema = reference_schema();
  PlanCodec codec{SymbolVocab(schema), 6};
  VaeModel vae;
};

const SmallSetup& small_setup() {
  static const SmallSetup s = [] {
    SmallSetup out;
    const Corpus c = build_corpus(out.schema, 3000, 1);
    VaeConfig cfg;
    cfg.latent_dim = 8;
    cfg.hidden = 32;
    cfg.steps = 400;
    out.vae = train_vae(c, out.codec.vocab(), cfg, 1).model;
    return out;
  }();
  return s;
}

double best_completed(const std::vector<InitEntry>& init) {
  double best = INFINITY;
  for (const auto& e : init) {
    if (!e.result.censored) best = std::min(best, *e.result.latency_s);
  }
  return best;
}

}  // namespace

TEST(TrustRegion, SuccessStreakDoubles) {
  TrustRegion tr = TrustRegion::around(Eigen::VectorXd::Zero(2));
  tr = update_trust_region(tr, true);
  tr = update_trust_region(tr, true);
  EXPECT_DOUBLE_EQ(tr.length, 0.8);
  tr = update_trust_region(tr, true);
  EXPECT_DOUBLE_EQ(tr.length, 1.6);
  EXPECT_EQ(tr.success_count, 0);
  for (int i = 0; i < 3; ++i) tr = update_trust_region(tr, true);
  EXPECT_DOUBLE_EQ(tr.length, 1.6);
}

TEST(TrustRegion, FailureStreakHalves) {
  TrustRegion tr = TrustRegion::around(Eigen::VectorXd::Zero(2));
  for (int i = 0; i < 9; ++i) tr = update_trust_region(tr, false);
  EXPECT_DOUBLE_EQ(tr.length, 0.8);
  tr = update_trust_region(tr, false);
  EXPECT_DOUBLE_EQ(tr.length, 0.4);
  EXPECT_EQ(tr.failure_count, 0);
}

TEST(TrustRegion, RestartBelowMinimum) {
  TrustRegion tr = TrustRegion::around(Eigen::VectorXd::Zero(2));
  tr.length = tr.config.length_min;
  tr.failure_count = tr.config.failure_tolerance - 1;
  tr = update_trust_region(tr, false);
  EXPECT_DOUBLE_EQ(tr.length, tr.config.length_init);
  EXPECT_EQ(tr.restarts, 1);
}

TEST(TrustRegion, AlternatingKeepsLength) {
  TrustRegion tr = TrustRegion::around(Eigen::VectorXd::Zero(2));
  for (int i = 0; i < 40; ++i) tr = update_trust_region(tr, i % 2 == 0);
  EXPECT_DOUBLE_EQ(tr.length, 0.8);
}

TEST(TrustRegion, LengthStaysInBounds) {
  Rng rng(3);
  TrustRegion tr = TrustRegion::around(Eigen::VectorXd::Zero(2));
  for (int i = 0; i < 10000; ++i) {
    tr = update_trust_region(tr, rng.bernoulli(0.3));
    ASSERT_GE(tr.length, tr.config.length_min);
    ASSERT_LE(tr.length, tr.config.length_max);
  }
}

TEST(Ledger, ChargesAndRefusesOverspend) {
  const Schema s = reference_schema();
  const Query q = reference_query(s, 0);
  const JoinTree p = random_plan(q, 0);
  const SimulatedExecutor ex;
  const double lat = ex.latency(q, p);
  BudgetLedger l(2.2 * lat);
  EXPECT_TRUE(l.affordable(lat));
  l.charge(ex.execute(q, p, 2 * lat));
  EXPECT_DOUBLE_EQ(l.spent(), lat);
  l.charge(ex.execute(q, p, 0.5 * lat));
  EXPECT_DOUBLE_EQ(l.spent(), 1.5 * lat);
  EXPECT_FALSE(l.affordable(1.01 * lat));
  EXPECT_THROW(l.charge(ex.execute(q, p, 1.5 * lat)), std::logic_error);
  EXPECT_EQ(l.executions(), 2);
}

TEST(Ledger, ExecutionCap) {
  BudgetLedger l(1e9, 2);
  const Schema s = reference_schema();
  const Query q = reference_query(s, 0);
  const JoinTree p = random_plan(q, 0);
  const SimulatedExecutor ex;
  l.charge(ex.execute(q, p, 1.0));
  EXPECT_FALSE(l.execution_limit_reached());
  l.charge(ex.execute(q, p, 1.0));
  EXPECT_TRUE(l.execution_limit_reached());
}

TEST(Timeout, MinimalTauOnFixture) {
  const auto f = fixtures::timeout_fixture();
  const TimeoutBounds b{f.incumbent_s, 10 * f.incumbent_s};
  const TimeoutDecision d = select_timeout(f.state, f.interior_candidate, f.incumbent_s, 2.0, b);
  EXPECT_TRUE(d.constraint_satisfied);
  EXPECT_GT(d.tau_star, b.tau_low);
  EXPECT_LE(d.tau_star, b.tau_high);
  EXPECT_TRUE(timeout_constraint(f.state, f.interior_candidate, d.tau_star, f.incumbent_s, 2.0));
  EXPECT_FALSE(timeout_constraint(f.state, f.interior_candidate, d.tau_star / 1.1, f.incumbent_s, 2.0));
}

TEST(Timeout, ConfidentlyBadCandidateGetsLowerBound) {
  const auto f = fixtures::timeout_fixture();
  const TimeoutBounds b{f.incumbent_s, 10 * f.incumbent_s};
  const PosteriorMoments pm = posterior(f.state, f.confident_candidate);
  ASSERT_GT(pm.mu - 2.0 * pm.sigma, f.state.transform.forward(f.incumbent_s));
  const TimeoutDecision d = select_timeout(f.state, f.confident_candidate, f.incumbent_s, 2.0, b);
  EXPECT_EQ(d.tau_star, b.tau_low);
  EXPECT_TRUE(d.constraint_satisfied);
}

TEST(Timeout, UnsatisfiableReturnsUpperBound) {
  const auto f = fixtures::timeout_fixture();
  // An incumbent this slow cannot be beaten by any fantasized timeout below 2 s.
  const TimeoutBounds b{1.0, 2.0};
  const TimeoutDecision d = select_timeout(f.state, f.interior_candidate, 1e6, 2.0, b);
  EXPECT_EQ(d.tau_star, 2.0);
  EXPECT_FALSE(d.constraint_satisfied);
}

TEST(Timeout, NoIncumbentReturnsUpperBound) {
  const auto f = fixtures::timeout_fixture();
  const TimeoutDecision d = select_timeout(f.state, f.interior_candidate, std::nullopt, 2.0, {1.0, 50.0});
  EXPECT_EQ(d.tau_star, 50.0);
}

TEST(Timeout, WithinBoundsOverRandomCandidates) {
  const auto f = fixtures::timeout_fixture();
  Rng rng(1);
  for (int i = 0; i < 50; ++i) {
    const Eigen::VectorXd x = Eigen::VectorXd::Constant(1, rng.uniform(-3, 3));
    const TimeoutBounds b{f.incumbent_s, 10 * f.incumbent_s};
    const TimeoutDecision d = select_timeout(f.state, x, f.incumbent_s, 2.0, b);
    ASSERT_GE(d.tau_star, b.tau_low);
    ASSERT_LE(d.tau_star, b.tau_high);
    if (d.constraint_satisfied && d.tau_star > b.tau_low) {
      ASSERT_FALSE(timeout_constraint(f.state, x, d.tau_star / 1.1, f.incumbent_s, 2.0));
    }
  }
}

TEST(Candidates, SingleCandidateIsReturned) {
  const auto f = fixtures::timeout_fixture();
  TrustRegion tr = TrustRegion::around(Eigen::VectorXd::Zero(1));
  CandidateConfig cfg;
  cfg.n_candidates = 1;
  const RankedCandidates rc = rank_candidates(f.state, tr, cfg, 5);
  ASSERT_EQ(rc.points.rows(), 1);
  EXPECT_EQ(select_candidate(f.state, tr, cfg, 5), Eigen::VectorXd(rc.points.row(0).transpose()));
}

TEST(Candidates, InsideTheBoxAndSorted) {
  const auto f = fixtures::timeout_fixture();
  TrustRegion tr = TrustRegion::around(Eigen::VectorXd::Constant(1, 0.3));
  const CandidateConfig cfg;
  const RankedCandidates rc = rank_candidates(f.state, tr, cfg, 9);
  ASSERT_EQ(rc.points.rows(), cfg.n_candidates);
  const double half = 0.5 * cfg.box_scale * tr.length;
  for (int i = 0; i < rc.points.rows(); ++i) {
    ASSERT_LE(std::abs(rc.points(i, 0) - 0.3), half + 1e-12);
    if (i) {
      ASSERT_LE(rc.sample(i - 1), rc.sample(i));
    }
  }
  EXPECT_EQ(rank_candidates(f.state, tr, cfg, 9).points, rc.points);
}

TEST(Candidates, FarFromDataStillFinite) {
  const auto f = fixtures::timeout_fixture();
  TrustRegion tr = TrustRegion::around(Eigen::VectorXd::Constant(1, 100.0));
  const Eigen::VectorXd x = select_candidate(f.state, tr, CandidateConfig{}, 3);
  EXPECT_TRUE(x.allFinite());
}

TEST(Candidates, ThompsonFindsBasin) {
  std::vector<Observation> obs;
  for (int i = 0; i < 7; ++i) {
    for (int j = 0; j < 7; ++j) {
      Eigen::Vector2d x(-1.5 + 0.5 * i, -1.5 + 0.5 * j);
      const double f = (x - Eigen::Vector2d(0.5, 0.5)).squaredNorm();
      obs.push_back(Observation::completed(x, std::exp(f), 1e4));
    }
  }
  const SurrogateState st = fit(obs, SurrogateConfig{}, 2);
  const TrustRegion tr = TrustRegion::around(Eigen::VectorXd::Zero(2));
  int hits = 0;
  for (uint64_t seed = 0; seed < 100; ++seed) {
    const Eigen::VectorXd x = select_candidate(st, tr, CandidateConfig{}, seed);
    hits += (x - Eigen::Vector2d(0.5, 0.5)).norm() < 0.5;
  }
  EXPECT_GE(hits, 90);
}

TEST(Init, FirstRunsAtCapThenBestSoFar) {
  const Schema s = reference_schema();
  const Query q = reference_query(s, kReferenceQuerySeed);
  const auto plans = hints49_plans(q, reference_stats(q, kReferenceQuerySeed));
  const auto init = execute_init(q, plans, SimulatedExecutor{}, 1e4, 0);
  ASSERT_FALSE(init.empty());
  EXPECT_EQ(init.front().result.threshold_s, 1e4);
  std::set<std::string> texts;
  double best = INFINITY;
  for (const auto& e : init) {
    ASSERT_TRUE(texts.insert(to_text(q, e.plan)).second);
    if (std::isfinite(best)) {
      ASSERT_EQ(e.result.threshold_s, best);
    }
    if (!e.result.censored) best = std::min(best, *e.result.latency_s);
  }
}

TEST(Optimize, BudgetEqualToInitReturnsBestInit) {
  const auto& setup = small_setup();
  const Query q = reference_query(setup.schema, kReferenceQuerySeed);
  const auto init = execute_init(q, hints49_plans(q, reference_stats(q, kReferenceQuerySeed)), SimulatedExecutor{}, 1e4, 0);
  double spent = 0.0;
  for (const auto& e : init) spent += e.result.charge();
  const auto rep = run_optimization(q, setup.vae, setup.codec, SimulatedExecutor{}, init, spent, BoConfig{}, 1);
  EXPECT_EQ(rep.iterations, 0);
  EXPECT_LE(rep.spent_s, spent);
  ASSERT_TRUE(rep.best_latency_s.has_value());
  EXPECT_EQ(*rep.best_latency_s, best_completed(init));
}

TEST(Optimize, InfeasibleBudgetWarns) {
  const auto& setup = small_setup();
  const Query q = reference_query(setup.schema, kReferenceQuerySeed);
  const auto init = execute_init(q, hints49_plans(q, reference_stats(q, kReferenceQuerySeed)), SimulatedExecutor{}, 1e4, 0);
  const auto rep = run_optimization(q, setup.vae, setup.codec, SimulatedExecutor{}, init, 1e-9, BoConfig{}, 1);
  EXPECT_EQ(rep.stop_reason, "budget_infeasible");
  EXPECT_FALSE(rep.warnings.empty());
  EXPECT_EQ(*rep.best_latency_s, best_completed(init));
}

TEST(Optimize, InvariantsAndDeterminism) {
  const auto& setup = small_setup();
  const SimulatedExecutor ex;
  for (uint64_t qs : {0ull, 6ull}) {
    const Query q = reference_query(setup.schema, qs);
    const auto init = execute_init(q, hints49_plans(q, reference_stats(q, qs)), ex, 1e4, 0);
    const double hints_best = best_completed(init);
    double init_spent = 0.0;
    for (const auto& e : init) init_spent += e.result.charge();
    const double budget = init_spent + 20 * hints_best;
    BoConfig cfg;
    cfg.max_executions = static_cast<int>(init.size()) + 25;
    const auto rep = run_optimization(q, setup.vae, setup.codec, ex, init, budget, cfg, qs);
    ASSERT_TRUE(rep.best_latency_s.has_value());
    EXPECT_LE(*rep.best_latency_s, hints_best);
    EXPECT_LE(rep.spent_s, budget);
    EXPECT_EQ(ex.latency(q, *rep.best_plan), *rep.best_latency_s);
    std::optional<double> prev;
    double charged = 0.0;
    for (const auto& row : rep.trace) {
      charged += row.charge_s;
      ASSERT_LE(row.spent_s, budget + 1e-12);
      ASSERT_NEAR(row.spent_s, charged, 1e-9 * std::max(1.0, charged));
      if (row.censored && !row.cache_hit) {
        ASSERT_EQ(row.charge_s, row.timeout_s);
      }
      if (prev) {
        ASSERT_TRUE(row.best_latency_s.has_value());
        ASSERT_LE(*row.best_latency_s, *prev);
      }
      if (row.best_latency_s) prev = row.best_latency_s;
    }
    const auto again = run_optimization(q, setup.vae, setup.codec, ex, init, budget, cfg, qs);
    ASSERT_EQ(again.trace.size(), rep.trace.size());
    for (size_t i = 0; i < rep.trace.size(); ++i) {
      ASSERT_EQ(again.trace[i].plan_text, rep.trace[i].plan_text);
      ASSERT_EQ(again.trace[i].timeout_s, rep.trace[i].timeout_s);
    }
  }
}

TEST(Optimize, SingleDefaultPlanInit) {
  const auto& setup = small_setup();
  const SimulatedExecutor ex;
  const Query q = reference_query(setup.schema, kReferenceQuerySeed);
  const JoinTree def = optimize_default(q, reference_stats(q, kReferenceQuerySeed));
  const auto init = execute_init(q, {def}, ex, 1e4, 0);
  BoConfig cfg;
  cfg.max_executions = 15;
  const auto rep = run_optimization(q, setup.vae, setup.codec, ex, init, 1e9, cfg, 2);
  EXPECT_EQ(rep.stop_reason, "execution_limit");
  EXPECT_EQ(rep.executions, 15);
  ASSERT_TRUE(rep.best_latency_s.has_value());
  EXPECT_LE(*rep.best_latency_s, ex.latency(q, def));
}

TEST(Optimize, EmptyInitRejected) {
  const auto& setup = small_setup();
  const Query q = reference_query(setup.schema, kReferenceQuerySeed);
  EXPECT_THROW(run_optimization(q, setup.vae, setup.codec, SimulatedExecutor{}, {}, 1e9, BoConfig{}, 1),
               std::invalid_argument);
}

TEST(Optimize, TargetStopsEarly) {
  const auto& setup = small_setup();
  const Query q = reference_query(setup.schema, kReferenceQuerySeed);
  const auto init = execute_init(q, hints49_plans(q, reference_stats(q, kReferenceQuerySeed)), SimulatedExecutor{}, 1e4, 0);
  BoConfig cfg;
  cfg.target_latency_s = best_completed(init);
  const auto rep = run_optimization(q, setup.vae, setup.codec, SimulatedExecutor{}, init, 1e9, cfg, 1);
  EXPECT_EQ(rep.stop_reason, "target_reached");
  EXPECT_EQ(rep.iterations, 0);
}

TEST(RandomSearch, NeverWorseThanDefaultAndWithinBudget) {
  const Schema s = reference_schema();
  const SimulatedExecutor ex;
  for (uint64_t qs = 0; qs < 5; ++qs) {
    const Query q = reference_query(s, qs);
    const JoinTree def = optimize_default(q, reference_stats(q, qs));
    const double budget = 30 * ex.latency(q, def);
    const auto rep = random_search(q, def, ex, budget, RandomSearchConfig{}, qs);
    ASSERT_TRUE(rep.best_latency_s.has_value());
    EXPECT_LE(*rep.best_latency_s, ex.latency(q, def));
    EXPECT_LE(rep.spent_s, budget);
    for (size_t i = 1; i < rep.trace.size(); ++i) {
      ASSERT_LE(*rep.trace[i].best_latency_s, *rep.trace[i - 1].best_latency_s);
      if (!rep.trace[i].cache_hit) {
        ASSERT_EQ(rep.trace[i].timeout_s, *rep.trace[i - 1].best_latency_s);
      }
    }
  }
}

TEST(Report, ExecutionsToReach) {
  OptimizationReport r;
  for (int i = 0; i < 5; ++i) {
    TraceRow row;
    row.executions = i + 1;
    row.best_latency_s = 10.0 - i;
    r.trace.push_back(row);
  }
  EXPECT_EQ(r.executions_to_reach(8.0), 3);
  EXPECT_EQ(r.executions_to_reach(8.0, 2), 1);
  EXPECT_FALSE(r.executions_to_reach(1.0).has_value());
}
