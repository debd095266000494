#include "planforge/bo.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <stdexcept>
#include <unordered_map>

#include "planforge/hash.hpp"
#include "planforge/random.hpp"

namespace planforge {

using Eigen::MatrixXd;
using Eigen::VectorXd;

TrustRegion TrustRegion::around(VectorXd center, const TrustRegionConfig& config) {
  if (!(config.length_min > 0) || config.length_min > config.length_init || config.length_init > config.length_max ||
      config.success_tolerance < 1 || config.failure_tolerance < 1) {
    throw std::invalid_argument("trust region: inconsistent configuration");
  }
  TrustRegion tr;
  tr.center = std::move(center);
  tr.length = config.length_init;
  tr.config = config;
  return tr;
}

TrustRegion update_trust_region(TrustRegion tr, bool improved) {
  if (improved) {
    ++tr.success_count;
    tr.failure_count = 0;
  } else {
    ++tr.failure_count;
    tr.success_count = 0;
  }
  if (tr.success_count >= tr.config.success_tolerance) {
    tr.length = std::min(2.0 * tr.length, tr.config.length_max);
    tr.success_count = 0;
  } else if (tr.failure_count >= tr.config.failure_tolerance) {
    tr.length /= 2.0;
    tr.failure_count = 0;
  }
  if (tr.length < tr.config.length_min) {
    tr.length = tr.config.length_init;
    tr.success_count = tr.failure_count = 0;
    ++tr.restarts;
  }
  return tr;
}

BudgetLedger::BudgetLedger(double budget_s, int max_executions) : budget_(budget_s), max_executions_(max_executions) {
  if (!(budget_s > 0)) throw std::invalid_argument("budget must be positive");
  if (max_executions < 0) throw std::invalid_argument("max_executions must be >= 0");
}

bool BudgetLedger::affordable(double worst_case_s) const {
  return !execution_limit_reached() && spent_ + worst_case_s <= budget_;
}

void BudgetLedger::charge(const ExecutionResult& r) {
  if (!affordable(r.charge())) throw std::logic_error("ledger: execution would exceed the budget");
  charge_unchecked(r);
}

void BudgetLedger::charge_unchecked(const ExecutionResult& r) {
  spent_ += r.charge();
  ++executions_;
}

bool timeout_constraint(const SurrogateState& state, const VectorXd& x, double tau_s, double incumbent_y_s,
                        double kappa, int fantasize_steps) {
  const SurrogateState f = fantasize(state, x, tau_s, fantasize_steps);
  const PosteriorMoments pm = posterior(f, x);
  return state.transform.forward(incumbent_y_s) <= pm.mu - kappa * pm.sigma;
}

TimeoutDecision select_timeout(const SurrogateState& state, const VectorXd& x, std::optional<double> incumbent_y_s,
                               double kappa, TimeoutBounds bounds, double relative_tolerance, int fantasize_steps) {
  if (!(bounds.tau_low > 0) || bounds.tau_high < bounds.tau_low) throw std::invalid_argument("select_timeout: bad bounds");
  if (!(relative_tolerance > 0)) throw std::invalid_argument("select_timeout: tolerance must be positive");
  TimeoutDecision d;
  d.kappa = kappa;
  if (!incumbent_y_s) {
    d.tau_star = bounds.tau_high;
    return d;
  }
  auto holds = [&](double tau) {
    ++d.search_iterations;
    return timeout_constraint(state, x, tau, *incumbent_y_s, kappa, fantasize_steps);
  };
  if (holds(bounds.tau_low)) {
    d.tau_star = bounds.tau_low;
    d.constraint_satisfied = true;
    return d;
  }
  if (!holds(bounds.tau_high)) {
    d.tau_star = bounds.tau_high;
    return d;
  }
  double lo = bounds.tau_low, hi = bounds.tau_high;
  while (hi / lo > 1.0 + relative_tolerance) {
    const double mid = std::sqrt(lo * hi);
    (holds(mid) ? hi : lo) = mid;
  }
  d.tau_star = hi;
  d.constraint_satisfied = true;
  return d;
}

RankedCandidates rank_candidates(const SurrogateState& state, const TrustRegion& tr, const CandidateConfig& config,
                                 uint64_t seed) {
  if (config.n_candidates < 1) throw std::invalid_argument("n_candidates must be >= 1");
  const int d = state.dim();
  if (tr.center.size() != d) throw std::invalid_argument("trust region dimension mismatch");
  const VectorXd ell = state.log_lengthscale.array().exp();
  const double geo = std::exp(state.log_lengthscale.mean());
  const VectorXd half = (0.5 * config.box_scale * tr.length / geo) * ell;
  const double p = std::min(1.0, config.perturbed_dims / d);

  Rng rng(derive_seed(seed, 1));
  const int n = config.n_candidates;
  MatrixXd X(n, d);
  for (int i = 0; i < n; ++i) {
    X.row(i) = tr.center.transpose();
    bool any = false;
    for (int j = 0; j < d; ++j) {
      if (rng.uniform() < p) {
        X(i, j) += rng.uniform(-half(j), half(j));
        any = true;
      }
    }
    if (!any) {
      const int j = static_cast<int>(rng.uniform_int(d));
      X(i, j) += rng.uniform(-half(j), half(j));
    }
  }
  const VectorXd f = sample_function(state, X, derive_seed(seed, 2));
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return f(a) < f(b); });
  RankedCandidates rc;
  rc.points.resize(n, d);
  rc.sample.resize(n);
  for (int k = 0; k < n; ++k) {
    rc.points.row(k) = X.row(order[k]);
    rc.sample(k) = f(order[k]);
  }
  return rc;
}

VectorXd select_candidate(const SurrogateState& state, const TrustRegion& tr, const CandidateConfig& config,
                          uint64_t seed) {
  return rank_candidates(state, tr, config, seed).points.row(0).transpose();
}

std::optional<int> OptimizationReport::executions_to_reach(double target_s, int after_executions) const {
  for (const auto& row : trace) {
    if (row.best_latency_s && *row.best_latency_s <= target_s) return std::max(0, row.executions - after_executions);
  }
  return std::nullopt;
}

std::string trace_kind_name(TraceKind k) {
  switch (k) {
    case TraceKind::Init:
      return "init";
    case TraceKind::Bo:
      return "bo";
    case TraceKind::Random:
      return "random";
  }
  return "?";
}

std::vector<InitEntry> execute_init(const Query& query, const std::vector<JoinTree>& plans,
                                    const SimulatedExecutor& executor, double tau_cap_s, uint64_t seed) {
  std::vector<InitEntry> out;
  std::set<std::string> seen;
  std::optional<double> best;
  for (const auto& p : plans) {
    if (!seen.insert(to_text(query, p)).second) continue;
    const double timeout = best ? *best : tau_cap_s;
    auto r = executor.execute(query, p, timeout, seed);
    if (!r.censored && (!best || *r.latency_s < *best)) best = r.latency_s;
    out.push_back({p, std::move(r), false});
  }
  return out;
}

namespace {

Observation observation_at(const VectorXd& x, const ExecutionResult& r) {
  return r.censored ? Observation::timed_out(x, r.threshold_s) : Observation::completed(x, *r.latency_s, r.threshold_s);
}

// Candidate decoding in one decoder pass.
std::vector<JoinTree> decode_batch(const VaeModel& vae, const PlanCodec& codec, const Query& query, const MatrixXd& pts) {
  const MatrixXd logits = vae.decode_logits(pts.transpose());
  const int T = vae.seq_len();
  const int V = vae.vocab_size();
  std::vector<JoinTree> out;
  out.reserve(pts.rows());
  PlanTokenSeq seq;
  seq.tokens.resize(T);
  for (Eigen::Index b = 0; b < pts.rows(); ++b) {
    for (int t = 0; t < T; ++t) {
      Eigen::Index arg = 0;
      logits.col(b).segment(t * V, V).maxCoeff(&arg);
      seq.tokens[t] = static_cast<int>(arg);
    }
    out.push_back(codec.decode(query, seq));
  }
  return out;
}

}  // namespace

OptimizationReport run_optimization(const Query& query, const VaeModel& vae, const PlanCodec& codec,
                                    const SimulatedExecutor& executor, const std::vector<InitEntry>& init,
                                    double budget_s, const BoConfig& config, uint64_t seed) {
  if (init.empty()) throw std::invalid_argument("run_optimization: no init plans");
  if (vae.vocab_size() != codec.vocab().size() || vae.seq_len() != codec.sequence_length() ||
      vae.vocab_hash() != codec.vocab().hash()) {
    throw std::invalid_argument("run_optimization: vae does not match the codec");
  }
  BudgetLedger ledger(budget_s, config.max_executions);
  OptimizationReport rep;
  rep.query_id = query.id();
  rep.method = "bo";
  rep.seed = seed;
  rep.budget_s = budget_s;

  std::unordered_map<std::string, ExecutionResult> cache;
  std::vector<Observation> obs;
  Incumbent inc;
  int step = 0;
  TrustRegion tr;
  auto record = [&](TraceKind kind, const std::string& text, const ExecutionResult& r, bool hit, int search_iters) {
    TraceRow row;
    row.step = step++;
    row.kind = kind;
    row.plan_text = text;
    row.cache_hit = hit;
    row.censored = r.censored;
    row.timeout_s = r.threshold_s;
    row.latency_s = r.latency_s;
    row.charge_s = hit ? 0.0 : r.charge();
    row.spent_s = ledger.spent();
    row.executions = ledger.executions();
    if (inc.exists()) row.best_latency_s = inc.latency_s;
    row.tr_length = tr.length;
    row.timeout_search_iterations = search_iters;
    rep.trace.push_back(std::move(row));
  };
  auto consider = [&](const JoinTree& plan, const std::string& text, const VectorXd& x, const ExecutionResult& r) {
    if (r.censored || (inc.exists() && !(*r.latency_s < inc.latency_s))) return false;
    inc.plan = plan;
    inc.plan_text = text;
    inc.x = x;
    inc.latency_s = *r.latency_s;
    return true;
  };

  for (const auto& e : init) {
    const std::string text = to_text(query, e.plan);
    const VectorXd x = embed(vae, codec.encode(query, e.plan));
    if (!cache.count(text)) {
      ledger.charge_unchecked(e.result);
      cache.emplace(text, e.result);
    }
    obs.push_back(observation_at(x, e.result));
    consider(e.plan, text, x, e.result);
    record(TraceKind::Init, text, e.result, false, 0);
  }
  auto finish = [&](std::string reason) {
    rep.stop_reason = std::move(reason);
    rep.spent_s = ledger.spent();
    rep.executions = ledger.executions();
    if (inc.exists()) {
      rep.best_plan = inc.plan;
      rep.best_plan_text = inc.plan_text;
      rep.best_latency_s = inc.latency_s;
    }
    return rep;
  };
  if (ledger.spent() > budget_s) {
    rep.warnings.push_back("init executions exceed the budget; returning the best init plan");
    return finish("budget_infeasible");
  }
  tr = TrustRegion::around(inc.exists() ? inc.x : obs.front().x, config.trust_region);

  SurrogateState state = fit(obs, config.surrogate, derive_seed(seed, 0));
  for (int it = 0; it < config.max_iterations; ++it) {
    rep.iterations = it;
    if (config.target_latency_s && inc.exists() && inc.latency_s <= *config.target_latency_s) return finish("target_reached");
    if (ledger.execution_limit_reached()) return finish("execution_limit");
    if (ledger.remaining() <= 0) return finish("budget_exhausted");

    // Widen the box when every candidate decodes to a plan already run.
    RankedCandidates rc;
    std::vector<JoinTree> plans;
    int pick = -1;
    CandidateConfig cc = config.candidates;
    for (int attempt = 0; attempt <= config.widen_attempts && pick < 0; ++attempt) {
      RankedCandidates r = rank_candidates(state, tr, cc, derive_seed(seed, 3 * it + 1) + attempt);
      auto p = decode_batch(vae, codec, query, r.points);
      for (int k = 0; k < static_cast<int>(p.size()); ++k) {
        if (!cache.count(to_text(query, p[k]))) {
          pick = k;
          break;
        }
      }
      if (attempt == 0 || pick >= 0) {
        rc = std::move(r);
        plans = std::move(p);
      }
      cc.box_scale *= 2.0;
    }
    if (pick < 0) pick = 0;
    const VectorXd x = rc.points.row(pick).transpose();
    const JoinTree& plan = plans[pick];
    const std::string text = to_text(query, plan);
    bool improved = false;
    if (auto hit = cache.find(text); hit != cache.end()) {
      obs.push_back(observation_at(x, hit->second));
      record(TraceKind::Bo, text, hit->second, true, 0);
    } else {
      const std::optional<double> y = inc.exists() ? std::optional<double>(inc.latency_s) : std::nullopt;
      TimeoutBounds bounds;
      bounds.tau_low = y ? std::max(*y, config.tau_min_s) : config.tau_cap_s;
      bounds.tau_high = y ? std::max(bounds.tau_low, config.tau_high_factor * *y) : config.tau_cap_s;
      const TimeoutDecision dec = select_timeout(state, x, y, config.kappa, bounds, config.timeout_relative_tolerance,
                                                 config.surrogate.fantasize_steps);
      if (!ledger.affordable(dec.tau_star)) return finish("budget_exhausted");
      const ExecutionResult r = executor.execute(query, plan, dec.tau_star, seed);
      ledger.charge(r);
      cache.emplace(text, r);
      obs.push_back(observation_at(x, r));
      improved = consider(plan, text, x, r);
      record(TraceKind::Bo, text, r, false, dec.search_iterations);
    }
    tr = update_trust_region(tr, improved);
    if (improved) tr.center = inc.x;
    state = fit(obs, config.surrogate, derive_seed(seed, 3 * it + 2), &state);
  }
  rep.iterations = config.max_iterations;
  return finish("iteration_limit");
}

OptimizationReport random_search(const Query& query, const JoinTree& default_plan, const SimulatedExecutor& executor,
                                 double budget_s, const RandomSearchConfig& config, uint64_t seed) {
  BudgetLedger ledger(budget_s, config.max_executions);
  OptimizationReport rep;
  rep.query_id = query.id();
  rep.method = "random";
  rep.seed = seed;
  rep.budget_s = budget_s;
  std::optional<double> best;
  std::unordered_map<std::string, ExecutionResult> cache;
  int step = 0;
  auto record = [&](TraceKind kind, const std::string& text, const ExecutionResult& r, bool hit) {
    TraceRow row;
    row.step = step++;
    row.kind = kind;
    row.plan_text = text;
    row.cache_hit = hit;
    row.censored = r.censored;
    row.timeout_s = r.threshold_s;
    row.latency_s = r.latency_s;
    row.charge_s = hit ? 0.0 : r.charge();
    row.spent_s = ledger.spent();
    row.executions = ledger.executions();
    row.best_latency_s = best;
    rep.trace.push_back(std::move(row));
  };
  auto finish = [&](std::string reason) {
    rep.stop_reason = std::move(reason);
    rep.spent_s = ledger.spent();
    rep.executions = ledger.executions();
    rep.best_latency_s = best;
    return rep;
  };
  auto run = [&](const JoinTree& plan, double timeout, TraceKind kind) {
    const std::string text = to_text(query, plan);
    auto r = executor.execute(query, plan, timeout, seed);
    ledger.charge(r);
    if (!r.censored && (!best || *r.latency_s < *best)) {
      best = r.latency_s;
      rep.best_plan = plan;
      rep.best_plan_text = text;
    }
    record(kind, text, r, false);
    cache.emplace(text, std::move(r));
  };

  // The default plan runs up to the cap, or whatever budget there is.
  const double first_timeout = std::min(config.tau_cap_s, budget_s);
  run(default_plan, first_timeout, TraceKind::Init);
  if (!best) rep.warnings.push_back("default plan timed out");

  Rng rng(seed);
  for (int it = 0; it < config.max_iterations; ++it) {
    rep.iterations = it;
    if (config.target_latency_s && best && *best <= *config.target_latency_s) return finish("target_reached");
    if (ledger.execution_limit_reached()) return finish("execution_limit");
    const JoinTree plan = random_plan(query, rng.next_u64());
    const std::string text = to_text(query, plan);
    if (auto hit = cache.find(text); hit != cache.end()) {
      record(TraceKind::Random, text, hit->second, true);
      continue;
    }
    const double timeout = best ? *best : config.tau_cap_s;
    if (!ledger.affordable(timeout)) return finish("budget_exhausted");
    run(plan, timeout, TraceKind::Random);
  }
  rep.iterations = config.max_iterations;
  return finish("iteration_limit");
}

}  // namespace planforge
