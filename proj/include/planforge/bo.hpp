#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "planforge/codec.hpp"
#include "planforge/executor.hpp"
#include "planforge/plan.hpp"
#include "planforge/surrogate.hpp"
#include "planforge/vae.hpp"

namespace planforge {

struct TrustRegionConfig {
  double length_init = 0.8;
  double length_min = 1.0 / 128.0;
  double length_max = 1.6;
  int success_tolerance = 3;
  int failure_tolerance = 10;
};

struct TrustRegion {
  Eigen::VectorXd center;
  double length = 0.8;
  int success_count = 0;
  int failure_count = 0;
  int restarts = 0;
  TrustRegionConfig config;

  static TrustRegion around(Eigen::VectorXd center, const TrustRegionConfig& config = {});
};

/// Streak bookkeeping: doubling after success_tolerance consecutive
/// improvements, halving after failure_tolerance consecutive failures, and a
/// restart at length_init once the length falls below length_min.
TrustRegion update_trust_region(TrustRegion tr, bool improved);

/// Cost(S_t): completed executions cost their latency, timed out ones their
/// timeout. An optional cap on the execution count applies alongside B.
class BudgetLedger {
 public:
  explicit BudgetLedger(double budget_s, int max_executions = 0);

  double budget() const { return budget_; }
  double spent() const { return spent_; }
  double remaining() const { return budget_ - spent_; }
  int executions() const { return executions_; }
  int max_executions() const { return max_executions_; }
  bool execution_limit_reached() const { return max_executions_ > 0 && executions_ >= max_executions_; }
  /// True when an execution that may cost up to `worst_case_s` still fits.
  bool affordable(double worst_case_s) const;
  /// Records a finished execution; throws std::logic_error when it overspends.
  void charge(const ExecutionResult& result);
  /// Init executions performed before the run may exceed the budget.
  void charge_unchecked(const ExecutionResult& result);

 private:
  double budget_;
  int max_executions_;
  double spent_ = 0.0;
  int executions_ = 0;
};

struct Incumbent {
  std::optional<JoinTree> plan;
  std::string plan_text;
  Eigen::VectorXd x;
  double latency_s = 0.0;

  bool exists() const { return plan.has_value(); }
};

struct TimeoutBounds {
  double tau_low = 0.0;
  double tau_high = 0.0;
};

struct TimeoutDecision {
  double tau_star = 0.0;
  double kappa = 2.0;
  bool constraint_satisfied = false;
  int search_iterations = 0;
};

/// y* <= mu'(tau) - kappa sigma'(tau) after fantasizing a timeout at tau,
/// all in standardized units.
bool timeout_constraint(const SurrogateState& state, const Eigen::VectorXd& x, double tau_s, double incumbent_y_s,
                        double kappa, int fantasize_steps = 25);

/// Smallest tau in the bounds satisfying the constraint, by bisection in
/// log space to `relative_tolerance`. Returns tau_low when it already holds,
/// tau_high when no tau in range does or when there is no incumbent.
TimeoutDecision select_timeout(const SurrogateState& state, const Eigen::VectorXd& x,
                               std::optional<double> incumbent_y_s, double kappa, TimeoutBounds bounds,
                               double relative_tolerance = 0.05, int fantasize_steps = 25);

struct CandidateConfig {
  int n_candidates = 256;
  /// Multiplies the trust-region side length into latent-space units.
  double box_scale = 4.0;
  /// Expected number of perturbed coordinates per candidate.
  double perturbed_dims = 20.0;
};

/// Candidate points in the lengthscale-weighted trust-region box, sorted by
/// one joint Thompson sample (best first).
struct RankedCandidates {
  Eigen::MatrixXd points;  // rows
  Eigen::VectorXd sample;  // sampled standardized values, ascending
};
RankedCandidates rank_candidates(const SurrogateState& state, const TrustRegion& tr, const CandidateConfig& config,
                                 uint64_t seed);
Eigen::VectorXd select_candidate(const SurrogateState& state, const TrustRegion& tr, const CandidateConfig& config,
                                 uint64_t seed);

struct BoConfig {
  CandidateConfig candidates;
  TrustRegionConfig trust_region;
  SurrogateConfig surrogate;
  double kappa = 2.0;
  double timeout_relative_tolerance = 0.05;
  /// tau_high = factor * y*; the global cap applies before any incumbent.
  double tau_high_factor = 10.0;
  double tau_cap_s = 1e4;
  double tau_min_s = 1e-9;
  int max_executions = 0;  // 0: bounded by the budget only
  int max_iterations = 5000;
  /// Extra candidate rounds, each doubling the box, when no candidate
  /// decodes to an unseen plan.
  int widen_attempts = 3;
  /// Stop once the incumbent is at or below this latency.
  std::optional<double> target_latency_s;
};

enum class TraceKind { Init, Bo, Random };

struct TraceRow {
  int step = 0;
  TraceKind kind = TraceKind::Bo;
  std::string plan_text;
  bool cache_hit = false;
  bool censored = false;
  double timeout_s = 0.0;
  std::optional<double> latency_s;
  double charge_s = 0.0;
  double spent_s = 0.0;
  int executions = 0;
  std::optional<double> best_latency_s;
  double tr_length = 0.0;
  int timeout_search_iterations = 0;
};

struct OptimizationReport {
  std::string query_id;
  std::string method;
  uint64_t seed = 0;
  double budget_s = 0.0;
  double spent_s = 0.0;
  int executions = 0;
  int iterations = 0;
  std::optional<JoinTree> best_plan;
  std::string best_plan_text;
  std::optional<double> best_latency_s;
  std::string stop_reason;
  std::vector<std::string> warnings;
  std::vector<TraceRow> trace;

  /// Executions (counted from `after_executions`) until the incumbent first
  /// reaches `target_s`; nullopt when it never does.
  std::optional<int> executions_to_reach(double target_s, int after_executions = 0) const;
};

/// A plan from an initialization strategy with its execution outcome.
struct InitEntry {
  JoinTree plan;
  ExecutionResult result;
  bool cache_hit = false;
};

/// Executes distinct init plans in order. The first runs with the global cap;
/// later ones time out at the best latency seen so far.
std::vector<InitEntry> execute_init(const Query& query, const std::vector<JoinTree>& plans,
                                    const SimulatedExecutor& executor, double tau_cap_s, uint64_t seed);

OptimizationReport run_optimization(const Query& query, const VaeModel& vae, const PlanCodec& codec,
                                    const SimulatedExecutor& executor, const std::vector<InitEntry>& init,
                                    double budget_s, const BoConfig& config, uint64_t seed);

struct RandomSearchConfig {
  int max_executions = 0;
  int max_iterations = 100000;
  double tau_cap_s = 1e4;
  std::optional<double> target_latency_s;
};

/// Runs the default plan, then random cross-join-free plans with timeout
/// equal to the best latency seen.
OptimizationReport random_search(const Query& query, const JoinTree& default_plan, const SimulatedExecutor& executor,
                                 double budget_s, const RandomSearchConfig& config, uint64_t seed);

std::string trace_kind_name(TraceKind k);

}  // namespace planforge
