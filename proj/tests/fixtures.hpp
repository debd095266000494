#pragma once

#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "planforge/schema.hpp"
#include "planforge/surrogate.hpp"

namespace planforge::fixtures {

/// Tables A, B, C with alias_k = 1. A and C both reference B.
inline Schema abc_schema(int64_t rows_a = 1000, int64_t rows_b = 100, int64_t rows_c = 200) {
  Schema s;
  s.alias_k = 1;
  s.seed = 0;
  s.tables = {{"A", rows_a, "id"}, {"B", rows_b, "id"}, {"C", rows_c, "id"}};
  s.fk_edges = {{0, "b_id", 1}, {2, "b_id", 1}};
  s.validate();
  return s;
}

inline Query abc_query(const Schema& s, std::vector<double> sel = {1.0, 1.0, 1.0}) {
  return Query(s, {{0, 1}, {1, 1}, {2, 1}}, std::move(sel), "abc");
}

inline Query ab_query(const Schema& s) { return Query(s, {{0, 1}, {1, 1}}, {1.0, 1.0}, "ab"); }

/// Smooth 1-d log-latency bowl, latency = exp(0.5 + x^2), nine completed
/// executions on [-2, 2]. The incumbent is exp(0.5) at x = 0.
struct TimeoutFixture {
  SurrogateState state;
  double incumbent_s = std::exp(0.5);
  Eigen::VectorXd interior_candidate;   // optimal tau lies strictly inside the bounds
  Eigen::VectorXd confident_candidate;  // already satisfies the constraint at tau_low
};

inline TimeoutFixture timeout_fixture() {
  std::vector<Observation> obs;
  for (int i = 0; i < 9; ++i) {
    const double x = -2.0 + 0.5 * i;
    Eigen::VectorXd v(1);
    v << x;
    obs.push_back(Observation::completed(v, std::exp(0.5 + x * x), 1e4));
  }
  TimeoutFixture f;
  f.state = fit(obs, SurrogateConfig{}, 1);
  f.interior_candidate = Eigen::VectorXd::Constant(1, 0.25);
  f.confident_candidate = Eigen::VectorXd::Constant(1, 0.4);
  return f;
}

}  // namespace planforge::fixtures
