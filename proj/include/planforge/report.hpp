#pragma once

#include <string>
#include <vector>

namespace planforge {

/// Percent reduction of `method_s` relative to `baseline_s`; negative when
/// the method is slower.
double improvement_percent(double baseline_s, double method_s);

struct CdfPoint {
  double threshold_pct = 0.0;
  double fraction = 0.0;  // share of queries with improvement >= threshold
};

/// Complementary CDF of per-query improvements at the given thresholds.
std::vector<CdfPoint> improvement_cdf(const std::vector<double>& improvements_pct,
                                      const std::vector<double>& thresholds_pct);

/// -100, -95, ..., 100.
std::vector<double> default_cdf_thresholds();

}  // namespace planforge
