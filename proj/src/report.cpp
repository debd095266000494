#include "planforge/report.hpp"

#include <stdexcept>

namespace planforge {

double improvement_percent(double baseline_s, double method_s) {
  if (!(baseline_s > 0.0)) throw std::invalid_argument("baseline latency must be positive");
  return 100.0 * (baseline_s - method_s) / baseline_s;
}

std::vector<CdfPoint> improvement_cdf(const std::vector<double>& improvements_pct,
                                      const std::vector<double>& thresholds_pct) {
  std::vector<CdfPoint> out;
  out.reserve(thresholds_pct.size());
  for (double t : thresholds_pct) {
    int n = 0;
    for (double v : improvements_pct) n += v >= t;
    out.push_back({t, improvements_pct.empty() ? 0.0 : static_cast<double>(n) / improvements_pct.size()});
  }
  return out;
}

std::vector<double> default_cdf_thresholds() {
  std::vector<double> t;
  for (int p = -100; p <= 100; p += 5) t.push_back(p);
  return t;
}

}  // namespace planforge
