#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace falb::testutil {

// Upper chi-square critical values at significance 0.01 (stat below the
// value <=> p > 0.01). Frozen from the regularized-gamma inverse.
inline double chi2_crit_p01(int df) {
  switch (df) {
    case 1: return 6.635;
    case 9: return 21.666;
    case 127: return 166.987;
    case 255: return 310.457;
    case 511: return 588.298;
    default: break;
  }
  // Wilson-Hilferty approximation for other dfs.
  double z = 2.326347874;  // Phi^-1(0.99)
  double d = static_cast<double>(df);
  double t = 1.0 - 2.0 / (9.0 * d) + z * std::sqrt(2.0 / (9.0 * d));
  return d * t * t * t;
}

// Two-sample Kolmogorov-Smirnov: true when the p-value exceeds 0.01.
inline bool ks_two_sample_p_above_01(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("ks: empty sample");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  double d = 0;
  size_t i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= x) ++i;
    while (j < b.size() && b[j] <= x) ++j;
    double fa = static_cast<double>(i) / a.size();
    double fb = static_cast<double>(j) / b.size();
    d = std::max(d, std::abs(fa - fb));
  }
  double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  double crit = 1.62762 * std::sqrt((na + nb) / (na * nb));  // c(alpha=0.01)
  return d < crit;
}

}  // namespace falb::testutil
