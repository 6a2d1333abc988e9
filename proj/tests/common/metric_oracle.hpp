// Exhaustive threshold sweep used as the reference for EER and minDCF.
#pragma once

#include <algorithm>
#include <limits>
#include <vector>

namespace testutil {

struct MetricOracle {
  double eer;
  double min_dcf;
};

// Brute force: sweep every midpoint between consecutive distinct scores plus
// +-inf, counting errors directly for each threshold.
inline MetricOracle brute_force_metrics(const std::vector<double>& s,
                                        const std::vector<bool>& tgt, double p_target) {
  std::vector<double> u = s;
  std::sort(u.begin(), u.end());
  u.erase(std::unique(u.begin(), u.end()), u.end());
  std::vector<double> th{-std::numeric_limits<double>::infinity()};
  for (std::size_t i = 0; i + 1 < u.size(); ++i) th.push_back(0.5 * (u[i] + u[i + 1]));
  th.push_back(std::numeric_limits<double>::infinity());

  double nt = 0, nn = 0;
  for (bool t : tgt) (t ? nt : nn) += 1;
  std::vector<double> far, frr;
  for (double t : th) {
    long fa = 0, miss = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (tgt[i] && s[i] < t) ++miss;
      if (!tgt[i] && s[i] >= t) ++fa;
    }
    far.push_back(fa / nn);
    frr.push_back(miss / nt);
  }
  MetricOracle o{-1.0, std::numeric_limits<double>::infinity()};
  for (std::size_t i = 0; i < th.size(); ++i) {
    o.min_dcf = std::min(o.min_dcf, frr[i] * p_target + far[i] * (1.0 - p_target));
    if (o.eer >= 0.0) continue;
    const double d = frr[i] - far[i];
    if (d == 0.0) {
      o.eer = far[i];
    } else if (d > 0.0) {
      const double dp = frr[i - 1] - far[i - 1];
      o.eer = far[i - 1] + dp / (dp - d) * (far[i] - far[i - 1]);
    }
  }
  o.min_dcf /= std::min(p_target, 1.0 - p_target);
  return o;
}

}  // namespace testutil
