#include "dollocat/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace dollocat {

double effective_sample_size(std::span<const double> x) {
  const int n = static_cast<int>(x.size());
  if (n < 4) return n;
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= n;

  auto gamma = [&](int lag) {
    double g = 0.0;
    for (int i = 0; i + lag < n; ++i) g += (x[i] - mean) * (x[i + lag] - mean);
    return g / n;
  };

  const double g0 = gamma(0);
  if (g0 <= 0) return n;  // constant series

  // Sum paired autocovariances while they stay positive, then enforce
  // monotone decrease.
  double sigma2 = -g0;
  double prev_pair = std::numeric_limits<double>::infinity();
  for (int m = 0; 2 * m + 1 < n; ++m) {
    double pair = gamma(2 * m) + gamma(2 * m + 1);
    if (pair <= 0) break;
    pair = std::min(pair, prev_pair);
    prev_pair = pair;
    sigma2 += 2 * pair;
  }
  if (sigma2 <= 0) return n;
  return std::min(static_cast<double>(n), n * g0 / sigma2);
}

}  // namespace dollocat
