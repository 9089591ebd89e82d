#pragma once

// p-value helpers for the distributional tests.

#include <algorithm>
#include <boost/math/distributions/chi_squared.hpp>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace teststat {

// Pearson chi-squared p-value against given expected counts (already scaled
// to the observed total).
inline double chi2_pvalue(const std::vector<double>& observed, const std::vector<double>& expected) {
  if (observed.size() != expected.size()) throw std::runtime_error("chi2: size mismatch");
  double stat = 0;
  int dof = -1;
  for (std::size_t i = 0; i < observed.size(); ++i) {
    if (expected[i] <= 0) continue;
    stat += (observed[i] - expected[i]) * (observed[i] - expected[i]) / expected[i];
    ++dof;
  }
  if (dof < 1) return 1.0;
  boost::math::chi_squared dist(dof);
  return boost::math::cdf(boost::math::complement(dist, stat));
}

// Two-sample chi-squared over a contingency table of counts.
inline double chi2_two_sample_pvalue(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw std::runtime_error("chi2: size mismatch");
  double na = 0, nb = 0;
  for (double x : a) na += x;
  for (double x : b) nb += x;
  double stat = 0;
  int dof = -1;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double col = a[i] + b[i];
    if (col <= 0) continue;
    const double ea = col * na / (na + nb);
    const double eb = col * nb / (na + nb);
    stat += (a[i] - ea) * (a[i] - ea) / ea + (b[i] - eb) * (b[i] - eb) / eb;
    ++dof;
  }
  if (dof < 1) return 1.0;
  boost::math::chi_squared dist(dof);
  return boost::math::cdf(boost::math::complement(dist, stat));
}

// One-sample Kolmogorov-Smirnov p-value against U(lo, hi), with an effective
// sample size for autocorrelated input.
inline double ks_uniform_pvalue(std::vector<double> x, double lo, double hi, double n_eff) {
  std::sort(x.begin(), x.end());
  const double n = static_cast<double>(x.size());
  double d = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double f = (x[i] - lo) / (hi - lo);
    d = std::max(d, std::abs((i + 1) / n - f));
    d = std::max(d, std::abs(f - i / n));
  }
  const double ne = std::min(n_eff, n);
  const double lambda = (std::sqrt(ne) + 0.12 + 0.11 / std::sqrt(ne)) * d;
  double p = 0;
  for (int k = 1; k <= 100; ++k) p += 2 * std::pow(-1.0, k - 1) * std::exp(-2.0 * k * k * lambda * lambda);
  return std::clamp(p, 0.0, 1.0);
}

inline double poisson_pmf(int k, double mean) {
  return std::exp(k * std::log(mean) - mean - std::lgamma(k + 1.0));
}

}  // namespace teststat
