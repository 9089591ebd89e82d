#pragma once

#include <span>

namespace dollocat {

// Effective sample size from the initial monotone sequence estimator of the
// autocovariance spectrum (Geyer). Returns the nominal size for white series,
// shrinking as autocorrelation grows; constant input reports its length.
double effective_sample_size(std::span<const double> series);

}  // namespace dollocat
