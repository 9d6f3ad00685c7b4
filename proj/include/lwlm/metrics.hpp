// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <utility>
#include <vector>

namespace lwlm::harness {

/// Summary statistics over nonnegative per-sample errors. Percentiles use
/// linear interpolation between order statistics.
struct ErrorReport {
  std::vector<double> per_sample_errors;  // sorted ascending
  double mean = 0;
  double median = 0;
  double p90 = 0;
};

ErrorReport make_error_report(std::vector<double> errors);

/// p in [0, 1] over an ascending-sorted list; linear interpolation.
double percentile_linear(const std::vector<double>& sorted, double p);

/// Sorted (error, cumulative fraction) pairs with fraction i/N at the i-th
/// sorted error (1-based).
std::vector<std::pair<double, double>> error_cdf(const std::vector<double>& errors);

}  // namespace lwlm::harness
