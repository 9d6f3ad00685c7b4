// SPDX-License-Identifier: Apache-2.0
#include "lwlm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace lwlm::harness {

double percentile_linear(const std::vector<double>& sorted, double p) {
  if (sorted.empty()) throw std::invalid_argument("percentile_linear: empty input");
  if (p < 0.0 || p > 1.0) throw std::invalid_argument("percentile_linear: p outside [0,1]");
  const double pos = p * static_cast<double>(sorted.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = static_cast<std::size_t>(std::ceil(pos));
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
}

ErrorReport make_error_report(std::vector<double> errors) {
  if (errors.empty()) throw std::invalid_argument("make_error_report: empty error list");
  for (double e : errors)
    if (e < 0.0) throw std::invalid_argument("make_error_report: negative error");
  std::sort(errors.begin(), errors.end());
  ErrorReport r;
  r.mean = std::accumulate(errors.begin(), errors.end(), 0.0) / static_cast<double>(errors.size());
  r.median = percentile_linear(errors, 0.5);
  r.p90 = percentile_linear(errors, 0.9);
  r.per_sample_errors = std::move(errors);
  return r;
}

std::vector<std::pair<double, double>> error_cdf(const std::vector<double>& errors) {
  if (errors.empty()) throw std::invalid_argument("error_cdf: empty input");
  std::vector<double> sorted = errors;
  std::sort(sorted.begin(), sorted.end());
  std::vector<std::pair<double, double>> out;
  out.reserve(sorted.size());
  const double n = static_cast<double>(sorted.size());
  for (std::size_t i = 0; i < sorted.size(); ++i)
    out.emplace_back(sorted[i], static_cast<double>(i + 1) / n);
  return out;
}

}  // namespace lwlm::harness
