#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace scbf {

struct BinomialCI {
  double lo = 0.0;
  double hi = 1.0;
};

/// Exact (Clopper-Pearson) two-sided binomial confidence interval for k
/// successes out of n trials at the given confidence level.
BinomialCI clopper_pearson(int k, int n, double confidence = 0.95);

/// Empirical quantile (higher order statistic: smallest x with
/// F_hat(x) >= q). `samples` need not be sorted.
double empirical_quantile(std::vector<double> samples, double q);

/// Distribution-free upper tolerance bound: the smallest order statistic
/// that covers at least `coverage` of the distribution with confidence
/// `confidence`. Falls back to the sample maximum when n is too small.
double tolerance_upper_bound(std::vector<double> samples, double coverage,
                             double confidence);

double mean(const std::vector<double>& xs);
double sample_std(const std::vector<double>& xs);
/// Standard error of the mean.
double standard_error(const std::vector<double>& xs);

/// FNV-1a 64-bit hash of a byte string.
std::uint64_t fnv1a64(const std::string& bytes);

}  // namespace scbf
