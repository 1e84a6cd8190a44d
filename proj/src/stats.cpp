#include "scbf/stats.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace scbf {

namespace {

// log C(n, k)
double log_choose(int n, int k) {
  return std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0);
}

// P[X <= k] for X ~ Binomial(n, p), computed stably in log space.
double binom_cdf(int k, int n, double p) {
  if (k < 0) return 0.0;
  if (k >= n) return 1.0;
  if (p <= 0.0) return 1.0;
  if (p >= 1.0) return 0.0;
  double acc = 0.0;
  const double lp = std::log(p);
  const double lq = std::log1p(-p);
  for (int j = 0; j <= k; ++j) {
    acc += std::exp(log_choose(n, j) + j * lp + (n - j) * lq);
  }
  return std::min(acc, 1.0);
}

// Solve f(p) = target for monotone f by bisection on [0, 1].
template <typename F>
double bisect(F f, double target, bool increasing) {
  double lo = 0.0, hi = 1.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    const bool above = f(mid) > target;
    if (above == increasing) {
      hi = mid;
    } else {
      lo = mid;
    }
    if (hi - lo < 1e-12) break;
  }
  return 0.5 * (lo + hi);
}

}  // namespace

BinomialCI clopper_pearson(int k, int n, double confidence) {
  if (n <= 0 || k < 0 || k > n) throw std::invalid_argument("clopper_pearson: bad k/n");
  const double alpha = 1.0 - confidence;
  BinomialCI ci;
  // Lower bound: largest p with P[X >= k] <= alpha/2, i.e. P[X <= k-1] >= 1 - alpha/2.
  if (k == 0) {
    ci.lo = 0.0;
  } else {
    ci.lo = bisect([&](double p) { return binom_cdf(k - 1, n, p); }, 1.0 - alpha / 2.0,
                   /*increasing=*/false);
  }
  // Upper bound: smallest p with P[X <= k] <= alpha/2.
  if (k == n) {
    ci.hi = 1.0;
  } else {
    ci.hi = bisect([&](double p) { return binom_cdf(k, n, p); }, alpha / 2.0,
                   /*increasing=*/false);
  }
  return ci;
}

double empirical_quantile(std::vector<double> samples, double q) {
  if (samples.empty()) throw std::invalid_argument("empirical_quantile: no samples");
  if (q <= 0.0) return *std::min_element(samples.begin(), samples.end());
  if (q >= 1.0) return *std::max_element(samples.begin(), samples.end());
  std::sort(samples.begin(), samples.end());
  const auto n = static_cast<long>(samples.size());
  long idx = static_cast<long>(std::ceil(q * n)) - 1;
  idx = std::clamp(idx, 0L, n - 1);
  return samples[static_cast<std::size_t>(idx)];
}

double tolerance_upper_bound(std::vector<double> samples, double coverage,
                             double confidence) {
  if (samples.empty()) throw std::invalid_argument("tolerance_upper_bound: no samples");
  std::sort(samples.begin(), samples.end());
  const int n = static_cast<int>(samples.size());
  // Smallest m such that P[Binomial(n, coverage) <= m - 1] >= confidence:
  // the m-th order statistic then covers >= `coverage` with the requested
  // confidence.
  for (int m = 1; m <= n; ++m) {
    if (binom_cdf(m - 1, n, coverage) >= confidence) {
      return samples[static_cast<std::size_t>(m - 1)];
    }
  }
  return samples.back();
}

double mean(const std::vector<double>& xs) {
  if (xs.empty()) return 0.0;
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

double sample_std(const std::vector<double>& xs) {
  if (xs.size() < 2) return 0.0;
  const double m = mean(xs);
  double s = 0.0;
  for (double x : xs) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(xs.size() - 1));
}

double standard_error(const std::vector<double>& xs) {
  if (xs.empty()) return 0.0;
  return sample_std(xs) / std::sqrt(static_cast<double>(xs.size()));
}

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace scbf
