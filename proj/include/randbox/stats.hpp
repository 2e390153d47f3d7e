#pragma once

/// Small statistics helpers for the seeded experiments: summary moments and
/// a one-sided paired t-test (Student-t CDF via the regularized incomplete
/// beta function).

#include <cmath>
#include <vector>

#include "randbox/common.hpp"

namespace randbox {

inline double mean(const std::vector<double>& v) {
  double acc = 0.0;
  for (double x : v) acc += x;
  return acc / static_cast<double>(v.size());
}

inline double sample_stddev(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double acc = 0.0;
  for (double x : v) acc += (x - m) * (x - m);
  return std::sqrt(acc / static_cast<double>(v.size() - 1));
}

namespace detail {

// Lentz continued fraction for the incomplete beta function.
inline double betacf(double a, double b, double x) {
  constexpr int kMaxIter = 200;
  constexpr double kEps = 3e-14;
  constexpr double kFpMin = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kFpMin) d = kFpMin;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::abs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::abs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) break;
  }
  return h;
}

inline double incomplete_beta(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double ln_beta =
      std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) +
      b * std::log(1.0 - x);
  const double bt = std::exp(ln_beta);
  if (x < (a + 1.0) / (a + b + 2.0)) return bt * betacf(a, b, x) / a;
  return 1.0 - bt * betacf(b, a, 1.0 - x) / b;
}

}  // namespace detail

/// P(T <= t) for Student's t with df degrees of freedom.
inline double student_t_cdf(double t, double df) {
  const double x = df / (df + t * t);
  const double p = 0.5 * detail::incomplete_beta(0.5 * df, 0.5, x);
  return t >= 0.0 ? 1.0 - p : p;
}

struct PairedTestResult {
  double mean_diff = 0.0;
  double t_stat = 0.0;
  double p_value = 1.0;  // one-sided, H1: mean diff > 0
  int n = 0;
};

/// One-sided paired t-test on diffs = a - b, H1: E[diff] > 0.
inline PairedTestResult paired_t_test_greater(const std::vector<double>& diffs) {
  PairedTestResult r;
  r.n = static_cast<int>(diffs.size());
  RB_CHECK_MSG(r.n >= 2, "paired test: need at least 2 pairs");
  r.mean_diff = mean(diffs);
  const double sd = sample_stddev(diffs);
  if (sd == 0.0) {
    r.t_stat = r.mean_diff > 0.0 ? 1e12 : (r.mean_diff < 0.0 ? -1e12 : 0.0);
  } else {
    r.t_stat = r.mean_diff / (sd / std::sqrt(static_cast<double>(r.n)));
  }
  r.p_value = 1.0 - student_t_cdf(r.t_stat, static_cast<double>(r.n - 1));
  return r;
}

}  // namespace randbox
