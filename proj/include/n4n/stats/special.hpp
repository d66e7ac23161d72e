#pragma once

// Regularized incomplete beta and gamma functions (Lentz continued fractions).

#include <cmath>
#include <limits>
#include <numbers>

#include "n4n/core/error.hpp"

namespace n4n::stats {

namespace detail {

inline constexpr int kMaxIter = 200000;
inline constexpr double kEps = 1e-16;
inline constexpr double kTiny = 1e-300;

// Continued fraction for I_x(a, b); converges quickly for x < (a + 1) / (a + b + 2).
inline double beta_cf(double a, double b, double x) {
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < kEps) return h;
  }
  fail(ErrorCode::InvalidArgument, "incomplete beta continued fraction did not converge");
}

}  // namespace detail

inline double log_beta(double a, double b) { return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b); }

/// Regularized incomplete beta I_x(a, b).
inline double incbeta(double a, double b, double x) {
  require(a > 0 && b > 0, ErrorCode::InvalidArgument, "incbeta needs positive shape parameters");
  require(x >= 0 && x <= 1, ErrorCode::InvalidArgument, "incbeta argument outside [0, 1]");
  if (x == 0) return 0.0;
  if (x == 1) return 1.0;
  const double front = std::exp(a * std::log(x) + b * std::log1p(-x) - log_beta(a, b));
  if (x < (a + 1.0) / (a + b + 2.0)) return front * detail::beta_cf(a, b, x) / a;
  return 1.0 - front * detail::beta_cf(b, a, 1.0 - x) / b;
}

/// Upper tail 1 - I_x(a, b), evaluated without cancellation.
inline double incbeta_upper(double a, double b, double x) { return incbeta(b, a, 1.0 - x); }

/// Regularized lower incomplete gamma P(a, x).
inline double incgamma_lower(double a, double x) {
  require(a > 0, ErrorCode::InvalidArgument, "incgamma needs a positive shape parameter");
  require(x >= 0, ErrorCode::InvalidArgument, "incgamma argument must be non-negative");
  if (x == 0) return 0.0;
  const double log_front = a * std::log(x) - x - std::lgamma(a);
  if (x < a + 1.0) {
    double ap = a, sum = 1.0 / a, del = sum;
    for (int n = 0; n < detail::kMaxIter; ++n) {
      ap += 1.0;
      del *= x / ap;
      sum += del;
      if (std::fabs(del) < std::fabs(sum) * detail::kEps) return sum * std::exp(log_front);
    }
    fail(ErrorCode::InvalidArgument, "incomplete gamma series did not converge");
  }
  double b = x + 1.0 - a, c = 1.0 / detail::kTiny, d = 1.0 / b, h = d;
  for (int i = 1; i <= detail::kMaxIter; ++i) {
    const double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::fabs(d) < detail::kTiny) d = detail::kTiny;
    c = b + an / c;
    if (std::fabs(c) < detail::kTiny) c = detail::kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < detail::kEps) return 1.0 - std::exp(log_front) * h;
  }
  fail(ErrorCode::InvalidArgument, "incomplete gamma continued fraction did not converge");
}

inline double incgamma_upper(double a, double x) { return 1.0 - incgamma_lower(a, x); }

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

inline double normal_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi); }

}  // namespace n4n::stats
