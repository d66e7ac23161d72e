#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "n4n/core/error.hpp"
#include "n4n/stats/special.hpp"

namespace n4n::stats {

/// Student t lower-tail probability P(T <= t).
inline double t_cdf(double t, double df) {
  require(df > 0, ErrorCode::InvalidArgument, "t distribution needs df > 0");
  if (std::isinf(t)) return t > 0 ? 1.0 : 0.0;
  const double x = df / (df + t * t);
  const double tail = 0.5 * incbeta(0.5 * df, 0.5, x);
  return t > 0 ? 1.0 - tail : tail;
}

/// Two-sided p-value P(|T| >= |t|).
inline double t_two_sided(double t, double df) {
  require(df > 0, ErrorCode::InvalidArgument, "t distribution needs df > 0");
  if (std::isinf(t)) return 0.0;
  return std::clamp(incbeta(0.5 * df, 0.5, df / (df + t * t)), 0.0, 1.0);
}

/// Survival function P(F >= f) for F(d1, d2).
inline double f_sf(double f, double d1, double d2) {
  require(d1 > 0 && d2 > 0, ErrorCode::InvalidArgument, "F distribution needs positive df");
  if (f <= 0) return 1.0;
  if (std::isinf(f)) return 0.0;
  return std::clamp(incbeta(0.5 * d2, 0.5 * d1, d2 / (d2 + d1 * f)), 0.0, 1.0);
}

inline double chi2_sf(double x, double df) {
  require(df > 0, ErrorCode::InvalidArgument, "chi-square needs df > 0");
  if (x <= 0) return 1.0;
  return std::clamp(incgamma_upper(0.5 * df, 0.5 * x), 0.0, 1.0);
}

namespace detail {

// 20-point Gauss-Legendre nodes on [-1, 1] by Newton iteration on P_n.
struct GaussLegendre {
  static constexpr int n = 20;
  double x[n], w[n];
  GaussLegendre() {
    for (int i = 0; i < n; ++i) {
      double z = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5)), dp = 0;
      for (int it = 0; it < 100; ++it) {
        double p0 = 1.0, p1 = 0.0;
        for (int j = 1; j <= n; ++j) {
          const double p2 = p1;
          p1 = p0;
          p0 = ((2.0 * j - 1.0) * z * p1 - (j - 1.0) * p2) / j;
        }
        dp = n * (z * p0 - p1) / (z * z - 1.0);
        const double dz = p0 / dp;
        z -= dz;
        if (std::fabs(dz) < 1e-16) break;
      }
      x[i] = z;
      w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
    }
  }
};

inline const GaussLegendre& gauss_legendre() {
  static const GaussLegendre gl;
  return gl;
}

template <class F>
double integrate(const F& f, double a, double b, int panels) {
  const auto& gl = gauss_legendre();
  const double h = (b - a) / panels;
  double total = 0;
  for (int p = 0; p < panels; ++p) {
    const double c = a + (p + 0.5) * h;
    double acc = 0;
    for (int i = 0; i < GaussLegendre::n; ++i) acc += gl.w[i] * f(c + 0.5 * h * gl.x[i]);
    total += 0.5 * h * acc;
  }
  return total;
}

// Range distribution of k standard normals: k * int phi(z) [Phi(z) - Phi(z - w)]^(k-1) dz.
inline double range_cdf_normal(double w, int k) {
  if (w <= 0) return 0.0;
  auto integrand = [&](double z) {
    const double d = normal_cdf(z) - normal_cdf(z - w);
    return d <= 0 ? 0.0 : normal_pdf(z) * std::pow(d, k - 1);
  };
  const double v = k * integrate(integrand, -8.5, 8.5, 16);
  return std::clamp(v, 0.0, 1.0);
}

}  // namespace detail

/// Studentized range CDF P(Q <= q) for k groups and df error degrees of freedom,
/// by numerical integration of the normal range distribution over the
/// chi / sqrt(df) scale density.
inline double ptukey(double q, int k, double df) {
  require(k >= 2, ErrorCode::InvalidArgument, "studentized range needs k >= 2");
  require(df >= 1, ErrorCode::InvalidArgument, "studentized range needs df >= 1");
  if (q <= 0) return 0.0;
  if (std::isinf(q)) return 1.0;
  if (df > 1e5) return detail::range_cdf_normal(q, k);
  const double log_norm = 0.5 * df * std::log(df) - std::lgamma(0.5 * df) - (0.5 * df - 1.0) * std::log(2.0);
  auto integrand = [&](double s) {
    if (s <= 0) return 0.0;
    const double log_g = log_norm + (df - 1.0) * std::log(s) - 0.5 * df * s * s;
    if (log_g < -45) return 0.0;
    return std::exp(log_g) * detail::range_cdf_normal(q * s, k);
  };
  const double spread = 12.0 / std::sqrt(df);
  const double lo = std::max(0.0, 1.0 - spread), hi = 1.0 + spread;
  return std::clamp(detail::integrate(integrand, lo, hi, 16), 0.0, 1.0);
}

inline double tukey_sf(double q, int k, double df) { return std::clamp(1.0 - ptukey(q, k, df), 0.0, 1.0); }

}  // namespace n4n::stats
