#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include <Eigen/Dense>

#include "n4n/core/error.hpp"
#include "n4n/tensorfit/fit.hpp"

namespace n4n {

/// Eigenvalues in descending order with matching orthonormal eigenvectors.
/// Each eigenvector has its first nonzero component positive.
struct EigenSystem {
  std::array<double, 3> values{};
  std::array<Eigen::Vector3d, 3> vectors{Eigen::Vector3d::UnitX(), Eigen::Vector3d::UnitY(), Eigen::Vector3d::UnitZ()};
};

namespace detail {

inline void canonical_sign(Eigen::Vector3d& v) {
  for (int i = 0; i < 3; ++i) {
    if (std::fabs(v[i]) > 1e-12) {
      if (v[i] < 0) v = -v;
      return;
    }
  }
}

/// Unit vector spanning the null space of a rank-2 matrix (largest row cross product).
inline Eigen::Vector3d null_vector(const Eigen::Matrix3d& m) {
  const Eigen::Vector3d r0 = m.row(0), r1 = m.row(1), r2 = m.row(2);
  const Eigen::Vector3d c[3] = {r0.cross(r1), r0.cross(r2), r1.cross(r2)};
  int best = 0;
  for (int i = 1; i < 3; ++i)
    if (c[i].squaredNorm() > c[best].squaredNorm()) best = i;
  const double n = c[best].norm();
  if (n > 0) return c[best] / n;
  return Eigen::Vector3d::UnitX();
}

/// Any orthonormal pair (u, w) completing v to a right-handed basis.
inline void complement(const Eigen::Vector3d& v, Eigen::Vector3d& u, Eigen::Vector3d& w) {
  if (std::fabs(v[0]) > std::fabs(v[1]))
    u = Eigen::Vector3d(-v[2], 0, v[0]) / std::sqrt(v[0] * v[0] + v[2] * v[2]);
  else
    u = Eigen::Vector3d(0, v[2], -v[1]) / std::sqrt(v[1] * v[1] + v[2] * v[2]);
  w = v.cross(u);
}

}  // namespace detail

/// Analytic eigen-decomposition of a symmetric 3x3 tensor (Dxx, Dxy, Dxz, Dyy, Dyz, Dzz).
/// Eigenvalues from the trigonometric solution of the characteristic cubic; the
/// best separated eigenvector from a null-space cross product, the remaining pair
/// from an exact Jacobi rotation in its orthogonal complement.
inline EigenSystem eig3_sym(const Tensor6& d) {
  for (double x : d) require(std::isfinite(x), ErrorCode::InvalidArgument, "non-finite tensor element");
  EigenSystem es;
  std::array<std::pair<double, Eigen::Vector3d>, 3> pairs;

  if (d[1] == 0 && d[2] == 0 && d[4] == 0) {
    pairs = {{{d[0], Eigen::Vector3d::UnitX()}, {d[3], Eigen::Vector3d::UnitY()}, {d[5], Eigen::Vector3d::UnitZ()}}};
  } else {
    Eigen::Matrix3d a;
    a << d[0], d[1], d[2], d[1], d[3], d[4], d[2], d[4], d[5];
    const double scale = a.cwiseAbs().maxCoeff();
    a /= scale;
    const double q = a.trace() / 3.0;
    const Eigen::Matrix3d shifted = a - q * Eigen::Matrix3d::Identity();
    const double p = std::sqrt((shifted * shifted).trace() / 6.0);
    if (p < 1e-15) {
      pairs = {{{scale * q, Eigen::Vector3d::UnitX()},
                {scale * q, Eigen::Vector3d::UnitY()},
                {scale * q, Eigen::Vector3d::UnitZ()}}};
    } else {
      const Eigen::Matrix3d b = shifted / p;
      const double half_det = std::clamp(b.determinant() / 2.0, -1.0, 1.0);
      const double angle = std::acos(half_det) / 3.0;
      const double beta_max = 2.0 * std::cos(angle);
      const double beta_min = 2.0 * std::cos(angle + 2.0 * std::numbers::pi / 3.0);
      // The extreme root farther from the middle one is the well-separated one.
      const double sep = half_det >= 0 ? q + p * beta_max : q + p * beta_min;
      Eigen::Vector3d v = detail::null_vector(a - sep * Eigen::Matrix3d::Identity());
      Eigen::Vector3d u, w;
      detail::complement(v, u, w);
      const double l_sep = v.dot(a * v);
      const double m00 = u.dot(a * u), m01 = u.dot(a * w), m11 = w.dot(a * w);
      double l1 = m00, l2 = m11;
      Eigen::Vector3d e1 = u, e2 = w;
      if (m01 != 0) {
        const double theta = (m11 - m00) / (2.0 * m01);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
        l1 = m00 - t * m01;
        l2 = m11 + t * m01;
        e1 = c * u - s * w;
        e2 = s * u + c * w;
      }
      pairs = {{{scale * l_sep, v}, {scale * l1, e1.normalized()}, {scale * l2, e2.normalized()}}};
    }
  }
  std::stable_sort(pairs.begin(), pairs.end(), [](const auto& x, const auto& y) { return x.first > y.first; });
  for (int i = 0; i < 3; ++i) {
    es.values[i] = pairs[i].first;
    es.vectors[i] = pairs[i].second;
    detail::canonical_sign(es.vectors[i]);
  }
  return es;
}

}  // namespace n4n
