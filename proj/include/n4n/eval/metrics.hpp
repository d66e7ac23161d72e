#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "n4n/core/error.hpp"
#include "n4n/stats/hypothesis.hpp"
#include "n4n/stats/ols.hpp"
#include "n4n/volume/volume.hpp"

namespace n4n::eval {

namespace detail {

inline void require_same_grid(const Mask& a, const Mask& b, const char* what) {
  require(a.same_grid(b), ErrorCode::ShapeMismatch, std::string(what) + ": masks are on different grids");
}

}  // namespace detail

/// 2|a & b| / (|a| + |b|), optionally counted inside a box only.
/// Both empty gives 1, exactly one empty gives 0.
inline double dice(const Mask& a, const Mask& b, const std::optional<BoundingBox>& box = std::nullopt) {
  detail::require_same_grid(a, b, "dice");
  const auto& dims = a.volume().dims();
  std::size_t na = 0, nb = 0, both = 0;
  auto visit = [&](std::size_t i) {
    const bool x = a[i], y = b[i];
    na += x;
    nb += y;
    both += x && y;
  };
  if (box) {
    require(box->within(a.volume()), ErrorCode::ShapeMismatch, "dice box outside the mask grid");
    for (auto z = box->lo[2]; z <= box->hi[2]; ++z)
      for (auto y = box->lo[1]; y <= box->hi[1]; ++y)
        for (auto x = box->lo[0]; x <= box->hi[0]; ++x)
          visit(std::size_t(x) + dims[0] * (std::size_t(y) + dims[1] * std::size_t(z)));
  } else {
    for (std::size_t i = 0; i < a.size(); ++i) visit(i);
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * double(both) / double(na + nb);
}

/// Cohen's kappa over every voxel of the grid.
inline double kappa(const Mask& s1, const Mask& s2) {
  detail::require_same_grid(s1, s2, "kappa");
  const std::size_t n = s1.size();
  std::size_t t1 = 0, t2 = 0, agree = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const bool x = s1[i], y = s2[i];
    t1 += x;
    t2 += y;
    agree += x == y;
  }
  const double N = double(n);
  const double po = double(agree) / N;
  const double pe = (double(t1) * double(t2) + double(n - t1) * double(n - t2)) / (N * N);
  if (pe >= 1.0) return 1.0;
  return (po - pe) / (1.0 - pe);
}

/// Scan-rescan relative difference in percent: |m2 - m1| / |mean| * 100.
inline double rescan_epsilon(double m1, double m2) {
  const double mean = 0.5 * (m1 + m2);
  require(mean != 0.0, ErrorCode::ZeroMean, "scan-rescan pair has zero mean");
  return std::fabs(m2 - m1) / std::fabs(mean) * 100.0;
}

/// R^2 of the least-squares line m2 = a + b m1.
inline double rescan_r2(std::span<const std::pair<double, double>> pairs) {
  require(pairs.size() >= 3, ErrorCode::InsufficientData, "rescan R^2 needs at least 3 pairs");
  const auto n = Eigen::Index(pairs.size());
  Eigen::MatrixXd X(n, 2);
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    X(i, 0) = 1.0;
    X(i, 1) = pairs[std::size_t(i)].first;
    y(i) = pairs[std::size_t(i)].second;
  }
  const double spread = X.col(1).maxCoeff() - X.col(1).minCoeff();
  require(spread > 0, ErrorCode::DegenerateVariance, "first-scan values have zero variance");
  require(y.maxCoeff() > y.minCoeff(), ErrorCode::DegenerateVariance, "rescan values have zero variance");
  return stats::ols_fit(y, X).r2;
}

/// Two-sided paired t-test on a - b.
inline stats::TTest paired_compare(std::span<const double> a, std::span<const double> b) {
  return stats::ttest_paired(a, b);
}

}  // namespace n4n::eval
