#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "n4n/core/error.hpp"
#include "n4n/stats/distributions.hpp"

namespace n4n::stats {

struct OlsResult {
  Eigen::VectorXd beta;
  Eigen::VectorXd se;
  Eigen::VectorXd t;
  Eigen::VectorXd p;  // two-sided, df = n - p
  Eigen::VectorXd residuals;
  double rss = 0;
  double sigma2 = 0;
  double r2 = std::numeric_limits<double>::quiet_NaN();  // NaN when y is constant
  std::size_t df = 0;
};

/// Least squares through a column-pivoted QR. X is expected to carry its own
/// intercept column; R^2 is computed against the centred total sum of squares.
inline OlsResult ols_fit(const Eigen::VectorXd& y, const Eigen::MatrixXd& X) {
  const auto n = static_cast<std::size_t>(X.rows());
  const auto p = static_cast<std::size_t>(X.cols());
  require(static_cast<std::size_t>(y.size()) == n, ErrorCode::ShapeMismatch, "y and X row counts differ");
  require(p >= 1, ErrorCode::InvalidArgument, "design matrix has no columns");
  require(n > p, ErrorCode::InsufficientData,
          "need more observations (" + std::to_string(n) + ") than regressors (" + std::to_string(p) + ")");
  require(X.allFinite() && y.allFinite(), ErrorCode::InvalidArgument, "non-finite value in regression input");

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
  const double scale = X.cwiseAbs().maxCoeff();
  qr.setThreshold(1e-10);
  require(scale > 0 && static_cast<std::size_t>(qr.rank()) == p, ErrorCode::SingularDesign,
          "design matrix is rank deficient (rank " + std::to_string(qr.rank()) + " of " + std::to_string(p) + ")");

  OlsResult r;
  r.beta = qr.solve(y);
  r.residuals = y - X * r.beta;
  r.rss = r.residuals.squaredNorm();
  r.df = n - p;
  r.sigma2 = r.rss / double(r.df);

  const Eigen::MatrixXd R = qr.matrixR().topLeftCorner(p, p).triangularView<Eigen::Upper>();
  const Eigen::MatrixXd Rinv = R.triangularView<Eigen::Upper>().solve(Eigen::MatrixXd::Identity(p, p));
  const Eigen::VectorXd diag_perm = Rinv.rowwise().squaredNorm();
  Eigen::VectorXd diag(p);
  const auto& perm = qr.colsPermutation().indices();
  for (std::size_t j = 0; j < p; ++j) diag(perm(j)) = diag_perm(j);
  r.se = (r.sigma2 * diag).cwiseSqrt();

  r.t.resize(p);
  r.p.resize(p);
  for (std::size_t j = 0; j < p; ++j) {
    if (r.se(j) > 0) {
      r.t(j) = r.beta(j) / r.se(j);
      r.p(j) = t_two_sided(r.t(j), double(r.df));
    } else {
      r.t(j) = r.beta(j) == 0 ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), r.beta(j));
      r.p(j) = r.beta(j) == 0 ? 1.0 : 0.0;
    }
  }

  const double mean = y.mean();
  const double tss = (y.array() - mean).square().sum();
  if (tss > 0) r.r2 = 1.0 - r.rss / tss;
  return r;
}

/// Prepends an intercept column.
inline Eigen::MatrixXd with_intercept(const Eigen::MatrixXd& covariates) {
  Eigen::MatrixXd X(covariates.rows(), covariates.cols() + 1);
  X.col(0).setOnes();
  X.rightCols(covariates.cols()) = covariates;
  return X;
}

}  // namespace n4n::stats
