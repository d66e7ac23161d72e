#pragma once

#include <array>
#include <cmath>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "n4n/core/error.hpp"
#include "n4n/core/fileio.hpp"

namespace n4n {

/// b-values below this are treated as unweighted (b=0) volumes.
inline constexpr double kB0Threshold = 1.0;

struct DiffusionVolume {
  double b = 0;                         // s/mm^2
  std::array<double, 3> g{0, 0, 0};     // unit direction for b > 0
};

/// Acquisition scheme: one entry per DWI volume, in file order.
class DiffusionScheme {
 public:
  DiffusionScheme() = default;
  explicit DiffusionScheme(std::vector<DiffusionVolume> vols) : vols_(std::move(vols)) { validate(); }

  std::size_t size() const { return vols_.size(); }
  const DiffusionVolume& operator[](std::size_t i) const { return vols_[i]; }
  const std::vector<DiffusionVolume>& volumes() const { return vols_; }

  std::size_t b0_count() const {
    std::size_t n = 0;
    for (const auto& v : vols_) n += v.b < kB0Threshold;
    return n;
  }

 private:
  void validate() const {
    require(b0_count() >= 1, ErrorCode::DegenerateScheme, "scheme needs at least one b=0 volume");
    for (const auto& v : vols_) {
      require(v.b >= 0 && std::isfinite(v.b), ErrorCode::DegenerateScheme, "b-values must be finite and >= 0");
      if (v.b < kB0Threshold) continue;
      const double n = std::sqrt(v.g[0] * v.g[0] + v.g[1] * v.g[1] + v.g[2] * v.g[2]);
      require(std::fabs(n - 1.0) <= 1e-6, ErrorCode::DegenerateScheme, "gradient directions must be unit length");
    }
  }

  std::vector<DiffusionVolume> vols_;
};

/// Log-linear Stejskal-Tanner design matrix acting on
/// (ln S0, Dxx, Dxy, Dxz, Dyy, Dyz, Dzz). Fails unless it has full column rank.
inline Eigen::MatrixXd design_matrix(const DiffusionScheme& scheme) {
  Eigen::MatrixXd X(static_cast<Eigen::Index>(scheme.size()), 7);
  for (std::size_t i = 0; i < scheme.size(); ++i) {
    const auto& v = scheme[i];
    const double b = v.b < kB0Threshold ? 0.0 : v.b;
    const auto& g = v.g;
    const auto r = static_cast<Eigen::Index>(i);
    X(r, 0) = 1.0;
    X(r, 1) = -b * g[0] * g[0];
    X(r, 2) = -2 * b * g[0] * g[1];
    X(r, 3) = -2 * b * g[0] * g[2];
    X(r, 4) = -b * g[1] * g[1];
    X(r, 5) = -2 * b * g[1] * g[2];
    X(r, 6) = -b * g[2] * g[2];
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
  if (X.rows() < 7 || qr.rank() < 7)
    fail(ErrorCode::DegenerateScheme, "design matrix rank " + std::to_string(qr.rank()) + " < 7");
  return X;
}

namespace detail {

inline std::vector<std::vector<double>> read_number_rows(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::vector<double> row;
    std::string tok;
    while (ls >> tok) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(tok, &used));
        if (used != tok.size()) throw std::invalid_argument(tok);
      } catch (const std::exception&) {
        fail(ErrorCode::ParseError, path.string() + ": bad number '" + tok + "'");
      }
    }
    if (!row.empty()) rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace detail

/// Reads bval/bvec text files. Gradients may be 3 rows x N or N rows x 3;
/// the 3 x N layout wins when both fit. Directions of b>0 volumes are renormalised
/// to absorb the limited precision of text files.
inline DiffusionScheme read_scheme(const std::filesystem::path& bval_path, const std::filesystem::path& bvec_path) {
  std::vector<double> bvals;
  for (const auto& r : detail::read_number_rows(bval_path)) bvals.insert(bvals.end(), r.begin(), r.end());
  const auto rows = detail::read_number_rows(bvec_path);
  const std::size_t n = bvals.size();
  require(n > 0, ErrorCode::ParseError, "empty b-value file");
  std::vector<DiffusionVolume> vols(n);
  bool three_by_n = rows.size() == 3 && rows[0].size() == n && rows[1].size() == n && rows[2].size() == n;
  bool n_by_three = rows.size() == n;
  for (const auto& r : rows) n_by_three = n_by_three && r.size() == 3;
  require(three_by_n || n_by_three, ErrorCode::ParseError, "gradient file is neither 3xN nor Nx3 for N=" + std::to_string(n));
  for (std::size_t i = 0; i < n; ++i) {
    vols[i].b = bvals[i];
    for (int a = 0; a < 3; ++a) vols[i].g[a] = three_by_n ? rows[a][i] : rows[i][a];
    const double norm = std::sqrt(vols[i].g[0] * vols[i].g[0] + vols[i].g[1] * vols[i].g[1] + vols[i].g[2] * vols[i].g[2]);
    if (vols[i].b >= kB0Threshold) {
      require(norm > 0.5, ErrorCode::DegenerateScheme, "zero gradient direction for b>0 volume " + std::to_string(i));
      for (auto& c : vols[i].g) c /= norm;
    }
  }
  return DiffusionScheme(std::move(vols));
}

}  // namespace n4n
