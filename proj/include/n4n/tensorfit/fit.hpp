#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "n4n/core/error.hpp"
#include "n4n/core/parallel.hpp"
#include "n4n/tensorfit/scheme.hpp"
#include "n4n/volume/volume.hpp"

namespace n4n {

/// Tensor elements in channel order Dxx, Dxy, Dxz, Dyy, Dyz, Dzz (mm^2/s).
using Tensor6 = std::array<double, 6>;

enum VoxelFlag : std::uint8_t {
  kFlagNone = 0,
  kFlagZeroSignal = 1,
  kFlagNonFinite = 2,
  kFlagOutlier = 4,
};

/// Per-voxel tensors as a 6-channel volume plus S0 and fit flags.
struct TensorField {
  Volume tensor;
  Volume s0;
  std::vector<std::uint8_t> flags;

  Tensor6 at(std::size_t voxel) const {
    Tensor6 d;
    const std::size_t n = tensor.spatial_size();
    for (std::size_t c = 0; c < 6; ++c) d[c] = tensor.values()[c * n + voxel];
    return d;
  }
  void set(std::size_t voxel, const Tensor6& d) {
    const std::size_t n = tensor.spatial_size();
    for (std::size_t c = 0; c < 6; ++c) tensor.values()[c * n + voxel] = static_cast<float>(d[c]);
  }
};

inline double frobenius_norm(const Tensor6& d) {
  return std::sqrt(d[0] * d[0] + d[3] * d[3] + d[5] * d[5] + 2.0 * (d[1] * d[1] + d[2] * d[2] + d[4] * d[4]));
}

/// Parameters (ln S0, Dxx, Dxy, Dxz, Dyy, Dyz, Dzz).
using TensorParams = Eigen::Matrix<double, 7, 1>;

struct VoxelFit {
  TensorParams params = TensorParams::Zero();
  double cost = 0;  // sum of squared signal residuals
  int iterations = 0;
  std::uint8_t flag = kFlagNone;
};

inline double signal_cost(const Eigen::MatrixXd& X, const TensorParams& p, std::span<const double> s) {
  const Eigen::VectorXd pred = (X * p).array().exp();
  double c = 0;
  for (Eigen::Index i = 0; i < pred.size(); ++i) {
    const double r = pred[i] - s[static_cast<std::size_t>(i)];
    c += r * r;
  }
  return c;
}

/// Ordinary least squares on log signals, with a solver factorised once per scheme.
class LogLinearFitter {
 public:
  explicit LogLinearFitter(const DiffusionScheme& scheme)
      : scheme_(scheme), X_(design_matrix(scheme)), qr_(X_) {}

  const Eigen::MatrixXd& design() const { return X_; }

  VoxelFit fit(std::span<const double> s) const {
    VoxelFit out;
    const auto n = static_cast<Eigen::Index>(s.size());
    require(n == X_.rows(), ErrorCode::ShapeMismatch, "signal count differs from scheme size");
    bool any_positive = false;
    for (double v : s) {
      if (!std::isfinite(v)) {
        out.flag = kFlagNonFinite;
        return out;
      }
      any_positive = any_positive || v > 0;
    }
    if (!any_positive) {
      out.flag = kFlagZeroSignal;
      return out;
    }
    double s0 = 0;
    std::size_t nb0 = 0;
    double smax = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      smax = std::max(smax, s[i]);
      if (scheme_[i].b < kB0Threshold) {
        s0 += s[i];
        ++nb0;
      }
    }
    s0 = nb0 ? s0 / double(nb0) : 0.0;
    if (s0 <= 0) s0 = smax;
    const double floor = 1e-6 * s0;
    Eigen::VectorXd y(n);
    for (Eigen::Index i = 0; i < n; ++i) y[i] = std::log(std::max(s[static_cast<std::size_t>(i)], floor));
    out.params = qr_.solve(y);
    out.cost = signal_cost(X_, out.params, s);
    return out;
  }

 private:
  DiffusionScheme scheme_;
  Eigen::MatrixXd X_;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr_;
};

struct LmOptions {
  double initial_damping = 1e-3;
  double damping_up = 10.0;
  double damping_down = 10.0;
  int max_iterations = 50;
  double tolerance = 1e-10;  // relative cost decrease
};

/// Levenberg-Marquardt on sum (S_i - S0 exp(-b_i g_i^T D g_i))^2 with
/// Marquardt diagonal scaling. Only cost-decreasing steps are accepted.
inline VoxelFit fit_voxel_lm(const Eigen::MatrixXd& X, std::span<const double> s, const VoxelFit& init,
                             const LmOptions& opts = {}) {
  VoxelFit cur = init;
  cur.iterations = 0;
  if (init.flag != kFlagNone || opts.max_iterations <= 0) return init;
  for (double v : s)
    if (!std::isfinite(v)) {
      VoxelFit bad;
      bad.flag = kFlagNonFinite;
      return bad;
    }
  const auto n = X.rows();
  Eigen::Map<const Eigen::VectorXd> sig(s.data(), n);
  cur.cost = signal_cost(X, cur.params, s);
  double lambda = opts.initial_damping;
  for (int it = 0; it < opts.max_iterations; ++it) {
    cur.iterations = it + 1;
    const Eigen::VectorXd pred = (X * cur.params).array().exp();
    const Eigen::VectorXd r = pred - sig;
    const Eigen::MatrixXd J = pred.asDiagonal() * X;
    const Eigen::Matrix<double, 7, 7> JtJ = J.transpose() * J;
    const TensorParams g = J.transpose() * r;
    bool accepted = false;
    while (lambda < 1e16) {
      Eigen::Matrix<double, 7, 7> A = JtJ;
      for (int k = 0; k < 7; ++k) A(k, k) += lambda * std::max(JtJ(k, k), 1e-300);
      const TensorParams step = A.ldlt().solve(-g);
      const TensorParams trial = cur.params + step;
      const double c = signal_cost(X, trial, s);
      if (std::isfinite(c) && c < cur.cost) {
        const double rel = (cur.cost - c) / std::max(cur.cost, std::numeric_limits<double>::min());
        cur.params = trial;
        cur.cost = c;
        lambda = std::max(lambda / opts.damping_down, 1e-12);
        accepted = true;
        if (rel < opts.tolerance) return cur;
        break;
      }
      lambda *= opts.damping_up;
    }
    if (!accepted || cur.cost == 0.0) break;
  }
  return cur;
}

inline Tensor6 tensor_of(const TensorParams& p) { return {p[1], p[2], p[3], p[4], p[5], p[6]}; }

namespace detail {

inline void check_dwi(const Volume& dwi, const DiffusionScheme& scheme, const Mask& mask) {
  require(dwi.channels() == scheme.size(), ErrorCode::ShapeMismatch,
          "DWI has " + std::to_string(dwi.channels()) + " volumes, scheme has " + std::to_string(scheme.size()));
  require(mask.same_grid(dwi), ErrorCode::ShapeMismatch, "mask grid differs from DWI grid");
}

inline TensorField empty_field(const Volume& dwi) {
  return TensorField{dwi.like(6), dwi.like(1), std::vector<std::uint8_t>(dwi.spatial_size(), kFlagNone)};
}

inline void gather(const Volume& dwi, std::size_t voxel, std::vector<double>& s) {
  const std::size_t n = dwi.spatial_size();
  for (std::size_t c = 0; c < s.size(); ++c) s[c] = dwi.values()[c * n + voxel];
}

inline void store(TensorField& t, std::size_t voxel, const VoxelFit& f) {
  t.flags[voxel] = f.flag;
  if (f.flag != kFlagNone) {
    t.set(voxel, Tensor6{});
    t.s0.values()[voxel] = 0.0f;
    return;
  }
  t.set(voxel, tensor_of(f.params));
  t.s0.values()[voxel] = static_cast<float>(std::exp(f.params[0]));
}

}  // namespace detail

/// Voxelwise log-linear tensor fit inside the mask; zero elsewhere.
inline TensorField fit_loglinear(const Volume& dwi, const DiffusionScheme& scheme, const Mask& mask,
                                 unsigned jobs = 1) {
  detail::check_dwi(dwi, scheme, mask);
  LogLinearFitter fitter(scheme);
  TensorField out = detail::empty_field(dwi);
  parallel_for(dwi.spatial_size(), jobs, [&](std::size_t b, std::size_t e) {
    std::vector<double> s(scheme.size());
    for (std::size_t v = b; v < e; ++v) {
      if (!mask[v]) continue;
      detail::gather(dwi, v, s);
      detail::store(out, v, fitter.fit(s));
    }
  });
  return out;
}

/// Levenberg-Marquardt refinement of a log-linear initialisation.
inline TensorField fit_lm(const Volume& dwi, const DiffusionScheme& scheme, const Mask& mask,
                          const TensorField& init, const LmOptions& opts = {}, unsigned jobs = 1) {
  detail::check_dwi(dwi, scheme, mask);
  require(init.tensor.same_grid(dwi) && init.tensor.channels() == 6, ErrorCode::ShapeMismatch,
          "initial tensor field grid differs from DWI grid");
  if (opts.max_iterations <= 0) return init;
  const Eigen::MatrixXd X = design_matrix(scheme);
  TensorField out = init;
  parallel_for(dwi.spatial_size(), jobs, [&](std::size_t b, std::size_t e) {
    std::vector<double> s(scheme.size());
    for (std::size_t v = b; v < e; ++v) {
      if (!mask[v] || init.flags[v] != kFlagNone) continue;
      detail::gather(dwi, v, s);
      VoxelFit start;
      const Tensor6 d = init.at(v);
      const double s0 = init.s0.values()[v];
      start.params << (s0 > 0 ? std::log(s0) : 0.0), d[0], d[1], d[2], d[3], d[4], d[5];
      detail::store(out, v, fit_voxel_lm(X, s, start, opts));
    }
  });
  return out;
}

/// Zeroes tensors whose full-matrix Frobenius norm exceeds the threshold.
inline TensorField outlier_zero(TensorField t, double threshold = 0.1) {
  require(threshold > 0, ErrorCode::InvalidArgument, "outlier threshold must be positive");
  for (std::size_t v = 0; v < t.tensor.spatial_size(); ++v) {
    if (frobenius_norm(t.at(v)) > threshold) {
      t.set(v, Tensor6{});
      t.flags[v] |= kFlagOutlier;
    }
  }
  return t;
}

struct NormalizationStats {
  std::vector<double> mean;  // one entry, or one per channel
  std::vector<double> stddev;
};

/// Scan-wise z-scoring. Statistics come from masked voxels (population std),
/// jointly over all channels unless per_channel; the affine map is applied to every voxel.
inline Volume normalize_scan(const Volume& v, const Mask& mask, bool per_channel = false,
                             NormalizationStats* stats = nullptr) {
  require(mask.same_grid(v), ErrorCode::ShapeMismatch, "mask grid differs from volume grid");
  const std::size_t n = v.spatial_size();
  const std::size_t groups = per_channel ? v.channels() : 1;
  const std::size_t per_group = per_channel ? 1 : v.channels();
  NormalizationStats st;
  Volume out = v;
  for (std::size_t g = 0; g < groups; ++g) {
    double sum = 0, count = 0;
    for (std::size_t c = g * per_group; c < (g + 1) * per_group; ++c)
      for (std::size_t i = 0; i < n; ++i)
        if (mask[i]) {
          sum += v.values()[c * n + i];
          count += 1;
        }
    require(count >= 2, ErrorCode::ConstantField, "fewer than two masked samples");
    const double mean = sum / count;
    double ss = 0;
    for (std::size_t c = g * per_group; c < (g + 1) * per_group; ++c)
      for (std::size_t i = 0; i < n; ++i)
        if (mask[i]) {
          const double d = v.values()[c * n + i] - mean;
          ss += d * d;
        }
    const double sd = std::sqrt(ss / count);
    require(sd > 0 && std::isfinite(sd), ErrorCode::ConstantField, "masked values have zero variance");
    for (std::size_t c = g * per_group; c < (g + 1) * per_group; ++c)
      for (std::size_t i = 0; i < n; ++i) out.values()[c * n + i] = static_cast<float>((v.values()[c * n + i] - mean) / sd);
    st.mean.push_back(mean);
    st.stddev.push_back(sd);
  }
  if (stats) *stats = st;
  return out;
}

/// Tensor-field form: flagged voxels stay exactly zero after the transform.
inline TensorField normalize_scan(TensorField t, const Mask& mask, bool per_channel = false) {
  t.tensor = normalize_scan(t.tensor, mask, per_channel);
  for (std::size_t v = 0; v < t.flags.size(); ++v)
    if (t.flags[v] != kFlagNone) t.set(v, Tensor6{});
  return t;
}

}  // namespace n4n
