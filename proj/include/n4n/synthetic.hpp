#pragma once

// Forward models and phantoms used to generate known-answer data.

#include <array>
#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "n4n/tensorfit/fit.hpp"
#include "n4n/tensorfit/scheme.hpp"
#include "n4n/volume/volume.hpp"

namespace n4n::synth {

/// `n_dirs` near-uniform directions on a hemisphere (Fibonacci lattice) at b,
/// preceded by `n_b0` unweighted volumes.
inline DiffusionScheme hemisphere_scheme(std::size_t n_dirs = 25, std::size_t n_b0 = 3, double b = 1000.0) {
  std::vector<DiffusionVolume> vols(n_b0);
  const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
  for (std::size_t i = 0; i < n_dirs; ++i) {
    const double z = 1.0 - (double(i) + 0.5) / double(n_dirs);
    const double r = std::sqrt(1.0 - z * z);
    const double phi = golden * double(i);
    DiffusionVolume v;
    v.b = b;
    v.g = {r * std::cos(phi), r * std::sin(phi), z};
    const double n = std::sqrt(v.g[0] * v.g[0] + v.g[1] * v.g[1] + v.g[2] * v.g[2]);
    for (auto& c : v.g) c /= n;
    vols.push_back(v);
  }
  return DiffusionScheme(std::move(vols));
}

inline Eigen::Matrix3d to_matrix(const Tensor6& d) {
  Eigen::Matrix3d m;
  m << d[0], d[1], d[2], d[1], d[3], d[4], d[2], d[4], d[5];
  return m;
}

inline Tensor6 from_matrix(const Eigen::Matrix3d& m) {
  return {m(0, 0), 0.5 * (m(0, 1) + m(1, 0)), 0.5 * (m(0, 2) + m(2, 0)), m(1, 1), 0.5 * (m(1, 2) + m(2, 1)), m(2, 2)};
}

/// S_i = S0 exp(-b g^T D g).
inline std::vector<double> simulate_signals(const Tensor6& d, double s0, const DiffusionScheme& scheme) {
  std::vector<double> s(scheme.size());
  const Eigen::Matrix3d D = to_matrix(d);
  for (std::size_t i = 0; i < scheme.size(); ++i) {
    const auto& v = scheme[i];
    const double b = v.b < kB0Threshold ? 0.0 : v.b;
    const Eigen::Vector3d g(v.g[0], v.g[1], v.g[2]);
    s[i] = s0 * std::exp(-b * g.dot(D * g));
  }
  return s;
}

/// Magnitude of a complex signal with Gaussian noise of std sigma in both parts.
template <class Rng>
double rician(double s, double sigma, Rng& rng) {
  std::normal_distribution<double> nd(0.0, sigma);
  const double re = s + nd(rng), im = nd(rng);
  return std::sqrt(re * re + im * im);
}

template <class Rng>
Eigen::Matrix3d random_rotation(Rng& rng) {
  std::normal_distribution<double> nd;
  Eigen::Quaterniond q(nd(rng), nd(rng), nd(rng), nd(rng));
  q.normalize();
  return q.toRotationMatrix();
}

/// Random SPD tensor R diag(l) R^T with eigenvalues uniform in [lo, hi].
template <class Rng>
Tensor6 random_spd(Rng& rng, double lo = 0.1e-3, double hi = 3.0e-3) {
  std::uniform_real_distribution<double> ud(lo, hi);
  const Eigen::Matrix3d R = random_rotation(rng);
  const Eigen::Vector3d l(ud(rng), ud(rng), ud(rng));
  return from_matrix(R * l.asDiagonal() * R.transpose());
}

/// Writes simulated signals for one tensor per voxel into a 4D DWI volume.
inline Volume simulate_dwi(const std::vector<Tensor6>& tensors, const std::vector<double>& s0,
                           const DiffusionScheme& scheme, std::array<std::size_t, 3> dims) {
  Volume dwi = Volume::zeros({dims[0], dims[1], dims[2], scheme.size()});
  const std::size_t n = dwi.spatial_size();
  for (std::size_t v = 0; v < n && v < tensors.size(); ++v) {
    const auto s = simulate_signals(tensors[v], s0[v], scheme);
    for (std::size_t c = 0; c < s.size(); ++c) dwi.values()[c * n + v] = static_cast<float>(s[c]);
  }
  return dwi;
}

/// Toy tract sample: normalised 6-channel tensor input and a binary label.
struct TractPhantom {
  Volume tensor;  // 4D, 6 channels, scan-normalised
  Mask label;
};

/// Prolate tensors along x inside a jittered ellipsoid "tract", isotropic
/// background, and a y-oriented distractor slab that must stay background.
template <class Rng>
TractPhantom ellipsoid_phantom(std::size_t n, Rng& rng, double noise = 0.1e-3, int side = 0) {
  std::uniform_real_distribution<double> jitter(-0.06, 0.06);
  std::normal_distribution<double> nd(0.0, noise);
  const double fn = double(n);
  const double cx = fn * (0.5 + jitter(rng)) + (side == 0 ? 0.0 : side * 0.12 * fn);
  const double cy = fn * (0.45 + jitter(rng)), cz = fn * (0.5 + jitter(rng));
  const double rx = fn * (0.30 + jitter(rng) * 0.5), ry = fn * (0.12 + jitter(rng) * 0.3),
               rz = fn * (0.14 + jitter(rng) * 0.3);
  Volume tensor = Volume::zeros({n, n, n, 6});
  Volume label = Volume::zeros({n, n, n});
  const std::size_t nv = n * n * n;
  for (std::size_t z = 0; z < n; ++z)
    for (std::size_t y = 0; y < n; ++y)
      for (std::size_t x = 0; x < n; ++x) {
        const double dx = (double(x) - cx) / (side == 0 ? rx : rx * 0.6), dy = (double(y) - cy) / ry,
                     dz = (double(z) - cz) / rz;
        const bool in_tract = dx * dx + dy * dy + dz * dz <= 1.0;
        const bool distractor = !in_tract && double(y) > 0.75 * fn && double(y) < 0.85 * fn;
        Tensor6 d{};
        if (in_tract) {
          d = {1.7e-3, 0, 0, 0.3e-3, 0, 0.3e-3};
        } else if (distractor) {
          d = {0.3e-3, 0, 0, 1.7e-3, 0, 0.3e-3};
        } else {
          d = {0.8e-3, 0, 0, 0.8e-3, 0, 0.8e-3};
        }
        const std::size_t v = x + n * (y + n * z);
        for (std::size_t c = 0; c < 6; ++c) tensor.values()[c * nv + v] = static_cast<float>(d[c] + nd(rng));
        label.values()[v] = in_tract ? 1.0f : 0.0f;
      }
  Mask all(Volume::zeros({n, n, n}));
  {
    Volume ones = Volume::zeros({n, n, n});
    for (auto& x : ones.values()) x = 1.0f;
    all = Mask(std::move(ones));
  }
  return TractPhantom{normalize_scan(tensor, all), Mask(std::move(label))};
}

}  // namespace n4n::synth
