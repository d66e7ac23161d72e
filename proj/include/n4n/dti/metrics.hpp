#pragma once

#include <array>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "n4n/core/csv.hpp"
#include "n4n/core/error.hpp"
#include "n4n/dti/eigen3.hpp"
#include "n4n/tensorfit/fit.hpp"
#include "n4n/volume/volume.hpp"

namespace n4n {

struct ScalarValues {
  double fa = 0, md = 0, l1 = 0, rd = 0, mo = 0;
};

/// FA, MD, L1, RD and mode of anisotropy from eigenvalues (descending).
/// Differences are formed directly so equal eigenvalues give FA = MO = 0 exactly.
/// FA is not clamped here; it may exceed 1 when an eigenvalue is negative.
inline ScalarValues scalar_values(const std::array<double, 3>& l) {
  ScalarValues s;
  s.md = (l[0] + l[1] + l[2]) / 3.0;
  s.l1 = l[0];
  s.rd = 0.5 * (l[1] + l[2]);
  const double d12 = l[0] - l[1], d23 = l[1] - l[2], d31 = l[2] - l[0];
  const double spread2 = d12 * d12 + d23 * d23 + d31 * d31;
  const double norm2 = l[0] * l[0] + l[1] * l[1] + l[2] * l[2];
  s.fa = norm2 > 0 ? std::sqrt(0.5 * spread2 / norm2) : 0.0;
  // Deviatoric eigenvalues and their Frobenius norm.
  const double e0 = (d12 - d31) / 3.0, e1 = (d23 - d12) / 3.0, e2 = (d31 - d23) / 3.0;
  const double dev_norm = std::sqrt(spread2 / 3.0);
  if (dev_norm >= 1e-12) {
    s.mo = 3.0 * std::sqrt(6.0) * (e0 / dev_norm) * (e1 / dev_norm) * (e2 / dev_norm);
    s.mo = std::clamp(s.mo, -1.0, 1.0);
  }
  return s;
}

struct ScalarMaps {
  Volume fa, md, l1, rd, mo;
  std::size_t clamped_fa = 0;  // voxels whose FA left [0, 1] and was clamped
};

/// Per-voxel scalar maps inside the mask; zero outside and on all-zero tensors.
inline ScalarMaps scalar_maps(const TensorField& t, const Mask& mask) {
  require(mask.same_grid(t.tensor) && t.tensor.channels() == 6, ErrorCode::ShapeMismatch,
          "tensor field and mask grids differ");
  const Volume grid = t.tensor.like(1);
  ScalarMaps m{grid, grid, grid, grid, grid, 0};
  for (std::size_t v = 0; v < grid.size(); ++v) {
    if (!mask[v]) continue;
    const Tensor6 d = t.at(v);
    if (d == Tensor6{}) continue;
    const auto s = scalar_values(eig3_sym(d).values);
    double fa = s.fa;
    if (fa > 1.0 || fa < 0.0) {
      fa = std::clamp(fa, 0.0, 1.0);
      ++m.clamped_fa;
    }
    m.fa.values()[v] = static_cast<float>(fa);
    m.md.values()[v] = static_cast<float>(s.md);
    m.l1.values()[v] = static_cast<float>(s.l1);
    m.rd.values()[v] = static_cast<float>(s.rd);
    m.mo.values()[v] = static_cast<float>(s.mo);
  }
  return m;
}

/// Mean of nonzero map values inside the segmentation.
inline double tract_mean(const Volume& map, const Mask& seg) {
  require(seg.same_grid(map), ErrorCode::ShapeMismatch, "map and segmentation grids differ");
  double sum = 0;
  std::size_t n = 0;
  const auto vals = map.channel(0);
  for (std::size_t i = 0; i < vals.size(); ++i) {
    if (!seg[i] || vals[i] == 0.0f) continue;
    sum += vals[i];
    ++n;
  }
  if (n == 0) fail(ErrorCode::EmptyTract, "no nonzero map voxels inside the tract");
  return sum / double(n);
}

/// Segmentation volume in millilitres.
inline double tract_volume_ml(const Mask& seg) {
  return double(seg.count()) * seg.volume().voxel_volume_mm3() / 1000.0;
}

struct TractMeasures {
  std::string subject_id;
  std::string tract;
  double fa = 0, md = 0, l1 = 0, rd = 0, mo = 0, volume_ml = 0;
};

inline TractMeasures tract_measures(const ScalarMaps& maps, const Mask& seg, std::string subject_id,
                                    std::string tract) {
  TractMeasures r{std::move(subject_id), std::move(tract)};
  r.fa = tract_mean(maps.fa, seg);
  r.md = tract_mean(maps.md, seg);
  r.l1 = tract_mean(maps.l1, seg);
  r.rd = tract_mean(maps.rd, seg);
  r.mo = tract_mean(maps.mo, seg);
  r.volume_ml = tract_volume_ml(seg);
  return r;
}

inline const std::vector<std::string>& tract_measures_header() {
  static const std::vector<std::string> h = {"subject_id", "tract", "FA", "MD", "L1", "RD", "MO", "volume_ml"};
  return h;
}

/// Appends rows to a tract-statistics CSV, creating it with a header if absent.
inline void append_tract_measures(const std::filesystem::path& path, const std::vector<TractMeasures>& rows) {
  CsvTable t = std::filesystem::exists(path) ? CsvTable::load(path) : CsvTable(tract_measures_header());
  require(t.header() == tract_measures_header(), ErrorCode::ParseError, path.string() + " has a different header");
  for (const auto& r : rows)
    t.add_row({r.subject_id, r.tract, CsvTable::fmt(r.fa), CsvTable::fmt(r.md), CsvTable::fmt(r.l1),
               CsvTable::fmt(r.rd), CsvTable::fmt(r.mo), CsvTable::fmt(r.volume_ml)});
  t.save(path);
}

}  // namespace n4n
