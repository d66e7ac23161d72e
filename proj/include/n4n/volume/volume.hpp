#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "n4n/core/error.hpp"

namespace n4n {

enum class Dtype : std::uint8_t { Float32, UInt8, Int16 };

using Affine = Eigen::Matrix4d;

/// Dense voxel grid of 3 (x,y,z) or 4 (x,y,z,channel) axes, x fastest.
/// Values are held as float regardless of the on-disk dtype tag.
class Volume {
 public:
  Volume() = default;

  Volume(std::vector<std::size_t> dims, std::array<double, 3> voxel_size, Affine affine,
         Dtype dtype, std::vector<float> data)
      : dims_(std::move(dims)),
        voxel_size_(voxel_size),
        affine_(affine),
        dtype_(dtype),
        data_(std::move(data)) {
    validate();
  }

  /// Zero-filled volume with identity affine scaled by the voxel size.
  static Volume zeros(std::vector<std::size_t> dims, std::array<double, 3> voxel_size = {1, 1, 1},
                      Dtype dtype = Dtype::Float32) {
    Affine a = Affine::Identity();
    for (int i = 0; i < 3; ++i) a(i, i) = voxel_size[i];
    std::size_t n = 1;
    for (auto d : dims) n *= d;
    return Volume(std::move(dims), voxel_size, a, dtype, std::vector<float>(n, 0.0f));
  }

  /// Same grid and metadata, new channel count and contents.
  Volume like(std::size_t channels, Dtype dtype, std::vector<float> data) const {
    std::vector<std::size_t> d = {nx(), ny(), nz()};
    if (channels != 1) d.push_back(channels);
    return Volume(std::move(d), voxel_size_, affine_, dtype, std::move(data));
  }

  Volume like(std::size_t channels = 1, Dtype dtype = Dtype::Float32) const {
    return like(channels, dtype, std::vector<float>(spatial_size() * channels, 0.0f));
  }

  const std::vector<std::size_t>& dims() const { return dims_; }
  std::size_t rank() const { return dims_.size(); }
  std::size_t nx() const { return dims_.at(0); }
  std::size_t ny() const { return dims_.at(1); }
  std::size_t nz() const { return dims_.at(2); }
  std::size_t channels() const { return dims_.size() == 4 ? dims_[3] : 1; }
  std::size_t spatial_size() const { return nx() * ny() * nz(); }
  std::size_t size() const { return data_.size(); }

  const std::array<double, 3>& voxel_size() const { return voxel_size_; }
  double voxel_volume_mm3() const { return voxel_size_[0] * voxel_size_[1] * voxel_size_[2]; }
  const Affine& affine() const { return affine_; }
  void set_affine(const Affine& a) {
    affine_ = a;
    validate();
  }
  Dtype dtype() const { return dtype_; }
  void set_dtype(Dtype d) { dtype_ = d; }

  std::span<const float> values() const { return data_; }
  std::span<float> values() { return data_; }
  std::span<const float> channel(std::size_t c) const {
    return std::span<const float>(data_).subspan(c * spatial_size(), spatial_size());
  }
  std::span<float> channel(std::size_t c) { return std::span<float>(data_).subspan(c * spatial_size(), spatial_size()); }

  std::size_t index(std::size_t x, std::size_t y, std::size_t z, std::size_t c = 0) const {
    return x + nx() * (y + ny() * (z + nz() * c));
  }
  float at(std::size_t x, std::size_t y, std::size_t z, std::size_t c = 0) const { return data_[index(x, y, z, c)]; }
  float& at(std::size_t x, std::size_t y, std::size_t z, std::size_t c = 0) { return data_[index(x, y, z, c)]; }

  bool same_grid(const Volume& o) const {
    return nx() == o.nx() && ny() == o.ny() && nz() == o.nz();
  }

 private:
  void validate() const {
    require(dims_.size() == 3 || dims_.size() == 4, ErrorCode::ShapeMismatch, "volume must be 3D or 4D");
    std::size_t n = 1;
    for (auto d : dims_) {
      require(d > 0, ErrorCode::ShapeMismatch, "volume extents must be positive");
      n *= d;
    }
    require(n == data_.size(), ErrorCode::ShapeMismatch,
            "data length " + std::to_string(data_.size()) + " != product of dims " + std::to_string(n));
    for (double v : voxel_size_)
      require(v > 0 && std::isfinite(v), ErrorCode::InvalidArgument, "voxel sizes must be strictly positive");
    require(affine_(3, 0) == 0 && affine_(3, 1) == 0 && affine_(3, 2) == 0 && affine_(3, 3) == 1,
            ErrorCode::InvalidArgument, "affine last row must be (0,0,0,1)");
  }

  std::vector<std::size_t> dims_ = {1, 1, 1};
  std::array<double, 3> voxel_size_ = {1, 1, 1};
  Affine affine_ = Affine::Identity();
  Dtype dtype_ = Dtype::Float32;
  std::vector<float> data_ = {0.0f};
};

/// A 3D volume restricted to {0,1}.
class Mask {
 public:
  Mask() = default;
  explicit Mask(Volume v) : vol_(std::move(v)) {
    require(vol_.rank() == 3, ErrorCode::ShapeMismatch, "mask must be 3D");
    for (float x : vol_.values())
      require(x == 0.0f || x == 1.0f, ErrorCode::InvalidArgument, "mask voxels must be 0 or 1");
    vol_.set_dtype(Dtype::UInt8);
  }

  /// Voxels strictly above the threshold become 1.
  static Mask threshold(const Volume& v, float t) {
    Volume out = v.like(1, Dtype::UInt8);
    auto src = v.channel(0);
    auto dst = out.values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = src[i] > t ? 1.0f : 0.0f;
    return Mask(std::move(out));
  }

  const Volume& volume() const { return vol_; }
  std::size_t size() const { return vol_.size(); }
  bool operator[](std::size_t i) const { return vol_.values()[i] != 0.0f; }
  std::size_t count() const {
    return static_cast<std::size_t>(std::count(vol_.values().begin(), vol_.values().end(), 1.0f));
  }
  bool same_grid(const Mask& o) const { return vol_.same_grid(o.vol_); }
  bool same_grid(const Volume& o) const { return vol_.same_grid(o); }

 private:
  Volume vol_ = Volume::zeros({1, 1, 1}, {1, 1, 1}, Dtype::UInt8);
};

/// Inclusive per-axis voxel index range.
struct BoundingBox {
  std::array<std::int64_t, 3> lo{0, 0, 0};
  std::array<std::int64_t, 3> hi{0, 0, 0};

  std::size_t extent(int axis) const { return static_cast<std::size_t>(hi[axis] - lo[axis] + 1); }
  std::array<std::size_t, 3> extents() const { return {extent(0), extent(1), extent(2)}; }
  bool contains(std::int64_t x, std::int64_t y, std::int64_t z) const {
    return x >= lo[0] && x <= hi[0] && y >= lo[1] && y <= hi[1] && z >= lo[2] && z <= hi[2];
  }
  bool within(const Volume& v) const {
    const std::array<std::size_t, 3> n = {v.nx(), v.ny(), v.nz()};
    for (int a = 0; a < 3; ++a)
      if (lo[a] < 0 || hi[a] < lo[a] || hi[a] >= static_cast<std::int64_t>(n[a])) return false;
    return true;
  }
  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

inline BoundingBox box_union(const BoundingBox& a, const BoundingBox& b) {
  BoundingBox r;
  for (int i = 0; i < 3; ++i) {
    r.lo[i] = std::min(a.lo[i], b.lo[i]);
    r.hi[i] = std::max(a.hi[i], b.hi[i]);
  }
  return r;
}

/// Tightest box around the nonzero voxels, grown by margin and clamped to the grid.
inline BoundingBox bounding_box(const Mask& m, std::int64_t margin = 0) {
  const Volume& v = m.volume();
  BoundingBox b;
  b.lo = {INT64_MAX, INT64_MAX, INT64_MAX};
  b.hi = {-1, -1, -1};
  bool any = false;
  for (std::size_t z = 0; z < v.nz(); ++z)
    for (std::size_t y = 0; y < v.ny(); ++y)
      for (std::size_t x = 0; x < v.nx(); ++x) {
        if (v.at(x, y, z) == 0.0f) continue;
        any = true;
        const std::array<std::int64_t, 3> p = {static_cast<std::int64_t>(x), static_cast<std::int64_t>(y),
                                               static_cast<std::int64_t>(z)};
        for (int a = 0; a < 3; ++a) {
          b.lo[a] = std::min(b.lo[a], p[a]);
          b.hi[a] = std::max(b.hi[a], p[a]);
        }
      }
  if (!any) fail(ErrorCode::EmptyMask, "bounding box of an empty mask");
  const std::array<std::int64_t, 3> n = {static_cast<std::int64_t>(v.nx()), static_cast<std::int64_t>(v.ny()),
                                         static_cast<std::int64_t>(v.nz())};
  for (int a = 0; a < 3; ++a) {
    b.lo[a] = std::max<std::int64_t>(0, b.lo[a] - margin);
    b.hi[a] = std::min<std::int64_t>(n[a] - 1, b.hi[a] + margin);
  }
  return b;
}

/// Grows each extent to the next multiple of `multiple` (and at least
/// `min_extent`), keeping the box centred where possible and shifting it back
/// inside the grid. Fails if the grid is too small.
inline BoundingBox fit_box_to_multiple(BoundingBox b, std::size_t multiple, const std::array<std::size_t, 3>& grid,
                                       std::size_t min_extent = 1) {
  require(multiple >= 1, ErrorCode::InvalidArgument, "multiple must be positive");
  for (int a = 0; a < 3; ++a) {
    const auto n = static_cast<std::int64_t>(grid[a]);
    const auto m = static_cast<std::int64_t>(multiple);
    std::int64_t ext = b.hi[a] - b.lo[a] + 1;
    const std::int64_t target = std::max<std::int64_t>(ext, static_cast<std::int64_t>(min_extent));
    std::int64_t want = ((target + m - 1) / m) * m;
    if (want > n) want = (n / m) * m;
    require(want >= ext && want > 0, ErrorCode::RoiTooSmall,
            "grid axis " + std::to_string(a) + " cannot hold an ROI extent that is a multiple of " +
                std::to_string(multiple));
    std::int64_t grow = want - ext;
    std::int64_t lo = b.lo[a] - grow / 2;
    lo = std::clamp<std::int64_t>(lo, 0, n - want);
    b.lo[a] = lo;
    b.hi[a] = lo + want - 1;
  }
  return b;
}

inline Volume crop(const Volume& v, const BoundingBox& b) {
  require(b.within(v), ErrorCode::ShapeMismatch, "bounding box outside volume");
  const auto ex = b.extents();
  const std::size_t nc = v.channels();
  std::vector<std::size_t> dims = {ex[0], ex[1], ex[2]};
  if (v.rank() == 4) dims.push_back(nc);
  std::vector<float> out(ex[0] * ex[1] * ex[2] * nc);
  std::size_t k = 0;
  for (std::size_t c = 0; c < nc; ++c)
    for (std::size_t z = 0; z < ex[2]; ++z)
      for (std::size_t y = 0; y < ex[1]; ++y) {
        const std::size_t src = v.index(b.lo[0], b.lo[1] + y, b.lo[2] + z, c);
        std::copy_n(v.values().begin() + src, ex[0], out.begin() + k);
        k += ex[0];
      }
  // The cropped grid origin moves to the box corner.
  Affine a = v.affine();
  Eigen::Vector4d corner(double(b.lo[0]), double(b.lo[1]), double(b.lo[2]), 1.0);
  a.col(3) = v.affine() * corner;
  return Volume(std::move(dims), v.voxel_size(), a, v.dtype(), std::move(out));
}

/// Copy of `full` with the box region replaced by `patch`.
inline Volume paste(const Volume& full, const Volume& patch, const BoundingBox& b) {
  require(b.within(full), ErrorCode::ShapeMismatch, "bounding box outside volume");
  const auto ex = b.extents();
  require(patch.nx() == ex[0] && patch.ny() == ex[1] && patch.nz() == ex[2] && patch.channels() == full.channels(),
          ErrorCode::ShapeMismatch, "patch dims differ from box extents");
  Volume out = full;
  auto dst = out.values();
  auto src = patch.values();
  std::size_t k = 0;
  for (std::size_t c = 0; c < full.channels(); ++c)
    for (std::size_t z = 0; z < ex[2]; ++z)
      for (std::size_t y = 0; y < ex[1]; ++y) {
        std::copy_n(src.begin() + k, ex[0], dst.begin() + full.index(b.lo[0], b.lo[1] + y, b.lo[2] + z, c));
        k += ex[0];
      }
  return out;
}

/// Nearest-neighbour resampling of `moving` onto the grid of `fixed`.
/// `fixed_to_moving` maps fixed world coordinates to moving world coordinates.
inline Mask resample_nearest(const Mask& moving, const Volume& fixed, const Affine& fixed_to_moving) {
  const Volume& mv = moving.volume();
  const Affine vox = mv.affine().inverse() * fixed_to_moving * fixed.affine();
  Volume out = fixed.like(1, Dtype::UInt8);
  for (std::size_t z = 0; z < fixed.nz(); ++z)
    for (std::size_t y = 0; y < fixed.ny(); ++y)
      for (std::size_t x = 0; x < fixed.nx(); ++x) {
        Eigen::Vector4d p = vox * Eigen::Vector4d(double(x), double(y), double(z), 1.0);
        const auto ix = static_cast<std::int64_t>(std::floor(p[0] + 0.5));
        const auto iy = static_cast<std::int64_t>(std::floor(p[1] + 0.5));
        const auto iz = static_cast<std::int64_t>(std::floor(p[2] + 0.5));
        if (ix < 0 || iy < 0 || iz < 0 || ix >= std::int64_t(mv.nx()) || iy >= std::int64_t(mv.ny()) ||
            iz >= std::int64_t(mv.nz()))
          continue;
        out.at(x, y, z) = mv.at(ix, iy, iz);
      }
  return Mask(std::move(out));
}

}  // namespace n4n
