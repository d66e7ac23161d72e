#pragma once

// NIfTI-1 single-file (.nii) subset: little-endian, uncompressed, 3D/4D,
// float32 / uint8 / int16. Data are stored x fastest, then y, z, channel.

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "n4n/core/error.hpp"
#include "n4n/core/fileio.hpp"
#include "n4n/volume/volume.hpp"

namespace n4n::nifti {

static_assert(std::endian::native == std::endian::little, "NIfTI I/O assumes a little-endian host");

inline constexpr std::size_t kHeaderSize = 348;
inline constexpr std::size_t kDataOffset = 352;

enum DatatypeCode : std::int16_t { kUInt8 = 2, kInt16 = 4, kFloat32 = 16 };

namespace detail {

template <class T>
T get(const std::string& buf, std::size_t off) {
  T v;
  std::memcpy(&v, buf.data() + off, sizeof(T));
  return v;
}

template <class T>
void put(std::string& buf, std::size_t off, T v) {
  std::memcpy(buf.data() + off, &v, sizeof(T));
}

inline Affine quaternion_affine(const std::string& h) {
  double b = get<float>(h, 256), c = get<float>(h, 260), d = get<float>(h, 264);
  double a = 1.0 - (b * b + c * c + d * d);
  if (a < 1e-7) {
    a = 1.0 / std::sqrt(b * b + c * c + d * d);
    b *= a;
    c *= a;
    d *= a;
    a = 0.0;
  } else {
    a = std::sqrt(a);
  }
  double qfac = get<float>(h, 76) < 0 ? -1.0 : 1.0;
  double dx = get<float>(h, 80), dy = get<float>(h, 84), dz = get<float>(h, 88) * qfac;
  if (dx <= 0) dx = 1;
  if (dy <= 0) dy = 1;
  if (dz == 0) dz = 1;
  Affine m = Affine::Identity();
  m(0, 0) = (a * a + b * b - c * c - d * d) * dx;
  m(0, 1) = 2 * (b * c - a * d) * dy;
  m(0, 2) = 2 * (b * d + a * c) * dz;
  m(1, 0) = 2 * (b * c + a * d) * dx;
  m(1, 1) = (a * a + c * c - b * b - d * d) * dy;
  m(1, 2) = 2 * (c * d - a * b) * dz;
  m(2, 0) = 2 * (b * d - a * c) * dx;
  m(2, 1) = 2 * (c * d + a * b) * dy;
  m(2, 2) = (a * a + d * d - c * c - b * b) * dz;
  m(0, 3) = get<float>(h, 268);
  m(1, 3) = get<float>(h, 272);
  m(2, 3) = get<float>(h, 276);
  return m;
}

}  // namespace detail

/// Parses a complete .nii image held in memory.
inline Volume decode(const std::string& bytes) {
  using namespace detail;
  if (bytes.size() < kHeaderSize) fail(ErrorCode::TruncatedData, "file shorter than a NIfTI-1 header");
  if (get<std::int32_t>(bytes, 0) != 348) fail(ErrorCode::BadMagic, "sizeof_hdr is not 348 (not little-endian NIfTI-1)");
  if (std::memcmp(bytes.data() + 344, "n+1\0", 4) != 0) fail(ErrorCode::BadMagic, "magic is not \"n+1\"");

  const auto ndim = get<std::int16_t>(bytes, 40);
  if (ndim < 3 || ndim > 4) fail(ErrorCode::ShapeMismatch, "only 3D and 4D images are supported");
  std::vector<std::size_t> dims;
  for (int i = 1; i <= ndim; ++i) {
    const auto d = get<std::int16_t>(bytes, 40 + 2 * i);
    if (d <= 0) fail(ErrorCode::ShapeMismatch, "non-positive dimension");
    dims.push_back(static_cast<std::size_t>(d));
  }
  if (ndim == 4 && dims[3] == 1) dims.pop_back();

  const auto datatype = get<std::int16_t>(bytes, 70);
  std::size_t elem = 0;
  Dtype dtype{};
  switch (datatype) {
    case kFloat32: elem = 4; dtype = Dtype::Float32; break;
    case kUInt8: elem = 1; dtype = Dtype::UInt8; break;
    case kInt16: elem = 2; dtype = Dtype::Int16; break;
    default: fail(ErrorCode::UnsupportedDtype, "datatype code " + std::to_string(datatype));
  }

  std::size_t n = 1;
  for (auto d : dims) n *= d;
  const float vox_offset = get<float>(bytes, 108);
  const std::size_t offset = vox_offset >= float(kHeaderSize) ? static_cast<std::size_t>(vox_offset) : kDataOffset;
  if (bytes.size() < offset + n * elem) fail(ErrorCode::TruncatedData, "data section shorter than dims require");

  std::vector<float> data(n);
  const char* p = bytes.data() + offset;
  switch (dtype) {
    case Dtype::Float32: std::memcpy(data.data(), p, n * 4); break;
    case Dtype::UInt8:
      for (std::size_t i = 0; i < n; ++i) data[i] = static_cast<unsigned char>(p[i]);
      break;
    case Dtype::Int16:
      for (std::size_t i = 0; i < n; ++i) {
        std::int16_t v;
        std::memcpy(&v, p + 2 * i, 2);
        data[i] = v;
      }
      break;
  }

  const float slope = get<float>(bytes, 112), inter = get<float>(bytes, 116);
  if (slope != 0.0f && std::isfinite(slope) && !(slope == 1.0f && inter == 0.0f))
    for (auto& v : data) v = v * slope + inter;

  std::array<double, 3> vs;
  for (int i = 0; i < 3; ++i) {
    double d = std::fabs(get<float>(bytes, 80 + 4 * i));
    vs[i] = (d > 0 && std::isfinite(d)) ? d : 1.0;
  }

  Affine aff = Affine::Identity();
  if (get<std::int16_t>(bytes, 254) > 0) {
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 4; ++c) aff(r, c) = get<float>(bytes, 280 + 16 * r + 4 * c);
  } else if (get<std::int16_t>(bytes, 252) > 0) {
    aff = quaternion_affine(bytes);
  }
  return Volume(std::move(dims), vs, aff, dtype, std::move(data));
}

inline Volume load(const std::filesystem::path& path) { return decode(read_file(path)); }

/// Serialises a volume with its affine stored as the sform.
inline std::string encode(const Volume& v) {
  using namespace detail;
  std::string h(kDataOffset, '\0');
  put<std::int32_t>(h, 0, 348);
  h[39] = 0;
  const auto ndim = static_cast<std::int16_t>(v.rank());
  put<std::int16_t>(h, 40, ndim);
  for (std::size_t i = 0; i < 7; ++i) {
    std::int16_t d = i < v.rank() ? static_cast<std::int16_t>(v.dims()[i]) : 1;
    require(i >= v.rank() || v.dims()[i] <= 32767, ErrorCode::ShapeMismatch, "dimension exceeds NIfTI-1 range");
    put<std::int16_t>(h, 42 + 2 * i, d);
  }
  std::int16_t code = 0, bitpix = 0;
  switch (v.dtype()) {
    case Dtype::Float32: code = kFloat32; bitpix = 32; break;
    case Dtype::UInt8: code = kUInt8; bitpix = 8; break;
    case Dtype::Int16: code = kInt16; bitpix = 16; break;
  }
  put<std::int16_t>(h, 70, code);
  put<std::int16_t>(h, 72, bitpix);
  put<float>(h, 76, 1.0f);
  for (int i = 0; i < 3; ++i) put<float>(h, 80 + 4 * i, static_cast<float>(v.voxel_size()[i]));
  put<float>(h, 92, 1.0f);
  put<float>(h, 108, static_cast<float>(kDataOffset));
  put<float>(h, 112, 0.0f);
  put<float>(h, 116, 0.0f);
  h[123] = 2;  // mm
  put<std::int16_t>(h, 252, 0);
  put<std::int16_t>(h, 254, 1);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 4; ++c) put<float>(h, 280 + 16 * r + 4 * c, static_cast<float>(v.affine()(r, c)));
  std::memcpy(h.data() + 344, "n+1\0", 4);

  const auto vals = v.values();
  std::string body;
  switch (v.dtype()) {
    case Dtype::Float32:
      body.resize(vals.size() * 4);
      std::memcpy(body.data(), vals.data(), body.size());
      break;
    case Dtype::UInt8:
      body.resize(vals.size());
      for (std::size_t i = 0; i < vals.size(); ++i)
        body[i] = static_cast<char>(static_cast<unsigned char>(std::clamp(std::lround(vals[i]), 0L, 255L)));
      break;
    case Dtype::Int16:
      body.resize(vals.size() * 2);
      for (std::size_t i = 0; i < vals.size(); ++i) {
        auto s = static_cast<std::int16_t>(std::clamp(std::lround(vals[i]), -32768L, 32767L));
        std::memcpy(body.data() + 2 * i, &s, 2);
      }
      break;
  }
  return h + body;
}

inline void save(const Volume& v, const std::filesystem::path& path) { write_file_atomic(path, encode(v)); }

}  // namespace n4n::nifti
