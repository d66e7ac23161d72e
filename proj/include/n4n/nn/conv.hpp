#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "n4n/core/error.hpp"
#include "n4n/nn/tensor.hpp"

namespace n4n::nn {

enum class Padding { Valid, Same };

namespace detail {
template <class S>
struct Vec64;
template <>
struct Vec64<float> {
  typedef float type __attribute__((vector_size(64)));
};
template <>
struct Vec64<double> {
  typedef double type __attribute__((vector_size(64)));
};
}  // namespace detail

struct ConvSpec {
  std::size_t in = 1;
  std::size_t out = 1;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  Padding padding = Padding::Same;
  bool transpose = false;
};

/// 3D cross-correlation, or its adjoint when spec.transpose is set.
///
/// Weights are (out, in, k, k, k) for the forward form and (in, out, k, k, k)
/// for the transpose form. Stride-1 odd-kernel "same" convolutions run through
/// a vectorized direct kernel on a zero-padded grid; everything else uses plain loops.
template <class S>
class Conv3d {
 public:
  using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
  using MapC = Eigen::Map<const Mat>;

  Parameter<S> weight;
  Parameter<S> bias;

  Conv3d() = default;
  Conv3d(const std::string& name, ConvSpec spec) : spec_(spec) {
    require(spec.in > 0 && spec.out > 0 && spec.kernel > 0 && spec.stride > 0, ErrorCode::InvalidArgument,
            "convolution sizes must be positive");
    const std::size_t k = spec.kernel;
    Shape ws = spec.transpose ? Shape{spec.in, spec.out, k, k, k} : Shape{spec.out, spec.in, k, k, k};
    weight = Parameter<S>(name + ".weight", NdTensor<S>(ws));
    bias = Parameter<S>(name + ".bias", NdTensor<S>(Shape{spec.out}));
  }

  const ConvSpec& spec() const { return spec_; }

  /// He-normal weights by default; `stddev` overrides the spread. Bias starts at zero.
  template <class Rng>
  void init(Rng& rng, double stddev = 0) {
    const double fan_in = double(spec_.in * spec_.kernel * spec_.kernel * spec_.kernel);
    std::normal_distribution<double> nd(0.0, stddev > 0 ? stddev : std::sqrt(2.0 / fan_in));
    for (auto& w : weight.value.values()) w = static_cast<S>(nd(rng));
    bias.value.fill(S(0));
  }

  std::vector<Parameter<S>*> params() { return {&weight, &bias}; }

  std::size_t pad() const { return spec_.padding == Padding::Same ? (spec_.kernel - 1) / 2 : 0; }

  std::array<std::size_t, 3> output_dims(const std::array<std::size_t, 3>& in) const {
    std::array<std::size_t, 3> o{};
    const std::size_t k = spec_.kernel, s = spec_.stride, p = pad();
    for (int a = 0; a < 3; ++a) {
      if (spec_.transpose) {
        require(in[a] >= 1 && (in[a] - 1) * s + k > 2 * p, ErrorCode::ShapeMismatch, "transpose conv input too small");
        o[a] = (in[a] - 1) * s + k - 2 * p;
      } else {
        require(in[a] + 2 * p >= k, ErrorCode::ShapeMismatch, "convolution input smaller than kernel");
        o[a] = (in[a] + 2 * p - k) / s + 1;
      }
    }
    return o;
  }

  NdTensor<S> forward(const NdTensor<S>& x) {
    require_5d(x, "conv3d");
    require(x.channels() == spec_.in, ErrorCode::ShapeMismatch,
            weight.name + ": expected " + std::to_string(spec_.in) + " input channels, got " +
                std::to_string(x.channels()));
    x_ = x;
    const auto od = output_dims({x.dim(2), x.dim(3), x.dim(4)});
    NdTensor<S> y(Shape{x.batch(), spec_.out, od[0], od[1], od[2]});
    if (fast_path())
      forward_fast(x, y);
    else if (spec_.transpose)
      transpose_forward(x, y);
    else
      direct_forward(x, y);
    return y;
  }

  /// Accumulates weight/bias gradients and returns the input gradient.
  NdTensor<S> backward(const NdTensor<S>& dy) {
    require(!x_.empty(), ErrorCode::InvalidArgument, weight.name + ": backward before forward");
    const auto od = output_dims({x_.dim(2), x_.dim(3), x_.dim(4)});
    require(dy.rank() == 5 && dy.batch() == x_.batch() && dy.channels() == spec_.out && dy.dim(2) == od[0] &&
                dy.dim(3) == od[1] && dy.dim(4) == od[2],
            ErrorCode::ShapeMismatch, weight.name + ": gradient shape mismatch");
    NdTensor<S> dx(x_.shape());
    for (std::size_t n = 0; n < dy.batch(); ++n)
      for (std::size_t c = 0; c < spec_.out; ++c) {
        S acc = 0;
        for (S g : dy.slice(n, c)) acc += g;
        bias.grad[c] += acc;
      }
    if (fast_path())
      backward_fast(dy, dx);
    else if (spec_.transpose)
      transpose_backward(dy, dx);
    else
      direct_backward(dy, dx);
    return dx;
  }

  void clear_cache() { x_ = NdTensor<S>(); }

 private:
  bool fast_path() const {
    return !spec_.transpose && spec_.stride == 1 && spec_.kernel % 2 == 1 && spec_.padding == Padding::Same;
  }

  // ---- stride-1 "same" fast path --------------------------------------------
  //
  // Inputs are zero-padded by r = k/2 per side (channel-major, one padded slab per
  // channel). Forward and dL/dx run a register-blocked direct correlation that
  // vectorizes along x; dL/dW uses im2col + GEMM in padded-linear index space, where
  // output voxel (z,y,x) sits at padded index p(z,y,x) and tap (dz,dy,dx) reads
  // p + off(dz,dy,dx). Halo rows of that space carry zero gradient.

  struct Geometry {
    std::size_t D, H, W, r, PD, PH, PW, P, p_min, L;
    std::vector<std::ptrdiff_t> offsets;
  };

  Geometry geometry(std::size_t D, std::size_t H, std::size_t W) const {
    Geometry g;
    g.D = D;
    g.H = H;
    g.W = W;
    g.r = spec_.kernel / 2;
    g.PD = D + 2 * g.r;
    g.PH = H + 2 * g.r;
    g.PW = W + 2 * g.r;
    g.P = g.PD * g.PH * g.PW;
    g.p_min = (g.r * g.PH + g.r) * g.PW + g.r;
    const std::size_t p_max = ((D - 1 + g.r) * g.PH + (H - 1 + g.r)) * g.PW + (W - 1 + g.r);
    g.L = p_max - g.p_min + 1;
    const std::size_t k = spec_.kernel;
    const auto r = static_cast<std::ptrdiff_t>(g.r);
    for (std::size_t kz = 0; kz < k; ++kz)
      for (std::size_t ky = 0; ky < k; ++ky)
        for (std::size_t kx = 0; kx < k; ++kx)
          g.offsets.push_back((std::ptrdiff_t(kz) - r) * std::ptrdiff_t(g.PH * g.PW) +
                              (std::ptrdiff_t(ky) - r) * std::ptrdiff_t(g.PW) + (std::ptrdiff_t(kx) - r));
    return g;
  }

  // Register tile: kBlockC output channels x two 64-byte vectors along x.
  using Vec = typename detail::Vec64<S>::type;
  static constexpr std::size_t kLanes = 64 / sizeof(S);
  static constexpr std::size_t kBlockC = 8;
  static constexpr std::size_t kTileX = 2 * kLanes;

  std::size_t taps() const { return spec_.kernel * spec_.kernel * spec_.kernel; }

  /// Zero-padded channel-major copy with slack so tiles may read past a row end.
  static void pad_channels(const S* src, std::size_t C, const Geometry& g, std::vector<S>& dst) {
    dst.assign(C * g.P + kTileX + 2 * g.r + 1, S(0));
    const std::size_t V = g.D * g.H * g.W;
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t z = 0; z < g.D; ++z)
        for (std::size_t y = 0; y < g.H; ++y)
          std::copy_n(src + c * V + (z * g.H + y) * g.W, g.W,
                      dst.data() + c * g.P + ((z + g.r) * g.PH + (y + g.r)) * g.PW + g.r);
  }

  /// Weights regrouped as [out-block][in][tap][kBlockC], zero-filled past `cout`.
  /// `flip` produces the adjoint correlation (in/out swapped, kernel reversed).
  std::vector<S> pack_weights(bool flip) const {
    const std::size_t T = taps();
    const std::size_t cin = flip ? spec_.out : spec_.in;
    const std::size_t cout = flip ? spec_.in : spec_.out;
    const std::size_t blocks = (cout + kBlockC - 1) / kBlockC;
    std::vector<S> wp(blocks * cin * T * kBlockC, S(0));
    const S* w = weight.value.data();
    for (std::size_t o = 0; o < cout; ++o)
      for (std::size_t i = 0; i < cin; ++i)
        for (std::size_t t = 0; t < T; ++t) {
          const S v = flip ? w[(i * spec_.in + o) * T + (T - 1 - t)] : w[(o * spec_.in + i) * T + t];
          wp[(((o / kBlockC) * cin + i) * T + t) * kBlockC + o % kBlockC] = v;
        }
    return wp;
  }

  template <std::size_t K>
  void correlate_tiles(const S* xpad, std::size_t cin, std::size_t cout, const Geometry& g, const S* wp,
                       const S* bias, S* out) const {
    const std::size_t k = K ? K : spec_.kernel, T = k * k * k, V = g.D * g.H * g.W;
    const std::size_t blocks = (cout + kBlockC - 1) / kBlockC;
    Vec acc[kBlockC][2];
    alignas(64) S tile[kTileX];
    for (std::size_t b = 0; b < blocks; ++b) {
      const std::size_t nc = std::min(kBlockC, cout - b * kBlockC);
      const S* wb = wp + b * cin * T * kBlockC;
      for (std::size_t z = 0; z < g.D; ++z)
        for (std::size_t y = 0; y < g.H; ++y)
          for (std::size_t x0 = 0; x0 < g.W; x0 += kTileX) {
#pragma GCC unroll 8
            for (std::size_t c = 0; c < kBlockC; ++c) {
              const S init = bias && c < nc ? bias[b * kBlockC + c] : S(0);
              acc[c][0] = Vec{} + init;
              acc[c][1] = Vec{} + init;
            }
            for (std::size_t ci = 0; ci < cin; ++ci)
              for (std::size_t kz = 0; kz < k; ++kz)
                for (std::size_t ky = 0; ky < k; ++ky) {
                  const S* row = xpad + ci * g.P + ((z + kz) * g.PH + (y + ky)) * g.PW + x0;
                  const S* wt = wb + (ci * T + (kz * k + ky) * k) * kBlockC;
                  for (std::size_t kx = 0; kx < k; ++kx) {
                    Vec v0, v1;
                    std::memcpy(&v0, row + kx, sizeof(Vec));
                    std::memcpy(&v1, row + kx + kLanes, sizeof(Vec));
#pragma GCC unroll 8
                    for (std::size_t c = 0; c < kBlockC; ++c) {
                      const S wv = wt[kx * kBlockC + c];
                      acc[c][0] += wv * v0;
                      acc[c][1] += wv * v1;
                    }
                  }
                }
            const std::size_t nx = std::min(kTileX, g.W - x0);
            for (std::size_t c = 0; c < nc; ++c) {
              std::memcpy(tile, &acc[c][0], sizeof(Vec));
              std::memcpy(tile + kLanes, &acc[c][1], sizeof(Vec));
              std::copy_n(tile, nx, out + (b * kBlockC + c) * V + (z * g.H + y) * g.W + x0);
            }
          }
    }
  }

  void correlate(const S* xpad, std::size_t cin, std::size_t cout, const Geometry& g, const std::vector<S>& wp,
                 const S* bias, S* out) const {
    if (spec_.kernel == 3)
      correlate_tiles<3>(xpad, cin, cout, g, wp.data(), bias, out);
    else
      correlate_tiles<0>(xpad, cin, cout, g, wp.data(), bias, out);
  }

  Mat weight_matrix() const {
    const std::size_t T = taps();
    Mat w(Eigen::Index(T * spec_.in), Eigen::Index(spec_.out));
    const S* src = weight.value.data();
    for (std::size_t co = 0; co < spec_.out; ++co)
      for (std::size_t ci = 0; ci < spec_.in; ++ci)
        for (std::size_t t = 0; t < T; ++t)
          w(Eigen::Index(t * spec_.in + ci), Eigen::Index(co)) = src[(co * spec_.in + ci) * T + t];
    return w;
  }

  void forward_fast(const NdTensor<S>& x, NdTensor<S>& y) const {
    const Geometry g = geometry(x.dim(2), x.dim(3), x.dim(4));
    if (spec_.kernel == 1) {
      const Mat wm = weight_matrix();
      for (std::size_t n = 0; n < x.batch(); ++n) {
        MapC xs(x.slice(n, 0).data(), Eigen::Index(g.L), Eigen::Index(spec_.in));
        Eigen::Map<Mat> ys(y.slice(n, 0).data(), Eigen::Index(g.L), Eigen::Index(spec_.out));
        ys.noalias() = xs * wm;
        for (std::size_t co = 0; co < spec_.out; ++co) ys.col(Eigen::Index(co)).array() += bias.value[co];
      }
      return;
    }
    const std::vector<S> wp = pack_weights(false);
    std::vector<S> xpad;
    for (std::size_t n = 0; n < x.batch(); ++n) {
      pad_channels(x.slice(n, 0).data(), spec_.in, g, xpad);
      correlate(xpad.data(), spec_.in, spec_.out, g, wp, bias.value.data(), y.slice(n, 0).data());
    }
  }

  void backward_fast(const NdTensor<S>& dy, NdTensor<S>& dx) {
    const Geometry g = geometry(x_.dim(2), x_.dim(3), x_.dim(4));
    const std::size_t ci_n = spec_.in, co_n = spec_.out, T = taps(), K = T * ci_n;
    Mat dwm = Mat::Zero(Eigen::Index(K), Eigen::Index(co_n));
    if (spec_.kernel == 1) {
      const Mat wm = weight_matrix();
      for (std::size_t n = 0; n < dy.batch(); ++n) {
        MapC xs(x_.slice(n, 0).data(), Eigen::Index(g.L), Eigen::Index(ci_n));
        MapC gs(dy.slice(n, 0).data(), Eigen::Index(g.L), Eigen::Index(co_n));
        dwm.noalias() += xs.transpose() * gs;
        Eigen::Map<Mat> dxs(dx.slice(n, 0).data(), Eigen::Index(g.L), Eigen::Index(ci_n));
        dxs.noalias() = gs * wm.transpose();
      }
    } else {
      const std::vector<S> wflip = pack_weights(true);
      const std::size_t chunk = std::clamp<std::size_t>((std::size_t{1} << 16) / K, 256, std::max<std::size_t>(g.L, 1));
      std::vector<S> xpad, gpad;
      Mat col, glin(Eigen::Index(g.L), Eigen::Index(co_n));
      for (std::size_t n = 0; n < dy.batch(); ++n) {
        pad_channels(x_.slice(n, 0).data(), ci_n, g, xpad);
        pad_channels(dy.slice(n, 0).data(), co_n, g, gpad);
        for (std::size_t co = 0; co < co_n; ++co)
          std::copy_n(gpad.data() + co * g.P + g.p_min, g.L, glin.col(Eigen::Index(co)).data());
        for (std::size_t q = 0; q < g.L; q += chunk) {
          const std::size_t len = std::min(chunk, g.L - q);
          col.resize(Eigen::Index(len), Eigen::Index(K));
          for (std::size_t t = 0; t < T; ++t) {
            const auto start = static_cast<std::size_t>(std::ptrdiff_t(g.p_min + q) + g.offsets[t]);
            for (std::size_t ci = 0; ci < ci_n; ++ci)
              std::copy_n(xpad.data() + ci * g.P + start, len, col.col(Eigen::Index(t * ci_n + ci)).data());
          }
          dwm.noalias() += col.transpose() * glin.middleRows(Eigen::Index(q), Eigen::Index(len));
        }
        correlate(gpad.data(), co_n, ci_n, g, wflip, nullptr, dx.slice(n, 0).data());
      }
    }
    S* gw = weight.grad.data();
    for (std::size_t co = 0; co < co_n; ++co)
      for (std::size_t ci = 0; ci < ci_n; ++ci)
        for (std::size_t t = 0; t < T; ++t)
          gw[(co * ci_n + ci) * T + t] += dwm(Eigen::Index(t * ci_n + ci), Eigen::Index(co));
  }

  // ---- direct loops -----------------------------------------------------------

  /// Visits every (small-grid index, tap, big-grid index) triple of the strided
  /// correlation that maps a big grid (conv input) onto a small grid (conv output).
  template <class Fn>
  void for_each_tap(const std::array<std::size_t, 3>& big, const std::array<std::size_t, 3>& small, Fn&& fn) const {
    const std::size_t k = spec_.kernel, s = spec_.stride;
    const auto p = static_cast<std::ptrdiff_t>(pad());
    for (std::size_t oz = 0; oz < small[0]; ++oz)
      for (std::size_t oy = 0; oy < small[1]; ++oy)
        for (std::size_t ox = 0; ox < small[2]; ++ox) {
          const std::size_t o = (oz * small[1] + oy) * small[2] + ox;
          for (std::size_t kz = 0; kz < k; ++kz) {
            const std::ptrdiff_t iz = std::ptrdiff_t(oz * s + kz) - p;
            if (iz < 0 || iz >= std::ptrdiff_t(big[0])) continue;
            for (std::size_t ky = 0; ky < k; ++ky) {
              const std::ptrdiff_t iy = std::ptrdiff_t(oy * s + ky) - p;
              if (iy < 0 || iy >= std::ptrdiff_t(big[1])) continue;
              for (std::size_t kx = 0; kx < k; ++kx) {
                const std::ptrdiff_t ix = std::ptrdiff_t(ox * s + kx) - p;
                if (ix < 0 || ix >= std::ptrdiff_t(big[2])) continue;
                fn(o, (kz * k + ky) * k + kx, (std::size_t(iz) * big[1] + std::size_t(iy)) * big[2] + std::size_t(ix));
              }
            }
          }
        }
  }

  static std::array<std::size_t, 3> grid(const NdTensor<S>& t) { return {t.dim(2), t.dim(3), t.dim(4)}; }

  void direct_forward(const NdTensor<S>& x, NdTensor<S>& y) const {
    const std::size_t taps = spec_.kernel * spec_.kernel * spec_.kernel;
    const std::size_t vin = x.spatial(), vout = y.spatial();
    const S* w = weight.value.data();
    for (std::size_t n = 0; n < x.batch(); ++n) {
      const S* xs = x.slice(n, 0).data();
      S* ys = y.slice(n, 0).data();
      for (std::size_t co = 0; co < spec_.out; ++co) std::fill_n(ys + co * vout, vout, bias.value[co]);
      for_each_tap(grid(x), grid(y), [&](std::size_t o, std::size_t t, std::size_t i) {
        for (std::size_t co = 0; co < spec_.out; ++co) {
          S acc = 0;
          for (std::size_t ci = 0; ci < spec_.in; ++ci) acc += w[(co * spec_.in + ci) * taps + t] * xs[ci * vin + i];
          ys[co * vout + o] += acc;
        }
      });
    }
  }

  void direct_backward(const NdTensor<S>& dy, NdTensor<S>& dx) {
    const std::size_t taps = spec_.kernel * spec_.kernel * spec_.kernel;
    const std::size_t vin = x_.spatial(), vout = dy.spatial();
    const S* w = weight.value.data();
    S* gw = weight.grad.data();
    for (std::size_t n = 0; n < dy.batch(); ++n) {
      const S* xs = x_.slice(n, 0).data();
      const S* gs = dy.slice(n, 0).data();
      S* dxs = dx.slice(n, 0).data();
      for_each_tap(grid(x_), grid(dy), [&](std::size_t o, std::size_t t, std::size_t i) {
        for (std::size_t co = 0; co < spec_.out; ++co) {
          const S g = gs[co * vout + o];
          for (std::size_t ci = 0; ci < spec_.in; ++ci) {
            dxs[ci * vin + i] += w[(co * spec_.in + ci) * taps + t] * g;
            gw[(co * spec_.in + ci) * taps + t] += g * xs[ci * vin + i];
          }
        }
      });
    }
  }

  // Transpose form: x lives on the small grid, y on the big grid.
  void transpose_forward(const NdTensor<S>& x, NdTensor<S>& y) const {
    const std::size_t taps = spec_.kernel * spec_.kernel * spec_.kernel;
    const std::size_t vsmall = x.spatial(), vbig = y.spatial();
    const S* w = weight.value.data();
    for (std::size_t n = 0; n < x.batch(); ++n) {
      const S* xs = x.slice(n, 0).data();
      S* ys = y.slice(n, 0).data();
      for (std::size_t co = 0; co < spec_.out; ++co) std::fill_n(ys + co * vbig, vbig, bias.value[co]);
      for_each_tap(grid(y), grid(x), [&](std::size_t o, std::size_t t, std::size_t i) {
        for (std::size_t ci = 0; ci < spec_.in; ++ci) {
          const S v = xs[ci * vsmall + o];
          for (std::size_t co = 0; co < spec_.out; ++co) ys[co * vbig + i] += w[(ci * spec_.out + co) * taps + t] * v;
        }
      });
    }
  }

  void transpose_backward(const NdTensor<S>& dy, NdTensor<S>& dx) {
    const std::size_t taps = spec_.kernel * spec_.kernel * spec_.kernel;
    const std::size_t vsmall = x_.spatial(), vbig = dy.spatial();
    const S* w = weight.value.data();
    S* gw = weight.grad.data();
    for (std::size_t n = 0; n < dy.batch(); ++n) {
      const S* xs = x_.slice(n, 0).data();
      const S* gs = dy.slice(n, 0).data();
      S* dxs = dx.slice(n, 0).data();
      for_each_tap(grid(dy), grid(x_), [&](std::size_t o, std::size_t t, std::size_t i) {
        for (std::size_t ci = 0; ci < spec_.in; ++ci) {
          S acc = 0;
          const S v = xs[ci * vsmall + o];
          for (std::size_t co = 0; co < spec_.out; ++co) {
            const S g = gs[co * vbig + i];
            acc += w[(ci * spec_.out + co) * taps + t] * g;
            gw[(ci * spec_.out + co) * taps + t] += v * g;
          }
          dxs[ci * vsmall + o] += acc;
        }
      });
    }
  }

  ConvSpec spec_;
  NdTensor<S> x_;
};

}  // namespace n4n::nn
