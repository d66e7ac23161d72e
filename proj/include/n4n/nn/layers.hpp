#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "n4n/core/error.hpp"
#include "n4n/nn/tensor.hpp"

namespace n4n::nn {

namespace detail {

inline std::uint64_t mix(std::uint64_t h, std::uint64_t v) {
  h ^= v + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
  return h;
}

}  // namespace detail

enum class Mode { Train, Eval };

/// Per-channel batch normalization over batch and spatial axes.
template <class S>
class BatchNorm3d {
 public:
  Parameter<S> gamma;
  Parameter<S> beta;
  NdTensor<S> running_mean;
  NdTensor<S> running_var;
  static constexpr double kEps = 1e-5;
  static constexpr double kMomentum = 0.9;

  BatchNorm3d() = default;
  BatchNorm3d(const std::string& name, std::size_t channels)
      : gamma(name + ".gamma", NdTensor<S>(Shape{channels}, S(1))),
        beta(name + ".beta", NdTensor<S>(Shape{channels}, S(0))),
        running_mean(Shape{channels}, S(0)),
        running_var(Shape{channels}, S(1)),
        name_(name) {}

  std::vector<Parameter<S>*> params() { return {&gamma, &beta}; }
  std::vector<Buffer<S>> buffers() {
    return {{name_ + ".running_mean", &running_mean}, {name_ + ".running_var", &running_var}};
  }

  NdTensor<S> forward(const NdTensor<S>& x, Mode mode) {
    require_5d(x, "batchnorm");
    const std::size_t C = gamma.value.size();
    require(x.channels() == C, ErrorCode::ShapeMismatch, name_ + ": channel count mismatch");
    NdTensor<S> y(x.shape());
    const std::size_t N = x.batch();
    mode_ = mode;
    if (mode == Mode::Train) {
      xhat_ = NdTensor<S>(x.shape());
      invstd_.assign(C, 0.0);
    }
    for (std::size_t c = 0; c < C; ++c) {
      double mean, var;
      if (mode == Mode::Train) {
        double s = 0;
        std::size_t m = 0;
        for (std::size_t n = 0; n < N; ++n)
          for (S v : x.slice(n, c)) s += v, ++m;
        mean = s / double(m);
        double ss = 0;
        for (std::size_t n = 0; n < N; ++n)
          for (S v : x.slice(n, c)) ss += (v - mean) * (v - mean);
        var = ss / double(m);
        running_mean[c] = static_cast<S>(kMomentum * running_mean[c] + (1 - kMomentum) * mean);
        running_var[c] = static_cast<S>(kMomentum * running_var[c] + (1 - kMomentum) * var);
      } else {
        mean = running_mean[c];
        var = running_var[c];
      }
      const double inv = 1.0 / std::sqrt(var + kEps);
      const double g = gamma.value[c], b = beta.value[c];
      if (mode == Mode::Train) invstd_[c] = inv;
      for (std::size_t n = 0; n < N; ++n) {
        auto xs = x.slice(n, c);
        auto ys = y.slice(n, c);
        for (std::size_t i = 0; i < xs.size(); ++i) {
          const double h = (xs[i] - mean) * inv;
          if (mode == Mode::Train) xhat_.slice(n, c)[i] = static_cast<S>(h);
          ys[i] = static_cast<S>(g * h + b);
        }
      }
    }
    return y;
  }

  NdTensor<S> backward(const NdTensor<S>& dy) {
    require(mode_ == Mode::Train && !xhat_.empty(), ErrorCode::InvalidArgument,
            name_ + ": backward requires a training-mode forward");
    require(dy.shape() == xhat_.shape(), ErrorCode::ShapeMismatch, name_ + ": gradient shape mismatch");
    NdTensor<S> dx(dy.shape());
    const std::size_t N = dy.batch(), C = gamma.value.size();
    const double M = double(N * dy.spatial());
    for (std::size_t c = 0; c < C; ++c) {
      double sdy = 0, sdyx = 0;
      for (std::size_t n = 0; n < N; ++n) {
        auto g = dy.slice(n, c);
        auto h = xhat_.slice(n, c);
        for (std::size_t i = 0; i < g.size(); ++i) sdy += g[i], sdyx += double(g[i]) * h[i];
      }
      gamma.grad[c] += static_cast<S>(sdyx);
      beta.grad[c] += static_cast<S>(sdy);
      const double k = double(gamma.value[c]) * invstd_[c] / M;
      for (std::size_t n = 0; n < N; ++n) {
        auto g = dy.slice(n, c);
        auto h = xhat_.slice(n, c);
        auto d = dx.slice(n, c);
        for (std::size_t i = 0; i < g.size(); ++i) d[i] = static_cast<S>(k * (M * g[i] - sdy - h[i] * sdyx));
      }
    }
    return dx;
  }

  void clear_cache() { xhat_ = NdTensor<S>(); }

 private:
  std::string name_;
  Mode mode_ = Mode::Train;
  NdTensor<S> xhat_;
  std::vector<double> invstd_;
};

/// Rectifier with a learnable per-channel negative slope.
template <class S>
class PReLU {
 public:
  Parameter<S> a;
  static constexpr double kInitSlope = 0.25;

  PReLU() = default;
  PReLU(const std::string& name, std::size_t channels)
      : a(name + ".a", NdTensor<S>(Shape{channels}, S(kInitSlope))) {}

  std::vector<Parameter<S>*> params() { return {&a}; }

  NdTensor<S> forward(const NdTensor<S>& x) {
    require_5d(x, "prelu");
    require(x.channels() == a.value.size(), ErrorCode::ShapeMismatch, a.name + ": channel count mismatch");
    x_ = x;
    NdTensor<S> y(x.shape());
    for (std::size_t n = 0; n < x.batch(); ++n)
      for (std::size_t c = 0; c < x.channels(); ++c) {
        const S s = a.value[c];
        auto xs = x.slice(n, c);
        auto ys = y.slice(n, c);
        for (std::size_t i = 0; i < xs.size(); ++i) ys[i] = xs[i] >= S(0) ? xs[i] : s * xs[i];
      }
    return y;
  }

  NdTensor<S> backward(const NdTensor<S>& dy) {
    require(dy.shape() == x_.shape(), ErrorCode::ShapeMismatch, a.name + ": gradient shape mismatch");
    NdTensor<S> dx(dy.shape());
    for (std::size_t n = 0; n < dy.batch(); ++n)
      for (std::size_t c = 0; c < dy.channels(); ++c) {
        const S s = a.value[c];
        auto xs = x_.slice(n, c);
        auto gs = dy.slice(n, c);
        auto ds = dx.slice(n, c);
        double da = 0;
        for (std::size_t i = 0; i < xs.size(); ++i) {
          if (xs[i] >= S(0)) {
            ds[i] = gs[i];
          } else {
            ds[i] = s * gs[i];
            da += double(gs[i]) * xs[i];
          }
        }
        a.grad[c] += static_cast<S>(da);
      }
    return dx;
  }

  void clear_cache() { x_ = NdTensor<S>(); }

  /// Folds the branch taken per element of the last forward pass into h.
  void hash_pattern(std::uint64_t& h) const {
    for (const S v : x_.values()) h = detail::mix(h, v >= S(0));
  }

 private:
  NdTensor<S> x_;
};

/// Blockwise max with ragged trailing blocks (equivalent to replication padding).
template <class S>
class MaxPool3d {
 public:
  explicit MaxPool3d(std::size_t k = 2) : k_(k) {
    require(k >= 1, ErrorCode::InvalidArgument, "pool size must be positive");
  }

  NdTensor<S> forward(const NdTensor<S>& x) {
    require_5d(x, "maxpool");
    in_shape_ = x.shape();
    const std::size_t D = x.dim(2), H = x.dim(3), W = x.dim(4);
    const std::size_t od = (D + k_ - 1) / k_, oh = (H + k_ - 1) / k_, ow = (W + k_ - 1) / k_;
    NdTensor<S> y(Shape{x.batch(), x.channels(), od, oh, ow});
    argmax_.assign(y.size(), 0);
    std::size_t out = 0;
    for (std::size_t n = 0; n < x.batch(); ++n)
      for (std::size_t c = 0; c < x.channels(); ++c) {
        auto xs = x.slice(n, c);
        const std::size_t base = (n * x.channels() + c) * x.spatial();
        for (std::size_t z = 0; z < od; ++z)
          for (std::size_t yy = 0; yy < oh; ++yy)
            for (std::size_t xx = 0; xx < ow; ++xx, ++out) {
              S best = -std::numeric_limits<S>::infinity();
              std::size_t arg = std::numeric_limits<std::size_t>::max();
              for (std::size_t dz = 0; dz < k_ && z * k_ + dz < D; ++dz)
                for (std::size_t dy = 0; dy < k_ && yy * k_ + dy < H; ++dy)
                  for (std::size_t dx = 0; dx < k_ && xx * k_ + dx < W; ++dx) {
                    const std::size_t i = ((z * k_ + dz) * H + yy * k_ + dy) * W + xx * k_ + dx;
                    if (arg == std::numeric_limits<std::size_t>::max() || xs[i] > best) best = xs[i], arg = i;
                  }
              y[out] = best;
              argmax_[out] = base + arg;
            }
      }
    return y;
  }

  NdTensor<S> backward(const NdTensor<S>& dy) {
    require(dy.size() == argmax_.size(), ErrorCode::ShapeMismatch, "maxpool: gradient shape mismatch");
    NdTensor<S> dx(in_shape_);
    for (std::size_t i = 0; i < dy.size(); ++i) dx[argmax_[i]] += dy[i];
    return dx;
  }

  void clear_cache() { argmax_.clear(); }

  void hash_pattern(std::uint64_t& h) const {
    for (const std::size_t a : argmax_) h = detail::mix(h, a);
  }

 private:
  std::size_t k_;
  Shape in_shape_;
  std::vector<std::size_t> argmax_;
};

/// Nearest-neighbour upsampling by an integer factor.
template <class S>
NdTensor<S> upsample(const NdTensor<S>& x, std::size_t k = 2) {
  require_5d(x, "upsample");
  const std::size_t D = x.dim(2), H = x.dim(3), W = x.dim(4);
  NdTensor<S> y(Shape{x.batch(), x.channels(), D * k, H * k, W * k});
  for (std::size_t n = 0; n < x.batch(); ++n)
    for (std::size_t c = 0; c < x.channels(); ++c) {
      auto xs = x.slice(n, c);
      auto ys = y.slice(n, c);
      for (std::size_t z = 0; z < D * k; ++z)
        for (std::size_t yy = 0; yy < H * k; ++yy) {
          const S* src = xs.data() + ((z / k) * H + yy / k) * W;
          S* dst = ys.data() + (z * H * k + yy) * W * k;
          for (std::size_t xx = 0; xx < W * k; ++xx) dst[xx] = src[xx / k];
        }
    }
  return y;
}

template <class S>
NdTensor<S> upsample_backward(const NdTensor<S>& dy, std::size_t k = 2) {
  require_5d(dy, "upsample");
  require(dy.dim(2) % k == 0 && dy.dim(3) % k == 0 && dy.dim(4) % k == 0, ErrorCode::ShapeMismatch,
          "upsample: gradient dims not divisible by factor");
  const std::size_t D = dy.dim(2) / k, H = dy.dim(3) / k, W = dy.dim(4) / k;
  NdTensor<S> dx(Shape{dy.batch(), dy.channels(), D, H, W});
  for (std::size_t n = 0; n < dy.batch(); ++n)
    for (std::size_t c = 0; c < dy.channels(); ++c) {
      auto gs = dy.slice(n, c);
      auto ds = dx.slice(n, c);
      for (std::size_t z = 0; z < D * k; ++z)
        for (std::size_t yy = 0; yy < H * k; ++yy) {
          S* dst = ds.data() + ((z / k) * H + yy / k) * W;
          const S* src = gs.data() + (z * H * k + yy) * W * k;
          for (std::size_t xx = 0; xx < W * k; ++xx) dst[xx / k] += src[xx];
        }
    }
  return dx;
}

/// Channel concatenation [a, b].
template <class S>
NdTensor<S> concat(const NdTensor<S>& a, const NdTensor<S>& b) {
  require_5d(a, "concat");
  require_5d(b, "concat");
  require(a.batch() == b.batch() && a.dim(2) == b.dim(2) && a.dim(3) == b.dim(3) && a.dim(4) == b.dim(4),
          ErrorCode::ShapeMismatch, "concat: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const std::size_t ca = a.channels(), cb = b.channels(), V = a.spatial();
  NdTensor<S> y(Shape{a.batch(), ca + cb, a.dim(2), a.dim(3), a.dim(4)});
  for (std::size_t n = 0; n < a.batch(); ++n) {
    std::copy_n(a.data() + n * ca * V, ca * V, y.data() + n * (ca + cb) * V);
    std::copy_n(b.data() + n * cb * V, cb * V, y.data() + (n * (ca + cb) + ca) * V);
  }
  return y;
}

template <class S>
std::pair<NdTensor<S>, NdTensor<S>> concat_backward(const NdTensor<S>& dy, std::size_t ca) {
  require_5d(dy, "concat");
  require(ca <= dy.channels(), ErrorCode::ShapeMismatch, "concat: split point out of range");
  const std::size_t cb = dy.channels() - ca, V = dy.spatial();
  NdTensor<S> da(Shape{dy.batch(), ca, dy.dim(2), dy.dim(3), dy.dim(4)});
  NdTensor<S> db(Shape{dy.batch(), cb, dy.dim(2), dy.dim(3), dy.dim(4)});
  for (std::size_t n = 0; n < dy.batch(); ++n) {
    std::copy_n(dy.data() + n * (ca + cb) * V, ca * V, da.data() + n * ca * V);
    std::copy_n(dy.data() + (n * (ca + cb) + ca) * V, cb * V, db.data() + n * cb * V);
  }
  return {std::move(da), std::move(db)};
}

template <class S>
NdTensor<S> residual_add(const NdTensor<S>& x, const NdTensor<S>& fx) {
  require(x.shape() == fx.shape(), ErrorCode::ShapeMismatch,
          "residual_add: " + shape_str(x.shape()) + " vs " + shape_str(fx.shape()));
  NdTensor<S> y(x.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] + fx[i];
  return y;
}

/// Softmax across channels at every voxel.
template <class S>
class Softmax {
 public:
  NdTensor<S> forward(const NdTensor<S>& z) {
    require_5d(z, "softmax");
    require(z.channels() >= 2, ErrorCode::ShapeMismatch, "softmax needs at least two channels");
    NdTensor<S> p(z.shape());
    const std::size_t C = z.channels(), V = z.spatial();
    std::vector<double> e(C);
    for (std::size_t n = 0; n < z.batch(); ++n) {
      const S* zs = z.data() + n * C * V;
      S* ps = p.data() + n * C * V;
      for (std::size_t v = 0; v < V; ++v) {
        double m = zs[v];
        for (std::size_t c = 1; c < C; ++c) m = std::max(m, double(zs[c * V + v]));
        double sum = 0;
        for (std::size_t c = 0; c < C; ++c) sum += e[c] = std::exp(zs[c * V + v] - m);
        for (std::size_t c = 0; c < C; ++c) ps[c * V + v] = static_cast<S>(e[c] / sum);
      }
    }
    p_ = p;
    return p;
  }

  NdTensor<S> backward(const NdTensor<S>& dp) const {
    require(dp.shape() == p_.shape(), ErrorCode::ShapeMismatch, "softmax: gradient shape mismatch");
    NdTensor<S> dz(dp.shape());
    const std::size_t C = dp.channels(), V = dp.spatial();
    for (std::size_t n = 0; n < dp.batch(); ++n) {
      const S* ps = p_.data() + n * C * V;
      const S* gs = dp.data() + n * C * V;
      S* ds = dz.data() + n * C * V;
      for (std::size_t v = 0; v < V; ++v) {
        double dot = 0;
        for (std::size_t c = 0; c < C; ++c) dot += double(gs[c * V + v]) * ps[c * V + v];
        for (std::size_t c = 0; c < C; ++c) ds[c * V + v] = static_cast<S>(ps[c * V + v] * (gs[c * V + v] - dot));
      }
    }
    return dz;
  }

  void clear_cache() { p_ = NdTensor<S>(); }

 private:
  NdTensor<S> p_;
};

}  // namespace n4n::nn
