#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "n4n/core/error.hpp"
#include "n4n/net/config.hpp"
#include "n4n/nn/conv.hpp"
#include "n4n/nn/layers.hpp"

namespace n4n::net {

using nn::Mode;
using nn::NdTensor;

/// conv -> batch norm -> PReLU
template <class S>
struct ConvUnit {
  nn::Conv3d<S> conv;
  nn::BatchNorm3d<S> bn;
  nn::PReLU<S> act;

  ConvUnit() = default;
  ConvUnit(const std::string& name, nn::ConvSpec spec)
      : conv(name + ".conv", spec), bn(name + ".bn", spec.out), act(name + ".act", spec.out) {}

  NdTensor<S> forward(const NdTensor<S>& x, Mode m) { return act.forward(bn.forward(conv.forward(x), m)); }
  NdTensor<S> backward(const NdTensor<S>& dy) { return conv.backward(bn.backward(act.backward(dy))); }

  // The output is renormalized by batch norm, so the weight scale only sets the
  // relative size of optimizer steps; unit variance keeps lr 0.1 steps small.
  static constexpr double kInitStd = 1.0;

  template <class Rng>
  void init(Rng& rng) {
    conv.init(rng, kInitStd);
  }
  void collect(std::vector<nn::Parameter<S>*>& p, std::vector<nn::Buffer<S>>& b) {
    for (auto* q : conv.params()) p.push_back(q);
    for (auto* q : bn.params()) p.push_back(q);
    for (auto* q : act.params()) p.push_back(q);
    for (auto& q : bn.buffers()) b.push_back(q);
  }
  void clear_cache() {
    conv.clear_cache();
    bn.clear_cache();
    act.clear_cache();
  }
  void hash_pattern(std::uint64_t& h) const { act.hash_pattern(h); }
};

/// Two conv units; with `residual`, the input (projected by a 1x1x1 conv if the
/// channel count changes) is added to the output of the pair.
template <class S>
struct ConvBlock {
  ConvUnit<S> a, b;
  bool residual = false;
  std::unique_ptr<nn::Conv3d<S>> proj;

  ConvBlock() = default;
  ConvBlock(const std::string& name, std::size_t cin, std::size_t cout, std::size_t k, bool res)
      : a(name + ".0", {cin, cout, k, 1, nn::Padding::Same, false}),
        b(name + ".1", {cout, cout, k, 1, nn::Padding::Same, false}),
        residual(res) {
    if (res && cin != cout)
      proj = std::make_unique<nn::Conv3d<S>>(name + ".proj", nn::ConvSpec{cin, cout, 1, 1, nn::Padding::Same, false});
  }

  NdTensor<S> forward(const NdTensor<S>& x, Mode m) {
    NdTensor<S> y = b.forward(a.forward(x, m), m);
    if (!residual) return y;
    return nn::residual_add(proj ? proj->forward(x) : x, y);
  }

  NdTensor<S> backward(const NdTensor<S>& dy) {
    NdTensor<S> dx = a.backward(b.backward(dy));
    if (residual) {
      const NdTensor<S> skip = proj ? proj->backward(dy) : dy;
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += skip[i];
    }
    return dx;
  }

  template <class Rng>
  void init(Rng& rng) {
    a.init(rng);
    b.init(rng);
    if (proj) proj->init(rng);
  }
  void collect(std::vector<nn::Parameter<S>*>& p, std::vector<nn::Buffer<S>>& buf) {
    a.collect(p, buf);
    b.collect(p, buf);
    if (proj)
      for (auto* q : proj->params()) p.push_back(q);
  }
  void clear_cache() {
    a.clear_cache();
    b.clear_cache();
    if (proj) proj->clear_cache();
  }
  void hash_pattern(std::uint64_t& h) const {
    a.hash_pattern(h);
    b.hash_pattern(h);
  }
};

/// Encoder-decoder segmentation network with skip concatenations, ending in a
/// 1x1x1 conv to two channels (background, tract) and a voxelwise softmax.
template <class S>
class UNet {
 public:
  explicit UNet(ArchConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    ch_ = cfg_.level_channels();
    const std::size_t L = cfg_.depth, k = cfg_.kernel;
    const bool ext = cfg_.variant == Variant::Ext;
    for (std::size_t l = 0; l < L; ++l) {
      const std::size_t cin = l == 0 ? cfg_.in_channels : ch_[l - 1];
      if (l > 0 && ext)
        down_.emplace_back("down" + std::to_string(l - 1),
                           nn::ConvSpec{cin, cin, 2, 2, nn::Padding::Valid, false});
      enc_.emplace_back("enc" + std::to_string(l), cin, ch_[l], k, ext);
    }
    for (std::size_t l = 0; l + 1 < L; ++l) {
      if (ext)
        up_.emplace_back("up" + std::to_string(l), nn::ConvSpec{ch_[l + 1], ch_[l + 1], 2, 2, nn::Padding::Valid, true});
      dec_.emplace_back("dec" + std::to_string(l), ch_[l] + ch_[l + 1], ch_[l], k, ext);
    }
    pools_.assign(L > 0 ? L - 1 : 0, nn::MaxPool3d<S>(2));
    head_ = nn::Conv3d<S>("head", {ch_[0], 2, 1, 1, nn::Padding::Same, false});
    for (auto& e : enc_) e.collect(params_, buffers_);
    for (auto& d : down_) d.collect(params_, buffers_);
    for (auto& u : up_) u.collect(params_, buffers_);
    for (auto& d : dec_) d.collect(params_, buffers_);
    for (auto* q : head_.params()) params_.push_back(q);
  }

  UNet(const UNet&) = delete;
  UNet& operator=(const UNet&) = delete;

  const ArchConfig& config() const { return cfg_; }
  const std::vector<nn::Parameter<S>*>& params() const { return params_; }
  const std::vector<nn::Buffer<S>>& buffers() const { return buffers_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (auto* p : params_) n += p->value.size();
    return n;
  }

  void init(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (auto& e : enc_) e.init(rng);
    for (auto& d : down_) d.init(rng);
    for (auto& u : up_) u.init(rng);
    for (auto& d : dec_) d.init(rng);
    head_.init(rng);
  }

  void zero_grad() {
    for (auto* p : params_) p->zero_grad();
  }

  /// Returns per-voxel class probabilities, shape (N, 2, D, H, W).
  NdTensor<S> forward(const NdTensor<S>& x, Mode mode) {
    nn::require_5d(x, "network input");
    require(x.channels() == cfg_.in_channels, ErrorCode::ShapeMismatch,
            "network expects " + std::to_string(cfg_.in_channels) + " input channels, got " +
                std::to_string(x.channels()));
    cfg_.check_roi({x.dim(2), x.dim(3), x.dim(4)});
    const std::size_t L = cfg_.depth;
    skips_.assign(L, NdTensor<S>());
    NdTensor<S> h = x;
    for (std::size_t l = 0; l < L; ++l) {
      if (l > 0) h = downsample(l - 1, h, mode);
      h = enc_[l].forward(h, mode);
      if (l + 1 < L) skips_[l] = h;
    }
    for (std::size_t l = L - 1; l-- > 0;) {
      NdTensor<S> u = upsample(l, h, mode);
      h = dec_[l].forward(nn::concat(skips_[l], u), mode);
    }
    skips_.clear();
    return softmax_.forward(head_.forward(h));
  }

  /// Backpropagates dL/dprobabilities; parameter gradients accumulate.
  NdTensor<S> backward(const NdTensor<S>& dprob) {
    const std::size_t L = cfg_.depth;
    NdTensor<S> g = head_.backward(softmax_.backward(dprob));
    std::vector<NdTensor<S>> dskip(L);
    for (std::size_t l = 0; l + 1 < L; ++l) {
      auto [ds, du] = nn::concat_backward(dec_[l].backward(g), ch_[l]);
      dskip[l] = std::move(ds);
      g = upsample_backward(l, du);
    }
    for (std::size_t l = L; l-- > 0;) {
      if (l + 1 < L)
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += dskip[l][i];
      g = enc_[l].backward(g);
      if (l > 0) g = downsample_backward(l - 1, g);
    }
    return g;
  }

  void clear_cache() {
    for (auto& e : enc_) e.clear_cache();
    for (auto& d : down_) d.clear_cache();
    for (auto& u : up_) u.clear_cache();
    for (auto& d : dec_) d.clear_cache();
    for (auto& p : pools_) p.clear_cache();
    head_.clear_cache();
    softmax_.clear_cache();
  }

  /// Summary of the pool and rectifier branches taken by the last forward pass.
  std::uint64_t activation_pattern() const {
    std::uint64_t h = 0;
    for (const auto& e : enc_) e.hash_pattern(h);
    for (const auto& d : down_) d.hash_pattern(h);
    for (const auto& u : up_) u.hash_pattern(h);
    for (const auto& d : dec_) d.hash_pattern(h);
    for (const auto& p : pools_) p.hash_pattern(h);
    return h;
  }

 private:
  NdTensor<S> downsample(std::size_t i, const NdTensor<S>& h, Mode m) {
    return cfg_.variant == Variant::Ext ? down_[i].forward(h, m) : pools_[i].forward(h);
  }
  NdTensor<S> downsample_backward(std::size_t i, const NdTensor<S>& g) {
    return cfg_.variant == Variant::Ext ? down_[i].backward(g) : pools_[i].backward(g);
  }
  NdTensor<S> upsample(std::size_t i, const NdTensor<S>& h, Mode m) {
    return cfg_.variant == Variant::Ext ? up_[i].forward(h, m) : nn::upsample(h, 2);
  }
  NdTensor<S> upsample_backward(std::size_t i, const NdTensor<S>& g) {
    return cfg_.variant == Variant::Ext ? up_[i].backward(g) : nn::upsample_backward(g, 2);
  }

  ArchConfig cfg_;
  std::vector<std::size_t> ch_;
  std::vector<ConvBlock<S>> enc_, dec_;
  std::vector<ConvUnit<S>> down_, up_;
  std::vector<nn::MaxPool3d<S>> pools_;
  nn::Conv3d<S> head_;
  nn::Softmax<S> softmax_;
  std::vector<NdTensor<S>> skips_;
  std::vector<nn::Parameter<S>*> params_;
  std::vector<nn::Buffer<S>> buffers_;
};

}  // namespace n4n::net
