#pragma once

#include <algorithm>
#include <cmath>
#include <string>

#include "n4n/core/error.hpp"
#include "n4n/nn/tensor.hpp"

namespace n4n::nn {

enum class LossKind { Wip, Wce };

inline std::string to_string(LossKind k) { return k == LossKind::Wip ? "wip" : "wce"; }

inline LossKind parse_loss(const std::string& s) {
  if (s == "wip") return LossKind::Wip;
  if (s == "wce") return LossKind::Wce;
  fail(ErrorCode::InvalidArgument, "unknown loss '" + s + "' (expected wip or wce)");
}

template <class S>
struct LossResult {
  double value = 0;
  NdTensor<S> grad;  // dL/dp, same shape as p
};

inline constexpr double kProbClamp = 1e-7;

namespace detail {

/// Neumaier-compensated running sum.
struct CompensatedSum {
  double sum = 0, c = 0;
  void add(double v) {
    const double t = sum + v;
    c += std::abs(sum) >= std::abs(v) ? (sum - t) + v : (v - t) + sum;
    sum = t;
  }
  double value() const { return sum + c; }
};

template <class S>
void check_loss_args(const NdTensor<S>& p, const NdTensor<S>& y, double w) {
  require(p.size() == y.size(), ErrorCode::ShapeMismatch,
          "loss: prediction " + shape_str(p.shape()) + " vs label " + shape_str(y.shape()));
  require(p.size() > 0, ErrorCode::ShapeMismatch, "loss: empty prediction");
  require(w > 0, ErrorCode::InvalidArgument, "loss: tract weight must be positive");
}
}  // namespace detail

/// Voxel mean of -W*y*p - (1-y)*(1-p).
template <class S>
LossResult<S> loss_wip(const NdTensor<S>& p, const NdTensor<S>& y, double w) {
  detail::check_loss_args(p, y, w);
  const double n = double(p.size());
  LossResult<S> r{0.0, NdTensor<S>(p.shape())};
  const S g_tract = static_cast<S>(-w / n);
  const S g_back = static_cast<S>(1.0 / n);
  detail::CompensatedSum acc;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double yi = y[i], pi = p[i];
    acc.add(-w * yi * pi - (1 - yi) * (1 - pi));
    r.grad[i] = yi > 0.5 ? g_tract : g_back;
  }
  r.value = acc.value() / n;
  return r;
}

/// Voxel mean of -W*y*log(p) - (1-y)*log(1-p), with p clamped away from 0 and 1.
template <class S>
LossResult<S> loss_wce(const NdTensor<S>& p, const NdTensor<S>& y, double w) {
  detail::check_loss_args(p, y, w);
  const double n = double(p.size());
  LossResult<S> r{0.0, NdTensor<S>(p.shape())};
  detail::CompensatedSum acc;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double yi = y[i];
    const double pi = std::clamp<double>(p[i], kProbClamp, 1 - kProbClamp);
    acc.add(-w * yi * std::log(pi) - (1 - yi) * std::log(1 - pi));
    r.grad[i] = static_cast<S>((-w * yi / pi + (1 - yi) / (1 - pi)) / n);
  }
  r.value = acc.value() / n;
  return r;
}

template <class S>
LossResult<S> compute_loss(LossKind kind, const NdTensor<S>& p, const NdTensor<S>& y, double w) {
  return kind == LossKind::Wip ? loss_wip(p, y, w) : loss_wce(p, y, w);
}

}  // namespace n4n::nn
