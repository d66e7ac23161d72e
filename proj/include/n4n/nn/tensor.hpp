#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "n4n/core/error.hpp"

namespace n4n::nn {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + ")";
}

/// Dense row-major array. Activations are 5D (N, C, D, H, W) with W fastest.
template <class S>
class NdTensor {
 public:
  NdTensor() = default;
  explicit NdTensor(Shape shape, S fill = S(0)) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}
  NdTensor(Shape shape, std::vector<S> data) : shape_(std::move(shape)), data_(std::move(data)) {
    require(data_.size() == shape_size(shape_), ErrorCode::ShapeMismatch,
            "tensor data length does not match shape " + shape_str(shape_));
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  S* data() { return data_.data(); }
  const S* data() const { return data_.data(); }
  std::span<S> values() { return data_; }
  std::span<const S> values() const { return data_; }
  S& operator[](std::size_t i) { return data_[i]; }
  const S& operator[](std::size_t i) const { return data_[i]; }

  // 5D activation helpers.
  std::size_t batch() const { return shape_.at(0); }
  std::size_t channels() const { return shape_.at(1); }
  std::size_t spatial() const { return shape_.at(2) * shape_.at(3) * shape_.at(4); }
  std::span<S> slice(std::size_t n, std::size_t c) {
    return std::span<S>(data_).subspan((n * channels() + c) * spatial(), spatial());
  }
  std::span<const S> slice(std::size_t n, std::size_t c) const {
    return std::span<const S>(data_).subspan((n * channels() + c) * spatial(), spatial());
  }

  void fill(S v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](S v) { return std::isfinite(v); });
  }

  template <class T>
  NdTensor<T> cast() const {
    return NdTensor<T>(shape_, std::vector<T>(data_.begin(), data_.end()));
  }

 private:
  Shape shape_;
  std::vector<S> data_;
};

template <class S>
void require_5d(const NdTensor<S>& t, const char* what) {
  require(t.rank() == 5, ErrorCode::ShapeMismatch, std::string(what) + " expects a 5D (N,C,D,H,W) tensor");
}

/// A trainable array with its gradient accumulator.
template <class S>
struct Parameter {
  std::string name;
  NdTensor<S> value;
  NdTensor<S> grad;

  Parameter() = default;
  Parameter(std::string n, NdTensor<S> v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}
  void zero_grad() { grad.fill(S(0)); }
};

/// Non-trainable persistent state (batch-norm running statistics).
template <class S>
struct Buffer {
  std::string name;
  NdTensor<S>* value;
};

}  // namespace n4n::nn
