#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nestseg/util.hpp"

namespace nestseg {

// Dense N-dimensional array, row-major. 4-D activations are laid out
// [batch, channels, height, width]. Values are immutable by convention once an
// op has produced them; only optimizer code mutates parameter tensors in place.
template <typename T>
class TensorBase {
 public:
  TensorBase() = default;

  explicit TensorBase(std::vector<std::int64_t> shape)
      : shape_(std::move(shape)), data_(checked_numel(shape_), T(0)) {}

  TensorBase(std::vector<std::int64_t> shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (static_cast<std::int64_t>(data_.size()) != checked_numel(shape_))
      fail("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
           shape_str());
  }

  static TensorBase full(std::vector<std::int64_t> shape, T value) {
    TensorBase t(std::move(shape));
    for (auto& v : t.data_) v = value;
    return t;
  }

  const std::vector<std::int64_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::int64_t dim(std::size_t i) const { return shape_.at(i); }
  std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  T& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  T operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  bool same_shape(const TensorBase& o) const { return shape_ == o.shape_; }

  std::string shape_str() const {
    std::string s = "[";
    for (std::size_t i = 0; i < shape_.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(shape_[i]);
    }
    return s + "]";
  }

  bool all_finite() const;

  // Read by the tape when this tensor is promoted to a leaf.
  bool requires_grad = false;

 private:
  static std::int64_t checked_numel(const std::vector<std::int64_t>& shape) {
    std::int64_t n = 1;
    for (auto d : shape) {
      if (d < 1) fail("tensor dimensions must be >= 1");
      n *= d;
    }
    return n;
  }

  std::vector<std::int64_t> shape_;
  std::vector<T> data_;
};

using Tensor = TensorBase<float>;
using Tensor64 = TensorBase<double>;

template <typename To, typename From>
TensorBase<To> tensor_cast(const TensorBase<From>& t) {
  std::vector<To> data(static_cast<std::size_t>(t.numel()));
  for (std::int64_t i = 0; i < t.numel(); ++i) data[static_cast<std::size_t>(i)] = static_cast<To>(t[i]);
  TensorBase<To> out(t.shape(), std::move(data));
  out.requires_grad = t.requires_grad;
  return out;
}

// Throws naming the op when `t` contains NaN/Inf. Tests call it directly.
// Compiling with NESTSEG_CHECK_FINITE defined adds the check at every op
// boundary; it stays off by default so a diverging run surfaces as a
// non-finite loss for the trainer to roll back rather than as a mid-forward
// error.
template <typename T>
void check_finite(const TensorBase<T>& t, const char* where);

#ifdef NESTSEG_CHECK_FINITE
#define NESTSEG_DEBUG_CHECK_FINITE(t, where) ::nestseg::check_finite((t), (where))
#else
#define NESTSEG_DEBUG_CHECK_FINITE(t, where) ((void)0)
#endif

}  // namespace nestseg
