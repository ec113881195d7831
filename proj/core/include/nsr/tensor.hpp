#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "nsr/error.hpp"

namespace nsr {

/// Extent of a dense NCHW array.
struct Shape {
  std::size_t n = 0;
  std::size_t c = 0;
  std::size_t h = 0;
  std::size_t w = 0;

  std::size_t size() const { return n * c * h * w; }
  std::size_t plane() const { return h * w; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

/// Dense 4-D array (batch, channel, height, width) stored row-major.
/// The element type selects the precision; float and double are instantiated.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0)) : shape_(shape), data_(shape.size(), fill) {}
  Tensor(Shape shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape_.size()) {
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_.str());
    }
  }

  const Shape& shape() const { return shape_; }
  std::size_t n() const { return shape_.n; }
  std::size_t c() const { return shape_.c; }
  std::size_t h() const { return shape_.h; }
  std::size_t w() const { return shape_.w; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  std::vector<T>& vec() { return data_; }
  const std::vector<T>& vec() const { return data_; }

  std::size_t index(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const {
    return ((n * shape_.c + c) * shape_.h + y) * shape_.w + x;
  }
  T& operator()(std::size_t n, std::size_t c, std::size_t y, std::size_t x) {
    return data_[index(n, c, y, x)];
  }
  const T& operator()(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const {
    return data_[index(n, c, y, x)];
  }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  /// Contiguous view of one sample (all channels).
  std::span<T> sample(std::size_t n) {
    const std::size_t len = shape_.c * shape_.plane();
    return std::span<T>(data_).subspan(n * len, len);
  }
  std::span<const T> sample(std::size_t n) const {
    const std::size_t len = shape_.c * shape_.plane();
    return std::span<const T>(data_).subspan(n * len, len);
  }

  /// Copy of samples [first, first + count).
  Tensor slice_batch(std::size_t first, std::size_t count) const;

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  template <typename U>
  Tensor<U> cast() const {
    return Tensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

  bool operator==(const Tensor&) const = default;

 private:
  Shape shape_{};
  std::vector<T> data_;
};

/// Convolution weights (c_out, c_in, kh, kw) plus one bias per output channel.
template <typename T>
struct ConvKernel {
  Tensor<T> weights;
  std::vector<T> bias;

  ConvKernel() = default;
  ConvKernel(std::size_t c_out, std::size_t c_in, std::size_t kh, std::size_t kw);
  ConvKernel(Tensor<T> w, std::vector<T> b);

  std::size_t c_out() const { return weights.n(); }
  std::size_t c_in() const { return weights.c(); }
  std::size_t kh() const { return weights.h(); }
  std::size_t kw() const { return weights.w(); }

  template <typename U>
  ConvKernel<U> cast() const {
    return ConvKernel<U>(weights.template cast<U>(), std::vector<U>(bias.begin(), bias.end()));
  }
};

/// Throws NumericalError unless every element is finite.
template <typename T>
void require_finite(std::span<const T> values, const std::string& what);

/// Element-wise sum of two equally shaped tensors.
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

/// Largest absolute element-wise difference.
template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b);

/// ||a - b||_2 / ||a||_2, with ||a|| = 0 mapped to the absolute norm.
template <typename T>
double relative_l2(const Tensor<T>& reference, const Tensor<T>& candidate);

}  // namespace nsr
