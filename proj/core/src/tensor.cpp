#include "nsr/tensor.hpp"

#include <cmath>

namespace nsr {

std::string Shape::str() const {
  return "(" + std::to_string(n) + ", " + std::to_string(c) + ", " + std::to_string(h) + ", " +
         std::to_string(w) + ")";
}

template <typename T>
Tensor<T> Tensor<T>::slice_batch(std::size_t first, std::size_t count) const {
  if (first + count > shape_.n) {
    throw DimensionError("batch slice [" + std::to_string(first) + ", " +
                         std::to_string(first + count) + ") out of range for " + shape_.str());
  }
  const std::size_t len = shape_.c * shape_.plane();
  std::vector<T> out(data_.begin() + static_cast<std::ptrdiff_t>(first * len),
                     data_.begin() + static_cast<std::ptrdiff_t>((first + count) * len));
  return Tensor<T>({count, shape_.c, shape_.h, shape_.w}, std::move(out));
}

template <typename T>
ConvKernel<T>::ConvKernel(std::size_t c_out, std::size_t c_in, std::size_t kh, std::size_t kw)
    : weights({c_out, c_in, kh, kw}), bias(c_out, T(0)) {
  if (kh % 2 == 0 || kw % 2 == 0) {
    throw DimensionError("kernel extent must be odd, got " + std::to_string(kh) + "x" +
                         std::to_string(kw));
  }
}

template <typename T>
ConvKernel<T>::ConvKernel(Tensor<T> w, std::vector<T> b) : weights(std::move(w)), bias(std::move(b)) {
  if (weights.h() % 2 == 0 || weights.w() % 2 == 0) {
    throw DimensionError("kernel extent must be odd, got " + weights.shape().str());
  }
  if (bias.size() != weights.n()) {
    throw DimensionError("bias length " + std::to_string(bias.size()) +
                         " does not match kernel " + weights.shape().str());
  }
}

template <typename T>
void require_finite(std::span<const T> values, const std::string& what) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw NumericalError(what + ": non-finite value at element " + std::to_string(i));
    }
  }
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("add: shape " + a.shape().str() + " vs " + b.shape().str());
  }
  Tensor<T> out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
  return out;
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("max_abs_diff: shape " + a.shape().str() + " vs " + b.shape().str());
  }
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  }
  return m;
}

template <typename T>
double relative_l2(const Tensor<T>& reference, const Tensor<T>& candidate) {
  if (reference.shape() != candidate.shape()) {
    throw DimensionError("relative_l2: shape " + reference.shape().str() + " vs " +
                         candidate.shape().str());
  }
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < reference.size(); ++i) {
    const double r = reference[i];
    const double d = r - static_cast<double>(candidate[i]);
    num += d * d;
    den += r * r;
  }
  return den > 0.0 ? std::sqrt(num / den) : std::sqrt(num);
}

#define NSR_INSTANTIATE(T)                                                   \
  template class Tensor<T>;                                                  \
  template struct ConvKernel<T>;                                             \
  template void require_finite<T>(std::span<const T>, const std::string&);  \
  template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);             \
  template double max_abs_diff<T>(const Tensor<T>&, const Tensor<T>&);       \
  template double relative_l2<T>(const Tensor<T>&, const Tensor<T>&);

NSR_INSTANTIATE(float)
NSR_INSTANTIATE(double)
#undef NSR_INSTANTIATE

}  // namespace nsr
