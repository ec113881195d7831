#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "nsr/tensor.hpp"

namespace nsr {

enum class Padding { same, valid };

/// `direct` is the padded-plane production kernel; `reference` is the plain
/// six-loop evaluator kept as the permanent oracle.
enum class ConvAlgo { direct, reference };

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const ConvKernel<T>& k, Padding pad = Padding::same,
                         ConvAlgo algo = ConvAlgo::direct);

/// Six nested loops, one output element at a time.
template <typename T>
Tensor<T> conv2d_reference(const Tensor<T>& x, const ConvKernel<T>& k, Padding pad = Padding::same);

template <typename T>
struct ConvGrads {
  Tensor<T> grad_x;
  ConvKernel<T> grad_k;
};

/// Gradients of sum(grad_out * conv2d_forward(x, k)) with respect to x, weights and bias.
template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& x, const ConvKernel<T>& k, const Tensor<T>& grad_out,
                             Padding pad = Padding::same);

template <typename T>
Tensor<T> relu(const Tensor<T>& x);

/// Passes grad_out where x > 0; the gradient at exactly 0 is 0.
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& x, const Tensor<T>& grad_out);

/// Spatial mean per (sample, channel); output shape (n, c, 1, 1).
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x);

template <typename T>
Tensor<T> global_avg_pool_backward(const Shape& input_shape, const Tensor<T>& grad_out);

/// Fully connected layer; inputs and outputs are (n, features, 1, 1) tensors.
template <typename T>
struct DenseLayer {
  std::size_t in = 0;
  std::size_t out = 0;
  std::vector<T> weights;  // out x in, row-major
  std::vector<T> bias;

  DenseLayer() = default;
  DenseLayer(std::size_t in_features, std::size_t out_features)
      : in(in_features), out(out_features), weights(in_features * out_features, T(0)),
        bias(out_features, T(0)) {}

  T& weight(std::size_t o, std::size_t i) { return weights[o * in + i]; }
  const T& weight(std::size_t o, std::size_t i) const { return weights[o * in + i]; }

  template <typename U>
  DenseLayer<U> cast() const {
    DenseLayer<U> r(in, out);
    std::copy(weights.begin(), weights.end(), r.weights.begin());
    std::copy(bias.begin(), bias.end(), r.bias.begin());
    return r;
  }
};

template <typename T>
Tensor<T> dense_forward(const Tensor<T>& x, const DenseLayer<T>& layer);

template <typename T>
struct DenseGrads {
  Tensor<T> grad_x;
  DenseLayer<T> grad_layer;
};

template <typename T>
DenseGrads<T> dense_backward(const Tensor<T>& x, const DenseLayer<T>& layer, const Tensor<T>& grad_out);

/// Temperature softmax with max subtraction. Throws ParameterError when tau <= 0.
template <typename T>
std::vector<T> softmax(std::span<const T> logits, T tau = T(1));

/// Vector-Jacobian product of softmax(logits / tau) given its output.
template <typename T>
std::vector<T> softmax_backward(std::span<const T> probs, std::span<const T> grad_out, T tau = T(1));

template <typename T>
T sigmoid(T x);

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x);

/// Gradient of sigmoid expressed through its output y.
template <typename T>
Tensor<T> sigmoid_backward(const Tensor<T>& y, const Tensor<T>& grad_out);

namespace detail {

/// Single-sample convolution on raw planes: in is (c_in, h, w), out is
/// (c_out, h_out, w_out) and is overwritten.
template <typename T>
void conv_sample_forward(std::span<const T> in, std::size_t h, std::size_t w, const ConvKernel<T>& k,
                         Padding pad, std::span<T> out);

/// Single-sample backward. grad_in and grad_k are accumulated into, not overwritten;
/// grad_in may be empty to skip the input gradient.
template <typename T>
void conv_sample_backward(std::span<const T> in, std::size_t h, std::size_t w, const ConvKernel<T>& k,
                          Padding pad, std::span<const T> grad_out, std::span<T> grad_in,
                          ConvKernel<T>& grad_k);

}  // namespace detail

}  // namespace nsr
