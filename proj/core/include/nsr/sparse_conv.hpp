#pragma once

// Grouped kernel banks with input-adaptive mixture weights.
//
// A bank holds k sparsity groups of c channels each along one kernel axis; each
// group is split further into d cardinal slices of c/d channels. A small
// predictor (global pool -> dense -> ReLU -> dense -> normalizer) produces a
// d x k weight matrix per sample, and the bank collapses to a single c-wide
// kernel by summing the k groups slice-wise under those weights. Only the
// collapsed kernel ever touches the image.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "nsr/ops.hpp"
#include "nsr/rng.hpp"
#include "nsr/tensor.hpp"

namespace nsr {

enum class Normalizer { softmax, sigmoid, gumbel_softmax, hardmax };

std::string to_string(Normalizer n);
Normalizer parse_normalizer(const std::string& name);

/// Which kernel axis carries the k*c grouped channels.
enum class GroupAxis { output_grouped, input_grouped };

struct SparsityConfig {
  std::size_t k = 1;  // sparsity groups
  std::size_t c = 1;  // channels per sparsity group
  std::size_t d = 1;  // cardinal groups per sparsity group
  double tau = 1.0;
  Normalizer normalizer = Normalizer::softmax;

  /// Throws ConfigError for k, c, d < 1, d not dividing c, or tau <= 0.
  void validate() const;
  bool operator==(const SparsityConfig&) const = default;
};

/// d x k mixture weights of one sample; row j belongs to cardinal group j.
template <typename T>
struct SparsityWeights {
  std::size_t d = 0;
  std::size_t k = 0;
  std::vector<T> values;

  SparsityWeights() = default;
  SparsityWeights(std::size_t rows, std::size_t groups, T fill = T(0))
      : d(rows), k(groups), values(rows * groups, fill) {}

  T& operator()(std::size_t j, std::size_t i) { return values[j * k + i]; }
  const T& operator()(std::size_t j, std::size_t i) const { return values[j * k + i]; }
  std::span<T> row(std::size_t j) { return std::span<T>(values).subspan(j * k, k); }
  std::span<const T> row(std::size_t j) const { return std::span<const T>(values).subspan(j * k, k); }

  static SparsityWeights one_hot(std::size_t d, std::size_t k, std::size_t selected);
};

template <typename T>
struct GroupedKernelBank {
  GroupAxis axis = GroupAxis::output_grouped;
  std::size_t k = 1;
  std::size_t c = 1;
  std::size_t d = 1;
  // output_grouped: (k*c, c_in, kh, kw); group i owns rows [i*c, (i+1)*c) and
  // cardinal j of group i owns rows [i*c + j*c/d, i*c + (j+1)*c/d).
  // input_grouped: (c_out, k*c, kh, kw) with the same layout on axis 1.
  Tensor<T> weights;
  std::vector<T> bias;  // one per merged output channel

  GroupedKernelBank() = default;
  /// `other` is c_in for output_grouped banks and c_out for input_grouped ones.
  GroupedKernelBank(GroupAxis axis, std::size_t k, std::size_t c, std::size_t d, std::size_t other,
                    std::size_t kh, std::size_t kw);

  std::size_t slice_width() const { return c / d; }
  std::size_t other() const { return axis == GroupAxis::output_grouped ? weights.c() : weights.n(); }
  std::size_t merged_c_out() const { return axis == GroupAxis::output_grouped ? c : weights.n(); }
  std::size_t merged_c_in() const { return axis == GroupAxis::output_grouped ? weights.c() : c; }
  std::size_t kh() const { return weights.h(); }
  std::size_t kw() const { return weights.w(); }

  /// W^{j,i}: cardinal slice j of sparsity group i, bias excluded.
  Tensor<T> slice(std::size_t j, std::size_t i) const;
  /// Whole sparsity group i as a c-wide kernel carrying the bank bias.
  ConvKernel<T> group_kernel(std::size_t i) const;
  /// Every group side by side: the un-merged k*c wide kernel. For
  /// output_grouped banks the bias is repeated once per group.
  ConvKernel<T> wide_kernel() const;

  void zero();

  template <typename U>
  GroupedKernelBank<U> cast() const {
    GroupedKernelBank<U> r;
    r.axis = axis;
    r.k = k;
    r.c = c;
    r.d = d;
    r.weights = weights.template cast<U>();
    r.bias.assign(bias.begin(), bias.end());
    return r;
  }
};

/// Pool -> dense(c_in, hidden) -> ReLU -> dense(hidden, d*k) -> normalizer per row.
template <typename T>
struct SparsityPredictor {
  DenseLayer<T> fc1;
  DenseLayer<T> fc2;
  std::size_t d = 1;
  std::size_t k = 1;
  Normalizer normalizer = Normalizer::softmax;
  T tau = T(1);

  SparsityPredictor() = default;
  SparsityPredictor(std::size_t c_in, std::size_t d, std::size_t k, Normalizer normalizer, T tau);

  static std::size_t hidden_width(std::size_t c_in) { return c_in / 4 > 4 ? c_in / 4 : 4; }
  std::size_t in_features() const { return fc1.in; }
  std::size_t param_count() const {
    return fc1.weights.size() + fc1.bias.size() + fc2.weights.size() + fc2.bias.size();
  }
  void zero();

  template <typename U>
  SparsityPredictor<U> cast() const {
    SparsityPredictor<U> r;
    r.fc1 = fc1.template cast<U>();
    r.fc2 = fc2.template cast<U>();
    r.d = d;
    r.k = k;
    r.normalizer = normalizer;
    r.tau = static_cast<U>(tau);
    return r;
  }
};

/// Controls the stochastic normalizer: Gumbel noise is drawn only when
/// `training` is set, and then `rng` must be provided.
struct GateContext {
  bool training = false;
  Pcg32* rng = nullptr;
};

/// Everything the predictor computed for a batch, kept for the backward pass.
template <typename T>
struct GateTrace {
  Tensor<T> pooled;      // (n, c_in, 1, 1)
  Tensor<T> hidden_pre;  // (n, hidden, 1, 1)
  Tensor<T> logits;      // (n, d*k, 1, 1)
  std::vector<T> noise;  // n*d*k Gumbel draws, empty unless sampled
  std::vector<SparsityWeights<T>> gammas;
};

template <typename T>
GateTrace<T> gate_forward(const SparsityPredictor<T>& p, const Tensor<T>& gate_input, GateContext ctx = {});

template <typename T>
struct GateGrads {
  SparsityPredictor<T> grad_predictor;
  Tensor<T> grad_input;
};

/// Backpropagates per-sample weight gradients through normalizer, MLP and pool.
/// Hardmax passes no gradient to the logits.
template <typename T>
GateGrads<T> gate_backward(const SparsityPredictor<T>& p, const GateTrace<T>& trace, const Shape& input_shape,
                           const std::vector<SparsityWeights<T>>& grad_gammas);

/// Per-sample mixture weights for x.
template <typename T>
std::vector<SparsityWeights<T>> predict_weights(const Tensor<T>& x, const SparsityPredictor<T>& p,
                                                GateContext ctx = {});

/// Index of the largest entry; ties go to the lowest index.
template <typename T>
std::size_t argmax_lowest(std::span<const T> values);

/// Zero-based argmax group per sample. Requires d == 1.
template <typename T>
std::vector<std::size_t> hard_select_index(const Tensor<T>& x, const SparsityPredictor<T>& p);

/// Slice j of the result is sum_i w(j,i) * W^{j,i}, w = sqrt(gamma) or gamma.
template <typename T>
ConvKernel<T> merge_kernels(const GroupedKernelBank<T>& bank, const SparsityWeights<T>& gamma, bool use_sqrt);

/// Accumulates bank gradients into grad_bank and returns d loss / d gamma.
/// The square-root derivative clamps gamma at 1e-12.
template <typename T>
SparsityWeights<T> merge_backward(const GroupedKernelBank<T>& bank, const SparsityWeights<T>& gamma,
                                  bool use_sqrt, const ConvKernel<T>& grad_merged,
                                  GroupedKernelBank<T>& grad_bank);

/// Convolution with a per-sample merged kernel; weights predicted from x.
template <typename T>
Tensor<T> sparse_conv_forward(const Tensor<T>& x, const GroupedKernelBank<T>& bank,
                              const SparsityPredictor<T>& predictor, bool use_sqrt, GateContext ctx = {});

/// Same, with weights predicted from a separate gate input (same batch size).
template <typename T>
Tensor<T> sparse_conv_forward(const Tensor<T>& x, const Tensor<T>& gate_input, const GroupedKernelBank<T>& bank,
                              const SparsityPredictor<T>& predictor, bool use_sqrt, GateContext ctx = {});

template <typename T>
struct SparseConvGrads {
  Tensor<T> grad_x;  // includes the pooling path when x is also the gate input
  GroupedKernelBank<T> grad_bank;
  SparsityPredictor<T> grad_predictor;
};

/// Exact reverse-mode gradients. For Gumbel training pass a context whose
/// generator is in the same state as for the forward call.
template <typename T>
SparseConvGrads<T> sparse_conv_backward(const Tensor<T>& x, const GroupedKernelBank<T>& bank,
                                        const SparsityPredictor<T>& predictor, bool use_sqrt,
                                        const Tensor<T>& grad_out, GateContext ctx = {});

enum class Activation { relu, identity };

/// Weighted sum of k explicit two-layer branches:
///   y = sum_i beta_i * W2^i * F(W1^i * x + b1) + b2
/// bank1 must be output_grouped, bank2 input_grouped, both with d == 1.
template <typename T>
Tensor<T> exact_two_layer_forward(const Tensor<T>& x, const GroupedKernelBank<T>& bank1,
                                  const GroupedKernelBank<T>& bank2, std::span<const T> beta,
                                  Activation f = Activation::relu);

/// Both banks merged with sqrt(beta) first, then conv -> F -> conv.
template <typename T>
Tensor<T> merged_two_layer_forward(const Tensor<T>& x, const GroupedKernelBank<T>& bank1,
                                   const GroupedKernelBank<T>& bank2, std::span<const T> beta1,
                                   std::span<const T> beta2, Activation f = Activation::relu);

template <typename T>
Tensor<T> merged_two_layer_forward(const Tensor<T>& x, const GroupedKernelBank<T>& bank1,
                                   const GroupedKernelBank<T>& bank2, std::span<const T> beta,
                                   Activation f = Activation::relu) {
  return merged_two_layer_forward(x, bank1, bank2, beta, beta, f);
}

/// softmax((logits + g) / tau) with g = -log(-log(u)) when training, else the
/// one-hot argmax of the logits. Returns a single-row weight matrix.
template <typename T>
SparsityWeights<T> gumbel_weights(std::span<const T> logits, T tau, Pcg32& rng, bool training = true);

/// Mean row entropy -sum gamma log gamma, with 0 log 0 = 0.
template <typename T>
double selection_entropy(const SparsityWeights<T>& gamma);

}  // namespace nsr
