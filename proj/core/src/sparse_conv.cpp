#include "nsr/sparse_conv.hpp"

#include <algorithm>
#include <cmath>

namespace nsr {
namespace {

constexpr double kSqrtFloor = 1e-12;

// Visits every (merged unit, source unit, j, i) pairing of a bank. A unit is the
// contiguous run of weights that moves as one block during merging: a whole
// output row for output_grouped banks, one kh*kw tap window otherwise.
template <typename T, typename F>
void for_each_unit(const GroupedKernelBank<T>& bank, F&& f) {
  const std::size_t s = bank.slice_width();
  const bool out_grouped = bank.axis == GroupAxis::output_grouped;
  const std::size_t outer = out_grouped ? 1 : bank.weights.n();
  const std::size_t unit = out_grouped ? bank.weights.c() * bank.kh() * bank.kw() : bank.kh() * bank.kw();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t j = 0; j < bank.d; ++j) {
      for (std::size_t r = 0; r < s; ++r) {
        const std::size_t merged = (o * bank.c + j * s + r) * unit;
        for (std::size_t i = 0; i < bank.k; ++i) {
          const std::size_t src = (o * bank.k * bank.c + i * bank.c + j * s + r) * unit;
          f(merged, src, unit, j, i);
        }
      }
    }
  }
}

template <typename T>
void check_gamma(const GroupedKernelBank<T>& bank, const SparsityWeights<T>& gamma) {
  if (gamma.d != bank.d || gamma.k != bank.k || gamma.values.size() != bank.d * bank.k) {
    throw DimensionError("mixture weights " + std::to_string(gamma.d) + "x" + std::to_string(gamma.k) +
                         " do not match bank " + std::to_string(bank.d) + "x" + std::to_string(bank.k));
  }
}

template <typename T>
std::vector<T> normalize_row(std::span<const T> logits, std::span<const T> noise, Normalizer n, T tau) {
  switch (n) {
    case Normalizer::softmax:
      return softmax(logits, tau);
    case Normalizer::sigmoid: {
      std::vector<T> out(logits.size());
      for (std::size_t i = 0; i < logits.size(); ++i) out[i] = sigmoid(logits[i]);
      return out;
    }
    case Normalizer::gumbel_softmax:
      if (!noise.empty()) {
        std::vector<T> perturbed(logits.size());
        for (std::size_t i = 0; i < logits.size(); ++i) perturbed[i] = logits[i] + noise[i];
        return softmax<T>(perturbed, tau);
      }
      [[fallthrough]];
    case Normalizer::hardmax: {
      std::vector<T> out(logits.size(), T(0));
      out[argmax_lowest(logits)] = T(1);
      return out;
    }
  }
  return {};
}

template <typename T>
T gumbel_draw(Pcg32& rng) {
  return static_cast<T>(-std::log(-std::log(rng.uniform_open())));
}

}  // namespace

std::string to_string(Normalizer n) {
  switch (n) {
    case Normalizer::softmax:
      return "softmax";
    case Normalizer::sigmoid:
      return "sigmoid";
    case Normalizer::gumbel_softmax:
      return "gumbel_softmax";
    case Normalizer::hardmax:
      return "hardmax";
  }
  return "?";
}

Normalizer parse_normalizer(const std::string& name) {
  if (name == "softmax") return Normalizer::softmax;
  if (name == "sigmoid") return Normalizer::sigmoid;
  if (name == "gumbel_softmax" || name == "gumbel") return Normalizer::gumbel_softmax;
  if (name == "hardmax") return Normalizer::hardmax;
  throw ConfigError("unknown normalizer '" + name + "' (expected softmax, sigmoid, gumbel_softmax or hardmax)");
}

void SparsityConfig::validate() const {
  if (k < 1 || c < 1 || d < 1) throw ConfigError("sparsity k, c and d must all be >= 1");
  if (c % d != 0) {
    throw ConfigError("cardinal groups d=" + std::to_string(d) + " must divide group width c=" +
                      std::to_string(c));
  }
  if (!(tau > 0.0)) throw ConfigError("softmax temperature must be positive");
}

template <typename T>
SparsityWeights<T> SparsityWeights<T>::one_hot(std::size_t d, std::size_t k, std::size_t selected) {
  SparsityWeights w(d, k);
  for (std::size_t j = 0; j < d; ++j) w(j, selected) = T(1);
  return w;
}

template <typename T>
GroupedKernelBank<T>::GroupedKernelBank(GroupAxis ax, std::size_t groups, std::size_t width, std::size_t cards,
                                        std::size_t other_dim, std::size_t kh, std::size_t kw)
    : axis(ax), k(groups), c(width), d(cards) {
  SparsityConfig{groups, width, cards, 1.0, Normalizer::softmax}.validate();
  if (kh % 2 == 0 || kw % 2 == 0) throw DimensionError("kernel extent must be odd");
  if (axis == GroupAxis::output_grouped) {
    weights = Tensor<T>({k * c, other_dim, kh, kw});
    bias.assign(c, T(0));
  } else {
    weights = Tensor<T>({other_dim, k * c, kh, kw});
    bias.assign(other_dim, T(0));
  }
}

template <typename T>
Tensor<T> GroupedKernelBank<T>::slice(std::size_t j, std::size_t i) const {
  if (j >= d || i >= k) throw DimensionError("slice index out of range");
  const std::size_t s = slice_width();
  const std::size_t taps = kh() * kw();
  if (axis == GroupAxis::output_grouped) {
    const std::size_t row = weights.c() * taps;
    const auto first = weights.vec().begin() + static_cast<std::ptrdiff_t>((i * c + j * s) * row);
    return Tensor<T>({s, weights.c(), kh(), kw()}, std::vector<T>(first, first + static_cast<std::ptrdiff_t>(s * row)));
  }
  Tensor<T> out({weights.n(), s, kh(), kw()});
  for (std::size_t co = 0; co < weights.n(); ++co) {
    for (std::size_t r = 0; r < s; ++r) {
      const T* src = &weights(co, i * c + j * s + r, 0, 0);
      std::copy(src, src + taps, &out(co, r, 0, 0));
    }
  }
  return out;
}

template <typename T>
ConvKernel<T> GroupedKernelBank<T>::group_kernel(std::size_t i) const {
  if (i >= k) throw DimensionError("group index out of range");
  const std::size_t taps = kh() * kw();
  if (axis == GroupAxis::output_grouped) {
    const std::size_t row = weights.c() * taps;
    const auto first = weights.vec().begin() + static_cast<std::ptrdiff_t>(i * c * row);
    Tensor<T> w({c, weights.c(), kh(), kw()}, std::vector<T>(first, first + static_cast<std::ptrdiff_t>(c * row)));
    return ConvKernel<T>(std::move(w), bias);
  }
  Tensor<T> w({weights.n(), c, kh(), kw()});
  for (std::size_t co = 0; co < weights.n(); ++co) {
    const T* src = &weights(co, i * c, 0, 0);
    std::copy(src, src + c * taps, &w(co, 0, 0, 0));
  }
  return ConvKernel<T>(std::move(w), bias);
}

template <typename T>
ConvKernel<T> GroupedKernelBank<T>::wide_kernel() const {
  if (axis == GroupAxis::input_grouped) return ConvKernel<T>(weights, bias);
  std::vector<T> b;
  b.reserve(k * c);
  for (std::size_t i = 0; i < k; ++i) b.insert(b.end(), bias.begin(), bias.end());
  return ConvKernel<T>(weights, std::move(b));
}

template <typename T>
void GroupedKernelBank<T>::zero() {
  weights.fill(T(0));
  std::fill(bias.begin(), bias.end(), T(0));
}

template <typename T>
SparsityPredictor<T>::SparsityPredictor(std::size_t c_in, std::size_t rows, std::size_t groups, Normalizer norm,
                                        T temperature)
    : fc1(c_in, hidden_width(c_in)), fc2(hidden_width(c_in), rows * groups), d(rows), k(groups),
      normalizer(norm), tau(temperature) {
  if (c_in < 1 || rows < 1 || groups < 1) throw ConfigError("predictor dimensions must be >= 1");
  if (!(tau > T(0))) throw ParameterError("predictor temperature must be positive");
}

template <typename T>
void SparsityPredictor<T>::zero() {
  for (auto* layer : {&fc1, &fc2}) {
    std::fill(layer->weights.begin(), layer->weights.end(), T(0));
    std::fill(layer->bias.begin(), layer->bias.end(), T(0));
  }
}

template <typename T>
std::size_t argmax_lowest(std::span<const T> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

template <typename T>
GateTrace<T> gate_forward(const SparsityPredictor<T>& p, const Tensor<T>& gate_input, GateContext ctx) {
  if (gate_input.c() != p.in_features()) {
    throw DimensionError("predictor expects " + std::to_string(p.in_features()) + " channels, input is " +
                         gate_input.shape().str());
  }
  GateTrace<T> t;
  t.pooled = global_avg_pool(gate_input);
  t.hidden_pre = dense_forward(t.pooled, p.fc1);
  t.logits = dense_forward(relu(t.hidden_pre), p.fc2);
  const std::size_t n = gate_input.n();
  const std::size_t dk = p.d * p.k;
  if (p.normalizer == Normalizer::gumbel_softmax && ctx.training) {
    if (ctx.rng == nullptr) throw ConfigError("Gumbel sampling in training mode needs a generator");
    t.noise.resize(n * dk);
    for (auto& g : t.noise) g = gumbel_draw<T>(*ctx.rng);
  }
  t.gammas.reserve(n);
  for (std::size_t s = 0; s < n; ++s) {
    SparsityWeights<T> gamma(p.d, p.k);
    const std::span<const T> logits = t.logits.sample(s);
    for (std::size_t j = 0; j < p.d; ++j) {
      std::span<const T> noise;
      if (!t.noise.empty()) noise = std::span<const T>(t.noise).subspan(s * dk + j * p.k, p.k);
      const auto row = normalize_row(logits.subspan(j * p.k, p.k), noise, p.normalizer, p.tau);
      std::copy(row.begin(), row.end(), gamma.row(j).begin());
    }
    t.gammas.push_back(std::move(gamma));
  }
  return t;
}

template <typename T>
GateGrads<T> gate_backward(const SparsityPredictor<T>& p, const GateTrace<T>& trace, const Shape& input_shape,
                           const std::vector<SparsityWeights<T>>& grad_gammas) {
  const std::size_t n = input_shape.n;
  if (grad_gammas.size() != n || trace.gammas.size() != n) {
    throw DimensionError("gate_backward: expected " + std::to_string(n) + " weight gradients");
  }
  Tensor<T> grad_logits({n, p.d * p.k, 1, 1});
  for (std::size_t s = 0; s < n; ++s) {
    const auto& gamma = trace.gammas[s];
    const auto& gg = grad_gammas[s];
    if (gg.d != p.d || gg.k != p.k) throw DimensionError("gate_backward: weight gradient has wrong shape");
    auto out = grad_logits.sample(s);
    for (std::size_t j = 0; j < p.d; ++j) {
      std::vector<T> g(p.k, T(0));
      switch (p.normalizer) {
        case Normalizer::softmax:
          g = softmax_backward(gamma.row(j), gg.row(j), p.tau);
          break;
        case Normalizer::gumbel_softmax:
          if (!trace.noise.empty()) g = softmax_backward(gamma.row(j), gg.row(j), p.tau);
          break;
        case Normalizer::sigmoid:
          for (std::size_t i = 0; i < p.k; ++i) g[i] = gg(j, i) * gamma(j, i) * (T(1) - gamma(j, i));
          break;
        case Normalizer::hardmax:
          break;
      }
      std::copy(g.begin(), g.end(), out.begin() + static_cast<std::ptrdiff_t>(j * p.k));
    }
  }
  const Tensor<T> hidden = relu(trace.hidden_pre);
  auto g2 = dense_backward(hidden, p.fc2, grad_logits);
  const Tensor<T> grad_hidden_pre = relu_backward(trace.hidden_pre, g2.grad_x);
  auto g1 = dense_backward(trace.pooled, p.fc1, grad_hidden_pre);
  GateGrads<T> r;
  r.grad_predictor = p;
  r.grad_predictor.fc1 = std::move(g1.grad_layer);
  r.grad_predictor.fc2 = std::move(g2.grad_layer);
  r.grad_input = global_avg_pool_backward(input_shape, g1.grad_x);
  return r;
}

template <typename T>
std::vector<SparsityWeights<T>> predict_weights(const Tensor<T>& x, const SparsityPredictor<T>& p, GateContext ctx) {
  return gate_forward(p, x, ctx).gammas;
}

template <typename T>
std::vector<std::size_t> hard_select_index(const Tensor<T>& x, const SparsityPredictor<T>& p) {
  if (p.d != 1) {
    throw ConfigError("hard selection is defined on whole sparsity groups (d == 1), got d=" + std::to_string(p.d));
  }
  const auto trace = gate_forward(p, x, {});
  std::vector<std::size_t> idx(x.n());
  for (std::size_t s = 0; s < x.n(); ++s) idx[s] = argmax_lowest<T>(trace.logits.sample(s));
  return idx;
}

template <typename T>
ConvKernel<T> merge_kernels(const GroupedKernelBank<T>& bank, const SparsityWeights<T>& gamma, bool use_sqrt) {
  check_gamma(bank, gamma);
  SparsityWeights<T> w = gamma;
  if (use_sqrt) {
    for (auto& v : w.values) v = std::sqrt(std::max(v, T(0)));
  }
  ConvKernel<T> merged(bank.merged_c_out(), bank.merged_c_in(), bank.kh(), bank.kw());
  merged.bias = bank.bias;
  T* dst = merged.weights.data().data();
  const T* src = bank.weights.data().data();
  for_each_unit(bank, [&](std::size_t m, std::size_t s, std::size_t unit, std::size_t j, std::size_t i) {
    const T wt = w(j, i);
    for (std::size_t e = 0; e < unit; ++e) dst[m + e] += wt * src[s + e];
  });
  return merged;
}

template <typename T>
SparsityWeights<T> merge_backward(const GroupedKernelBank<T>& bank, const SparsityWeights<T>& gamma, bool use_sqrt,
                                  const ConvKernel<T>& grad_merged, GroupedKernelBank<T>& grad_bank) {
  check_gamma(bank, gamma);
  if (grad_merged.weights.shape() != Shape{bank.merged_c_out(), bank.merged_c_in(), bank.kh(), bank.kw()} ||
      grad_bank.weights.shape() != bank.weights.shape()) {
    throw DimensionError("merge_backward: gradient shapes do not match bank " + bank.weights.shape().str());
  }
  SparsityWeights<T> w = gamma;
  if (use_sqrt) {
    for (auto& v : w.values) v = std::sqrt(std::max(v, T(0)));
  }
  SparsityWeights<T> grad_w(bank.d, bank.k);
  const T* gm = grad_merged.weights.data().data();
  const T* src = bank.weights.data().data();
  T* gb = grad_bank.weights.data().data();
  for_each_unit(bank, [&](std::size_t m, std::size_t s, std::size_t unit, std::size_t j, std::size_t i) {
    const T wt = w(j, i);
    T dot = T(0);
    for (std::size_t e = 0; e < unit; ++e) {
      gb[s + e] += wt * gm[m + e];
      dot += gm[m + e] * src[s + e];
    }
    grad_w(j, i) += dot;
  });
  for (std::size_t o = 0; o < grad_bank.bias.size(); ++o) grad_bank.bias[o] += grad_merged.bias[o];
  if (!use_sqrt) return grad_w;
  for (std::size_t e = 0; e < grad_w.values.size(); ++e) {
    const T g = std::max(gamma.values[e], static_cast<T>(kSqrtFloor));
    grad_w.values[e] /= T(2) * std::sqrt(g);
  }
  return grad_w;
}

template <typename T>
Tensor<T> sparse_conv_forward(const Tensor<T>& x, const Tensor<T>& gate_input, const GroupedKernelBank<T>& bank,
                              const SparsityPredictor<T>& predictor, bool use_sqrt, GateContext ctx) {
  if (x.c() != bank.merged_c_in()) {
    throw DimensionError("sparse_conv_forward: input " + x.shape().str() + " for bank " + bank.weights.shape().str());
  }
  if (gate_input.n() != x.n()) throw DimensionError("sparse_conv_forward: gate input batch differs from x");
  if (predictor.d != bank.d || predictor.k != bank.k) {
    throw DimensionError("predictor emits " + std::to_string(predictor.d) + "x" + std::to_string(predictor.k) +
                         " weights, bank needs " + std::to_string(bank.d) + "x" + std::to_string(bank.k));
  }
  const auto trace = gate_forward(predictor, gate_input, ctx);
  Tensor<T> out({x.n(), bank.merged_c_out(), x.h(), x.w()});
  for (std::size_t s = 0; s < x.n(); ++s) {
    const ConvKernel<T> merged = merge_kernels(bank, trace.gammas[s], use_sqrt);
    detail::conv_sample_forward<T>(x.sample(s), x.h(), x.w(), merged, Padding::same, out.sample(s));
  }
  return out;
}

template <typename T>
Tensor<T> sparse_conv_forward(const Tensor<T>& x, const GroupedKernelBank<T>& bank,
                              const SparsityPredictor<T>& predictor, bool use_sqrt, GateContext ctx) {
  return sparse_conv_forward(x, x, bank, predictor, use_sqrt, ctx);
}

template <typename T>
SparseConvGrads<T> sparse_conv_backward(const Tensor<T>& x, const GroupedKernelBank<T>& bank,
                                        const SparsityPredictor<T>& predictor, bool use_sqrt,
                                        const Tensor<T>& grad_out, GateContext ctx) {
  if (x.c() != bank.merged_c_in()) {
    throw DimensionError("sparse_conv_backward: input " + x.shape().str() + " for bank " + bank.weights.shape().str());
  }
  if (grad_out.shape() != Shape{x.n(), bank.merged_c_out(), x.h(), x.w()}) {
    throw DimensionError("sparse_conv_backward: grad_out " + grad_out.shape().str());
  }
  const auto trace = gate_forward(predictor, x, ctx);
  SparseConvGrads<T> r;
  r.grad_x = Tensor<T>(x.shape());
  r.grad_bank = bank;
  r.grad_bank.zero();
  std::vector<SparsityWeights<T>> grad_gammas;
  grad_gammas.reserve(x.n());
  for (std::size_t s = 0; s < x.n(); ++s) {
    const ConvKernel<T> merged = merge_kernels(bank, trace.gammas[s], use_sqrt);
    ConvKernel<T> grad_merged(merged.c_out(), merged.c_in(), merged.kh(), merged.kw());
    detail::conv_sample_backward<T>(x.sample(s), x.h(), x.w(), merged, Padding::same, grad_out.sample(s),
                                    r.grad_x.sample(s), grad_merged);
    grad_gammas.push_back(merge_backward(bank, trace.gammas[s], use_sqrt, grad_merged, r.grad_bank));
  }
  auto gate = gate_backward(predictor, trace, x.shape(), grad_gammas);
  r.grad_predictor = std::move(gate.grad_predictor);
  for (std::size_t e = 0; e < r.grad_x.size(); ++e) r.grad_x[e] += gate.grad_input[e];
  return r;
}

namespace {

template <typename T>
void check_two_layer(const GroupedKernelBank<T>& bank1, const GroupedKernelBank<T>& bank2) {
  if (bank1.d != 1 || bank2.d != 1) {
    throw ConfigError("the explicit branch sum is defined on whole sparsity groups (d == 1)");
  }
  if (bank1.axis != GroupAxis::output_grouped || bank2.axis != GroupAxis::input_grouped) {
    throw ConfigError("two-layer path needs an output-grouped first bank and an input-grouped second bank");
  }
  if (bank1.k != bank2.k || bank1.c != bank2.c) {
    throw DimensionError("two-layer banks disagree on group count or width");
  }
}

template <typename T>
void check_beta(std::span<const T> beta, std::size_t k) {
  if (beta.size() != k) {
    throw DimensionError("beta has " + std::to_string(beta.size()) + " entries, banks have " + std::to_string(k) +
                         " groups");
  }
  T sum = T(0);
  for (T b : beta) {
    if (b < T(0)) throw ParameterError("beta entries must be non-negative");
    sum += b;
  }
  if (std::abs(static_cast<double>(sum) - 1.0) > 1e-6) throw ParameterError("beta must sum to 1");
}

template <typename T>
Tensor<T> activate(Tensor<T> h, Activation f) {
  return f == Activation::relu ? relu(h) : h;
}

}  // namespace

template <typename T>
Tensor<T> exact_two_layer_forward(const Tensor<T>& x, const GroupedKernelBank<T>& bank1,
                                  const GroupedKernelBank<T>& bank2, std::span<const T> beta, Activation f) {
  check_two_layer(bank1, bank2);
  check_beta(beta, bank1.k);
  Tensor<T> y({x.n(), bank2.merged_c_out(), x.h(), x.w()});
  for (std::size_t i = 0; i < bank1.k; ++i) {
    const Tensor<T> a = activate(conv2d_forward(x, bank1.group_kernel(i)), f);
    ConvKernel<T> second = bank2.group_kernel(i);
    std::fill(second.bias.begin(), second.bias.end(), T(0));
    const Tensor<T> branch = conv2d_forward(a, second);
    for (std::size_t e = 0; e < y.size(); ++e) y[e] += beta[i] * branch[e];
  }
  for (std::size_t s = 0; s < y.n(); ++s) {
    for (std::size_t co = 0; co < y.c(); ++co) {
      T* p = &y(s, co, 0, 0);
      for (std::size_t e = 0; e < y.h() * y.w(); ++e) p[e] += bank2.bias[co];
    }
  }
  return y;
}

template <typename T>
Tensor<T> merged_two_layer_forward(const Tensor<T>& x, const GroupedKernelBank<T>& bank1,
                                   const GroupedKernelBank<T>& bank2, std::span<const T> beta1,
                                   std::span<const T> beta2, Activation f) {
  check_two_layer(bank1, bank2);
  check_beta(beta1, bank1.k);
  check_beta(beta2, bank2.k);
  SparsityWeights<T> g1(1, bank1.k);
  SparsityWeights<T> g2(1, bank2.k);
  std::copy(beta1.begin(), beta1.end(), g1.values.begin());
  std::copy(beta2.begin(), beta2.end(), g2.values.begin());
  const Tensor<T> a = activate(conv2d_forward(x, merge_kernels(bank1, g1, true)), f);
  return conv2d_forward(a, merge_kernels(bank2, g2, true));
}

template <typename T>
SparsityWeights<T> gumbel_weights(std::span<const T> logits, T tau, Pcg32& rng, bool training) {
  if (!(tau > T(0))) throw ParameterError("gumbel_weights: temperature must be positive");
  std::vector<T> noise;
  if (training) {
    noise.resize(logits.size());
    for (auto& g : noise) g = gumbel_draw<T>(rng);
  }
  const auto row = normalize_row<T>(logits, noise, Normalizer::gumbel_softmax, tau);
  SparsityWeights<T> w(1, logits.size());
  std::copy(row.begin(), row.end(), w.values.begin());
  return w;
}

template <typename T>
double selection_entropy(const SparsityWeights<T>& gamma) {
  if (gamma.d == 0) return 0.0;
  double total = 0.0;
  for (std::size_t j = 0; j < gamma.d; ++j) {
    for (T v : gamma.row(j)) {
      if (v > T(0)) total -= static_cast<double>(v) * std::log(static_cast<double>(v));
    }
  }
  return total / static_cast<double>(gamma.d);
}

#define NSR_INSTANTIATE(T)                                                                                         \
  template struct SparsityWeights<T>;                                                                              \
  template struct GroupedKernelBank<T>;                                                                            \
  template struct SparsityPredictor<T>;                                                                            \
  template std::size_t argmax_lowest<T>(std::span<const T>);                                                       \
  template GateTrace<T> gate_forward<T>(const SparsityPredictor<T>&, const Tensor<T>&, GateContext);               \
  template GateGrads<T> gate_backward<T>(const SparsityPredictor<T>&, const GateTrace<T>&, const Shape&,           \
                                         const std::vector<SparsityWeights<T>>&);                                  \
  template std::vector<SparsityWeights<T>> predict_weights<T>(const Tensor<T>&, const SparsityPredictor<T>&,       \
                                                              GateContext);                                        \
  template std::vector<std::size_t> hard_select_index<T>(const Tensor<T>&, const SparsityPredictor<T>&);          \
  template ConvKernel<T> merge_kernels<T>(const GroupedKernelBank<T>&, const SparsityWeights<T>&, bool);           \
  template SparsityWeights<T> merge_backward<T>(const GroupedKernelBank<T>&, const SparsityWeights<T>&, bool,      \
                                                const ConvKernel<T>&, GroupedKernelBank<T>&);                      \
  template Tensor<T> sparse_conv_forward<T>(const Tensor<T>&, const GroupedKernelBank<T>&,                         \
                                            const SparsityPredictor<T>&, bool, GateContext);                       \
  template Tensor<T> sparse_conv_forward<T>(const Tensor<T>&, const Tensor<T>&, const GroupedKernelBank<T>&,       \
                                            const SparsityPredictor<T>&, bool, GateContext);                       \
  template SparseConvGrads<T> sparse_conv_backward<T>(const Tensor<T>&, const GroupedKernelBank<T>&,               \
                                                      const SparsityPredictor<T>&, bool, const Tensor<T>&,         \
                                                      GateContext);                                                \
  template Tensor<T> exact_two_layer_forward<T>(const Tensor<T>&, const GroupedKernelBank<T>&,                     \
                                                const GroupedKernelBank<T>&, std::span<const T>, Activation);      \
  template Tensor<T> merged_two_layer_forward<T>(const Tensor<T>&, const GroupedKernelBank<T>&,                    \
                                                 const GroupedKernelBank<T>&, std::span<const T>,                  \
                                                 std::span<const T>, Activation);                                  \
  template SparsityWeights<T> gumbel_weights<T>(std::span<const T>, T, Pcg32&, bool);                              \
  template double selection_entropy<T>(const SparsityWeights<T>&);

NSR_INSTANTIATE(float)
NSR_INSTANTIATE(double)
#undef NSR_INSTANTIATE

}  // namespace nsr
