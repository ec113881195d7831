#include "nsr/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace nsr {
namespace {

using idx = std::ptrdiff_t;

struct ConvGeometry {
  idx h, w;    // input extent
  idx ho, wo;  // output extent
  idx kh, kw;
  idx ph, pw;  // leading zero padding
};

template <typename T>
ConvGeometry geometry(std::size_t h, std::size_t w, const ConvKernel<T>& k, Padding pad) {
  ConvGeometry g{};
  g.h = static_cast<idx>(h);
  g.w = static_cast<idx>(w);
  g.kh = static_cast<idx>(k.kh());
  g.kw = static_cast<idx>(k.kw());
  if (pad == Padding::same) {
    g.ph = (g.kh - 1) / 2;
    g.pw = (g.kw - 1) / 2;
    g.ho = g.h;
    g.wo = g.w;
  } else {
    if (g.h < g.kh || g.w < g.kw) {
      throw DimensionError("valid convolution needs input of at least " + std::to_string(g.kh) +
                           "x" + std::to_string(g.kw) + ", got " + std::to_string(h) + "x" +
                           std::to_string(w));
    }
    g.ph = 0;
    g.pw = 0;
    g.ho = g.h - g.kh + 1;
    g.wo = g.w - g.kw + 1;
  }
  return g;
}

template <typename T>
void check_conv_input(const Shape& x, const ConvKernel<T>& k) {
  if (x.c != k.c_in()) {
    throw DimensionError("conv2d: input " + x.str() + " does not match kernel " +
                         k.weights.shape().str());
  }
}

}  // namespace

namespace detail {
namespace {

// Zero-padded copy of every input plane, (c, ho + kh - 1, wo + kw - 1).
// Output pixel (y, x) of a tap (ky, kx) then reads flat index
// y * wp + x + ky * wp + kx, so each tap is one contiguous axpy over a grid
// of ho rows of width wp; the last kw - 1 columns of each row are scratch.
template <typename T>
void pad_planes(const T* in, std::size_t c, const ConvGeometry& g, std::vector<T>& out) {
  const idx hp = g.ho + g.kh - 1;
  const idx wp = g.wo + g.kw - 1;
  out.assign(c * static_cast<std::size_t>(hp * wp), T(0));
  for (std::size_t ch = 0; ch < c; ++ch) {
    const T* src = in + ch * static_cast<std::size_t>(g.h * g.w);
    T* dst = out.data() + ch * static_cast<std::size_t>(hp * wp);
    for (idx y = 0; y < g.h; ++y) std::copy(src + y * g.w, src + (y + 1) * g.w, dst + (y + g.ph) * wp + g.pw);
  }
}

template <typename T>
void axpy(T a, const T* __restrict x, T* __restrict y, idx n) {
  for (idx i = 0; i < n; ++i) y[i] += a * x[i];
}

// Fixed 32-lane accumulation keeps the sum order independent of the compiler.
template <typename T>
T dot(const T* __restrict a, const T* __restrict b, idx n) {
  constexpr idx kLanes = 32;
  T part[kLanes] = {};
  idx i = 0;
  for (; i + kLanes <= n; i += kLanes) {
    for (idx l = 0; l < kLanes; ++l) part[l] += a[i + l] * b[i + l];
  }
  T tail = T(0);
  for (; i < n; ++i) tail += a[i] * b[i];
  for (idx l = 1; l < kLanes; ++l) part[0] += part[l];
  return part[0] + tail;
}

// All nine taps of a 3x3 kernel in one sweep over the grid.
template <typename T>
void conv3x3_rows(const T* w, const T* __restrict s, idx wp, T* __restrict y, idx n) {
  const T w0 = w[0], w1 = w[1], w2 = w[2], w3 = w[3], w4 = w[4], w5 = w[5], w6 = w[6], w7 = w[7], w8 = w[8];
  const T* __restrict s1 = s + wp;
  const T* __restrict s2 = s + 2 * wp;
  for (idx i = 0; i < n; ++i) {
    y[i] += w0 * s[i] + w1 * s[i + 1] + w2 * s[i + 2] + w3 * s1[i] + w4 * s1[i + 1] + w5 * s1[i + 2] +
            w6 * s2[i] + w7 * s2[i + 1] + w8 * s2[i + 2];
  }
}

// Adjoint of conv3x3_rows with respect to its input: y[q] += sum_t w_t g[q - off_t].
// `g` must be readable from g - 2 * wp - 2.
template <typename T>
void conv3x3_rows_adjoint(const T* w, const T* __restrict g, idx wp, T* __restrict y, idx n) {
  const T w0 = w[0], w1 = w[1], w2 = w[2], w3 = w[3], w4 = w[4], w5 = w[5], w6 = w[6], w7 = w[7], w8 = w[8];
  const T* __restrict g1 = g - wp;
  const T* __restrict g2 = g - 2 * wp;
  for (idx i = 0; i < n; ++i) {
    y[i] += w0 * g[i] + w1 * g[i - 1] + w2 * g[i - 2] + w3 * g1[i] + w4 * g1[i - 1] + w5 * g1[i - 2] +
            w6 * g2[i] + w7 * g2[i - 1] + w8 * g2[i - 2];
  }
}

}  // namespace

template <typename T>
void conv_sample_forward(std::span<const T> in, std::size_t h, std::size_t w, const ConvKernel<T>& k,
                         Padding pad, std::span<T> out) {
  const ConvGeometry g = geometry(h, w, k, pad);
  const std::size_t c_in = k.c_in();
  const std::size_t c_out = k.c_out();
  const std::size_t out_plane = static_cast<std::size_t>(g.ho * g.wo);
  if (in.size() != c_in * h * w || out.size() != c_out * out_plane) {
    throw DimensionError("conv_sample_forward: buffer sizes do not match kernel " +
                         k.weights.shape().str());
  }
  thread_local std::vector<T> padded;
  thread_local std::vector<T> grid;
  pad_planes(in.data(), c_in, g, padded);
  const idx wp = g.wo + g.kw - 1;
  const std::size_t pplane = static_cast<std::size_t>((g.ho + g.kh - 1) * wp);
  const idx span_len = (g.ho - 1) * wp + g.wo;
  grid.resize(static_cast<std::size_t>(g.ho * wp));
  const T* wts = k.weights.data().data();

  const bool k3 = g.kh == 3 && g.kw == 3;
  for (std::size_t co = 0; co < c_out; ++co) {
    std::fill(grid.begin(), grid.end(), k.bias[co]);
    for (std::size_t ci = 0; ci < c_in; ++ci) {
      const T* src = padded.data() + ci * pplane;
      const T* tap = wts + (co * c_in + ci) * static_cast<std::size_t>(g.kh * g.kw);
      if (k3) {
        conv3x3_rows(tap, src, wp, grid.data(), span_len);
        continue;
      }
      for (idx ky = 0; ky < g.kh; ++ky) {
        for (idx kx = 0; kx < g.kw; ++kx) axpy(tap[ky * g.kw + kx], src + ky * wp + kx, grid.data(), span_len);
      }
    }
    T* dst = out.data() + co * out_plane;
    for (idx y = 0; y < g.ho; ++y) std::copy_n(grid.data() + y * wp, g.wo, dst + y * g.wo);
  }
}

template <typename T>
void conv_sample_backward(std::span<const T> in, std::size_t h, std::size_t w, const ConvKernel<T>& k,
                          Padding pad, std::span<const T> grad_out, std::span<T> grad_in,
                          ConvKernel<T>& grad_k) {
  const ConvGeometry g = geometry(h, w, k, pad);
  const std::size_t c_in = k.c_in();
  const std::size_t c_out = k.c_out();
  const std::size_t out_plane = static_cast<std::size_t>(g.ho * g.wo);
  if (in.size() != c_in * h * w || grad_out.size() != c_out * out_plane ||
      (!grad_in.empty() && grad_in.size() != in.size())) {
    throw DimensionError("conv_sample_backward: buffer sizes do not match kernel " +
                         k.weights.shape().str());
  }
  if (grad_k.weights.shape() != k.weights.shape() || grad_k.bias.size() != c_out) {
    throw DimensionError("conv_sample_backward: gradient kernel " + grad_k.weights.shape().str() +
                         " does not match " + k.weights.shape().str());
  }
  thread_local std::vector<T> padded;
  thread_local std::vector<T> grad_padded;
  thread_local std::vector<T> grid;
  pad_planes(in.data(), c_in, g, padded);
  const idx wp = g.wo + g.kw - 1;
  const idx hp = g.ho + g.kh - 1;
  const std::size_t pplane = static_cast<std::size_t>(hp * wp);
  const idx span_len = (g.ho - 1) * wp + g.wo;
  const bool want_input = !grad_in.empty();
  if (want_input) grad_padded.assign(c_in * pplane, T(0));
  // Scratch columns stay zero so they add nothing to either gradient. The
  // zero margins let the 3x3 adjoint read a full tap window anywhere.
  const idx margin = (g.kh - 1) * wp + g.kw - 1;
  grid.assign(static_cast<std::size_t>(margin + hp * wp), T(0));
  T* gd = grid.data() + margin;
  const bool k3 = g.kh == 3 && g.kw == 3;
  const T* wts = k.weights.data().data();
  T* gw = grad_k.weights.data().data();

  for (std::size_t co = 0; co < c_out; ++co) {
    const T* g_plane = grad_out.data() + co * out_plane;
    T bsum = T(0);
    for (std::size_t i = 0; i < out_plane; ++i) bsum += g_plane[i];
    grad_k.bias[co] += bsum;
    for (idx y = 0; y < g.ho; ++y) std::copy_n(g_plane + y * g.wo, g.wo, gd + y * wp);

    for (std::size_t ci = 0; ci < c_in; ++ci) {
      const T* src = padded.data() + ci * pplane;
      T* gsrc = want_input ? grad_padded.data() + ci * pplane : nullptr;
      const std::size_t tap_base = (co * c_in + ci) * static_cast<std::size_t>(g.kh * g.kw);
      if (k3) {
        for (idx t = 0; t < 9; ++t) gw[tap_base + t] += dot(gd, src + (t / 3) * wp + t % 3, span_len);
        if (gsrc != nullptr) conv3x3_rows_adjoint(wts + tap_base, gd, wp, gsrc, hp * wp);
        continue;
      }
      for (idx ky = 0; ky < g.kh; ++ky) {
        for (idx kx = 0; kx < g.kw; ++kx) {
          const idx off = ky * wp + kx;
          const std::size_t t = tap_base + static_cast<std::size_t>(ky * g.kw + kx);
          gw[t] += dot(gd, src + off, span_len);
          if (gsrc != nullptr) axpy(wts[t], gd, gsrc + off, span_len);
        }
      }
    }
  }
  if (!want_input) return;
  for (std::size_t ci = 0; ci < c_in; ++ci) {
    const T* src = grad_padded.data() + ci * pplane;
    T* dst = grad_in.data() + ci * static_cast<std::size_t>(g.h * g.w);
    for (idx y = 0; y < g.h; ++y) {
      const T* row = src + (y + g.ph) * wp + g.pw;
      for (idx x = 0; x < g.w; ++x) dst[y * g.w + x] += row[x];
    }
  }
}

}  // namespace detail

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const ConvKernel<T>& k, Padding pad, ConvAlgo algo) {
  check_conv_input(x.shape(), k);
  if (algo == ConvAlgo::reference) return conv2d_reference(x, k, pad);
  const ConvGeometry g = geometry(x.h(), x.w(), k, pad);
  Tensor<T> out({x.n(), k.c_out(), static_cast<std::size_t>(g.ho), static_cast<std::size_t>(g.wo)});
  for (std::size_t n = 0; n < x.n(); ++n) {
    detail::conv_sample_forward<T>(x.sample(n), x.h(), x.w(), k, pad, out.sample(n));
  }
  return out;
}

template <typename T>
Tensor<T> conv2d_reference(const Tensor<T>& x, const ConvKernel<T>& k, Padding pad) {
  check_conv_input(x.shape(), k);
  const ConvGeometry g = geometry(x.h(), x.w(), k, pad);
  Tensor<T> out({x.n(), k.c_out(), static_cast<std::size_t>(g.ho), static_cast<std::size_t>(g.wo)});
  for (std::size_t n = 0; n < x.n(); ++n) {
    for (std::size_t co = 0; co < k.c_out(); ++co) {
      for (idx y = 0; y < g.ho; ++y) {
        for (idx xo = 0; xo < g.wo; ++xo) {
          T acc = k.bias[co];
          for (std::size_t ci = 0; ci < k.c_in(); ++ci) {
            for (idx ky = 0; ky < g.kh; ++ky) {
              for (idx kx = 0; kx < g.kw; ++kx) {
                const idx iy = y + ky - g.ph;
                const idx ix = xo + kx - g.pw;
                if (iy < 0 || iy >= g.h || ix < 0 || ix >= g.w) continue;
                acc += k.weights(co, ci, ky, kx) * x(n, ci, iy, ix);
              }
            }
          }
          out(n, co, y, xo) = acc;
        }
      }
    }
  }
  return out;
}

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& x, const ConvKernel<T>& k, const Tensor<T>& grad_out,
                             Padding pad) {
  check_conv_input(x.shape(), k);
  const ConvGeometry g = geometry(x.h(), x.w(), k, pad);
  const Shape expected{x.n(), k.c_out(), static_cast<std::size_t>(g.ho), static_cast<std::size_t>(g.wo)};
  if (grad_out.shape() != expected) {
    throw DimensionError("conv2d_backward: grad_out " + grad_out.shape().str() +
                         " but forward output is " + expected.str());
  }
  ConvGrads<T> r{Tensor<T>(x.shape()), ConvKernel<T>(k.c_out(), k.c_in(), k.kh(), k.kw())};
  for (std::size_t n = 0; n < x.n(); ++n) {
    detail::conv_sample_backward<T>(x.sample(n), x.h(), x.w(), k, pad, grad_out.sample(n),
                                    r.grad_x.sample(n), r.grad_k);
  }
  return r;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> out = x;
  for (auto& v : out.data()) v = v > T(0) ? v : T(0);
  return out;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& x, const Tensor<T>& grad_out) {
  if (x.shape() != grad_out.shape()) {
    throw DimensionError("relu_backward: " + x.shape().str() + " vs " + grad_out.shape().str());
  }
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > T(0) ? grad_out[i] : T(0);
  return out;
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  if (x.h() * x.w() == 0) throw DimensionError("global_avg_pool: empty spatial extent " + x.shape().str());
  Tensor<T> out({x.n(), x.c(), 1, 1});
  const std::size_t plane = x.h() * x.w();
  for (std::size_t n = 0; n < x.n(); ++n) {
    for (std::size_t c = 0; c < x.c(); ++c) {
      const T* p = x.data().data() + x.index(n, c, 0, 0);
      T s = T(0);
      for (std::size_t i = 0; i < plane; ++i) s += p[i];
      out(n, c, 0, 0) = s / static_cast<T>(plane);
    }
  }
  return out;
}

template <typename T>
Tensor<T> global_avg_pool_backward(const Shape& input_shape, const Tensor<T>& grad_out) {
  if (input_shape.plane() == 0) throw DimensionError("global_avg_pool_backward: empty spatial extent");
  if (grad_out.shape() != Shape{input_shape.n, input_shape.c, 1, 1}) {
    throw DimensionError("global_avg_pool_backward: grad " + grad_out.shape().str() + " for input " +
                         input_shape.str());
  }
  Tensor<T> out(input_shape);
  const std::size_t plane = input_shape.plane();
  const T inv = T(1) / static_cast<T>(plane);
  for (std::size_t n = 0; n < input_shape.n; ++n) {
    for (std::size_t c = 0; c < input_shape.c; ++c) {
      const T v = grad_out(n, c, 0, 0) * inv;
      T* p = out.data().data() + out.index(n, c, 0, 0);
      std::fill(p, p + plane, v);
    }
  }
  return out;
}

template <typename T>
Tensor<T> dense_forward(const Tensor<T>& x, const DenseLayer<T>& layer) {
  if (x.c() * x.h() * x.w() != layer.in) {
    throw DimensionError("dense_forward: input " + x.shape().str() + " for layer with " +
                         std::to_string(layer.in) + " inputs");
  }
  Tensor<T> y({x.n(), layer.out, 1, 1});
  for (std::size_t n = 0; n < x.n(); ++n) {
    const auto xs = x.sample(n);
    for (std::size_t o = 0; o < layer.out; ++o) {
      T acc = layer.bias[o];
      for (std::size_t i = 0; i < layer.in; ++i) acc += layer.weight(o, i) * xs[i];
      y(n, o, 0, 0) = acc;
    }
  }
  return y;
}

template <typename T>
DenseGrads<T> dense_backward(const Tensor<T>& x, const DenseLayer<T>& layer, const Tensor<T>& grad_out) {
  if (x.c() * x.h() * x.w() != layer.in || grad_out.shape() != Shape{x.n(), layer.out, 1, 1}) {
    throw DimensionError("dense_backward: input " + x.shape().str() + ", grad " +
                         grad_out.shape().str() + " for layer " + std::to_string(layer.in) + "->" +
                         std::to_string(layer.out));
  }
  DenseGrads<T> r{Tensor<T>(x.shape()), DenseLayer<T>(layer.in, layer.out)};
  for (std::size_t n = 0; n < x.n(); ++n) {
    const auto xs = x.sample(n);
    auto gx = r.grad_x.sample(n);
    for (std::size_t o = 0; o < layer.out; ++o) {
      const T g = grad_out(n, o, 0, 0);
      r.grad_layer.bias[o] += g;
      for (std::size_t i = 0; i < layer.in; ++i) {
        r.grad_layer.weight(o, i) += g * xs[i];
        gx[i] += g * layer.weight(o, i);
      }
    }
  }
  return r;
}

template <typename T>
std::vector<T> softmax(std::span<const T> logits, T tau) {
  if (!(tau > T(0))) throw ParameterError("softmax: temperature must be positive");
  std::vector<T> out(logits.size());
  if (logits.empty()) return out;
  const T m = *std::max_element(logits.begin(), logits.end());
  T s = T(0);
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp((logits[i] - m) / tau);
    s += out[i];
  }
  for (auto& v : out) v /= s;
  return out;
}

template <typename T>
std::vector<T> softmax_backward(std::span<const T> probs, std::span<const T> grad_out, T tau) {
  if (!(tau > T(0))) throw ParameterError("softmax_backward: temperature must be positive");
  if (probs.size() != grad_out.size()) throw DimensionError("softmax_backward: length mismatch");
  T dot = T(0);
  for (std::size_t i = 0; i < probs.size(); ++i) dot += probs[i] * grad_out[i];
  std::vector<T> g(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) g[i] = probs[i] * (grad_out[i] - dot) / tau;
  return g;
}

template <typename T>
T sigmoid(T x) {
  // Split by sign so exp never overflows.
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  Tensor<T> out = x;
  for (auto& v : out.data()) v = sigmoid(v);
  return out;
}

template <typename T>
Tensor<T> sigmoid_backward(const Tensor<T>& y, const Tensor<T>& grad_out) {
  if (y.shape() != grad_out.shape()) {
    throw DimensionError("sigmoid_backward: " + y.shape().str() + " vs " + grad_out.shape().str());
  }
  Tensor<T> g(y.shape());
  for (std::size_t i = 0; i < y.size(); ++i) g[i] = grad_out[i] * y[i] * (T(1) - y[i]);
  return g;
}

#define NSR_INSTANTIATE(T)                                                                          \
  template Tensor<T> conv2d_forward<T>(const Tensor<T>&, const ConvKernel<T>&, Padding, ConvAlgo); \
  template Tensor<T> conv2d_reference<T>(const Tensor<T>&, const ConvKernel<T>&, Padding);         \
  template ConvGrads<T> conv2d_backward<T>(const Tensor<T>&, const ConvKernel<T>&, const Tensor<T>&, \
                                           Padding);                                               \
  template Tensor<T> relu<T>(const Tensor<T>&);                                                    \
  template Tensor<T> relu_backward<T>(const Tensor<T>&, const Tensor<T>&);                         \
  template Tensor<T> global_avg_pool<T>(const Tensor<T>&);                                         \
  template Tensor<T> global_avg_pool_backward<T>(const Shape&, const Tensor<T>&);                  \
  template Tensor<T> dense_forward<T>(const Tensor<T>&, const DenseLayer<T>&);                     \
  template DenseGrads<T> dense_backward<T>(const Tensor<T>&, const DenseLayer<T>&, const Tensor<T>&); \
  template std::vector<T> softmax<T>(std::span<const T>, T);                                       \
  template std::vector<T> softmax_backward<T>(std::span<const T>, std::span<const T>, T);          \
  template T sigmoid<T>(T);                                                                        \
  template Tensor<T> sigmoid<T>(const Tensor<T>&);                                                 \
  template Tensor<T> sigmoid_backward<T>(const Tensor<T>&, const Tensor<T>&);                      \
  template void detail::conv_sample_forward<T>(std::span<const T>, std::size_t, std::size_t,        \
                                               const ConvKernel<T>&, Padding, std::span<T>);       \
  template void detail::conv_sample_backward<T>(std::span<const T>, std::size_t, std::size_t,       \
                                                const ConvKernel<T>&, Padding, std::span<const T>, \
                                                std::span<T>, ConvKernel<T>&);

NSR_INSTANTIATE(float)
NSR_INSTANTIATE(double)
#undef NSR_INSTANTIATE

}  // namespace nsr
