#pragma once

// Per-channel gated convolution written out longhand:
//   s = mean over pixels of x, z = relu(W1 s + b1), g = 1 / (1 + exp(-(W2 z + b2)))
//   y[o] = g[o] * (K[o] * x) + bias[o]
// Nothing from the sparse module is used.

#include <cmath>
#include <vector>

#include "nsr/ops.hpp"

namespace oracle {

inline nsr::Tensor<double> gated_conv_reference(const nsr::Tensor<double>& x, const nsr::Tensor<double>& kernel,
                                                const std::vector<double>& bias, const std::vector<double>& w1,
                                                const std::vector<double>& b1, const std::vector<double>& w2,
                                                const std::vector<double>& b2) {
  const std::size_t n = x.n(), c_in = x.c(), h = x.h(), w = x.w();
  const std::size_t c_out = kernel.n(), hidden = b1.size();
  const std::size_t kh = kernel.h(), kw = kernel.w();
  nsr::Tensor<double> y({n, c_out, h, w});
  for (std::size_t s = 0; s < n; ++s) {
    std::vector<double> pooled(c_in, 0.0);
    for (std::size_t ci = 0; ci < c_in; ++ci) {
      for (std::size_t yy = 0; yy < h; ++yy) {
        for (std::size_t xx = 0; xx < w; ++xx) pooled[ci] += x(s, ci, yy, xx);
      }
      pooled[ci] /= static_cast<double>(h * w);
    }
    std::vector<double> z(hidden);
    for (std::size_t u = 0; u < hidden; ++u) {
      double a = b1[u];
      for (std::size_t ci = 0; ci < c_in; ++ci) a += w1[u * c_in + ci] * pooled[ci];
      z[u] = a > 0.0 ? a : 0.0;
    }
    for (std::size_t o = 0; o < c_out; ++o) {
      double a = b2[o];
      for (std::size_t u = 0; u < hidden; ++u) a += w2[o * hidden + u] * z[u];
      const double gate = 1.0 / (1.0 + std::exp(-a));
      for (std::size_t yy = 0; yy < h; ++yy) {
        for (std::size_t xx = 0; xx < w; ++xx) {
          double acc = 0.0;
          for (std::size_t ci = 0; ci < c_in; ++ci) {
            for (std::size_t ky = 0; ky < kh; ++ky) {
              for (std::size_t kx = 0; kx < kw; ++kx) {
                const long iy = static_cast<long>(yy + ky) - static_cast<long>(kh / 2);
                const long ix = static_cast<long>(xx + kx) - static_cast<long>(kw / 2);
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(w)) continue;
                acc += kernel(o, ci, ky, kx) * x(s, ci, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix));
              }
            }
          }
          y(s, o, yy, xx) = gate * acc + bias[o];
        }
      }
    }
  }
  return y;
}

}  // namespace oracle
