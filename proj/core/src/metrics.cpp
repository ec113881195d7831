#include "nsr/metrics.hpp"

#include <cmath>

namespace nsr {
namespace {

constexpr std::size_t kWin = 11;
constexpr double kSigma = 1.5;
constexpr double kC1 = (0.01 * 255.0) * (0.01 * 255.0);
constexpr double kC2 = (0.03 * 255.0) * (0.03 * 255.0);

template <typename T>
void check_same(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(what) + ": shape " + a.shape().str() + " vs " + b.shape().str());
  }
}

// Valid-region separable filter of an h x w plane.
std::vector<double> filter_valid(const std::vector<double>& src, std::size_t h, std::size_t w,
                                 const std::vector<double>& g) {
  const std::size_t wo = w - kWin + 1;
  const std::size_t ho = h - kWin + 1;
  std::vector<double> rows(h * wo);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < wo; ++x) {
      double s = 0.0;
      for (std::size_t t = 0; t < kWin; ++t) s += g[t] * src[y * w + x + t];
      rows[y * wo + x] = s;
    }
  }
  std::vector<double> out(ho * wo);
  for (std::size_t y = 0; y < ho; ++y) {
    for (std::size_t x = 0; x < wo; ++x) {
      double s = 0.0;
      for (std::size_t t = 0; t < kWin; ++t) s += g[t] * rows[(y + t) * wo + x];
      out[y * wo + x] = s;
    }
  }
  return out;
}

Tensor<double> gray_tensor(const Image& img, const char* what) {
  if (img.channels != 1) throw DimensionError(std::string(what) + ": expects a grayscale image");
  Tensor<double> t({1, 1, img.height, img.width});
  for (std::size_t i = 0; i < img.samples.size(); ++i) t[i] = img.samples[i];
  return t;
}

}  // namespace

std::vector<double> ssim_window_1d() {
  std::vector<double> g(kWin);
  double s = 0.0;
  for (std::size_t i = 0; i < kWin; ++i) {
    const double d = static_cast<double>(i) - static_cast<double>(kWin / 2);
    g[i] = std::exp(-d * d / (2.0 * kSigma * kSigma));
    s += g[i];
  }
  for (auto& v : g) v /= s;
  return g;
}

template <typename T>
double psnr(const Tensor<T>& a, const Tensor<T>& b, double peak) {
  check_same(a, b, "psnr");
  if (a.size() == 0) throw DimensionError("psnr: empty input");
  double se = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    se += d * d;
  }
  const double mse = se / static_cast<double>(a.size());
  if (mse == 0.0) return kPsnrIdentical;
  return 10.0 * std::log10(peak * peak / mse);
}

double psnr(const Image& a, const Image& b, double peak) {
  if (a.width != b.width || a.height != b.height || a.channels != b.channels) {
    throw DimensionError("psnr: image dimensions differ");
  }
  return psnr(to_tensor(a), to_tensor(b), peak);
}

template <typename T>
double ssim(const Tensor<T>& a, const Tensor<T>& b) {
  check_same(a, b, "ssim");
  if (a.n() != 1 || a.c() != 1) throw DimensionError("ssim: expects a single grayscale plane, got " + a.shape().str());
  if (a.h() < kWin || a.w() < kWin) throw DimensionError("ssim: image smaller than the 11x11 window");
  const std::size_t h = a.h();
  const std::size_t w = a.w();
  std::vector<double> va(h * w), vb(h * w), aa(h * w), bb(h * w), ab(h * w);
  for (std::size_t i = 0; i < h * w; ++i) {
    va[i] = a[i];
    vb[i] = b[i];
    aa[i] = va[i] * va[i];
    bb[i] = vb[i] * vb[i];
    ab[i] = va[i] * vb[i];
  }
  const auto g = ssim_window_1d();
  const auto mu_a = filter_valid(va, h, w, g);
  const auto mu_b = filter_valid(vb, h, w, g);
  const auto e_aa = filter_valid(aa, h, w, g);
  const auto e_bb = filter_valid(bb, h, w, g);
  const auto e_ab = filter_valid(ab, h, w, g);
  double total = 0.0;
  for (std::size_t i = 0; i < mu_a.size(); ++i) {
    const double ma = mu_a[i];
    const double mb = mu_b[i];
    const double var_a = e_aa[i] - ma * ma;
    const double var_b = e_bb[i] - mb * mb;
    const double cov = e_ab[i] - ma * mb;
    total += ((2.0 * ma * mb + kC1) * (2.0 * cov + kC2)) / ((ma * ma + mb * mb + kC1) * (var_a + var_b + kC2));
  }
  return total / static_cast<double>(mu_a.size());
}

double ssim(const Image& a, const Image& b) { return ssim(gray_tensor(a, "ssim"), gray_tensor(b, "ssim")); }

template double psnr<float>(const Tensor<float>&, const Tensor<float>&, double);
template double psnr<double>(const Tensor<double>&, const Tensor<double>&, double);
template double ssim<float>(const Tensor<float>&, const Tensor<float>&);
template double ssim<double>(const Tensor<double>&, const Tensor<double>&);

}  // namespace nsr
