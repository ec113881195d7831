#pragma once

#include <limits>

#include "nsr/image.hpp"
#include "nsr/tensor.hpp"

namespace nsr {

/// Returned by psnr() when the two inputs are identical.
inline constexpr double kPsnrIdentical = std::numeric_limits<double>::infinity();

/// 10 log10(peak^2 / MSE), MSE accumulated in double. Inputs are on the
/// 0..peak scale and are not clipped.
template <typename T>
double psnr(const Tensor<T>& a, const Tensor<T>& b, double peak = 255.0);
double psnr(const Image& a, const Image& b, double peak = 255.0);

/// Mean SSIM over all fully contained 11x11 windows (Gaussian sigma 1.5,
/// K1 = 0.01, K2 = 0.03, L = 255). Single-channel inputs of at least 11x11.
template <typename T>
double ssim(const Tensor<T>& a, const Tensor<T>& b);
double ssim(const Image& a, const Image& b);

/// Normalised 11-tap Gaussian used by ssim().
std::vector<double> ssim_window_1d();

}  // namespace nsr
