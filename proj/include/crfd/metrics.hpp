#pragma once

#include "crfd/image.hpp"

namespace crfd {

/// Mean squared per-channel difference on the 0-255 scale.
double mse_8bit(const Image8& a, const Image8& b);

/// 10*log10(255^2 / mse), capped at 99 dB for mse < 1e-10.
double psnr(double mse);

/// Mean SSIM over valid 11x11 Gaussian windows (sigma 1.5, K1=0.01,
/// K2=0.03), computed per channel on the 0-255 scale and averaged.
double ssim(const Image8& a, const Image8& b);

}  // namespace crfd
