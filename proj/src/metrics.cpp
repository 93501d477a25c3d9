#include "crfd/metrics.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

namespace crfd {

double mse_8bit(const Image8& a, const Image8& b) {
  if (a.width != b.width || a.height != b.height)
    throw std::invalid_argument("mse_8bit: image dimensions differ");
  double s = 0;
  for (size_t i = 0; i < a.rgb.size(); ++i) {
    double d = static_cast<double>(a.rgb[i]) - static_cast<double>(b.rgb[i]);
    s += d * d;
  }
  return s / static_cast<double>(a.rgb.size());
}

double psnr(double mse) {
  if (mse < 1e-10) return 99.0;
  return 10.0 * std::log10(255.0 * 255.0 / mse);
}

namespace {

// 11-tap Gaussian, sigma 1.5, normalized.
const std::vector<double>& ssim_window() {
  static const std::vector<double> w = [] {
    std::vector<double> v(11);
    double sum = 0;
    for (int i = 0; i < 11; ++i) {
      double x = i - 5;
      v[static_cast<size_t>(i)] = std::exp(-x * x / (2.0 * 1.5 * 1.5));
      sum += v[static_cast<size_t>(i)];
    }
    for (double& x : v) x /= sum;
    return v;
  }();
  return w;
}

// Separable weighted local sums over one channel plane.
std::vector<double> blur(const std::vector<double>& src, int w, int h) {
  const auto& win = ssim_window();
  std::vector<double> tmp(static_cast<size_t>(w) * h, 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 5; x < w - 5; ++x) {
      double s = 0;
      for (int k = -5; k <= 5; ++k) s += win[static_cast<size_t>(k + 5)] * src[static_cast<size_t>(y) * w + x + k];
      tmp[static_cast<size_t>(y) * w + x] = s;
    }
  std::vector<double> out(static_cast<size_t>(w) * h, 0.0);
  for (int y = 5; y < h - 5; ++y)
    for (int x = 5; x < w - 5; ++x) {
      double s = 0;
      for (int k = -5; k <= 5; ++k) s += win[static_cast<size_t>(k + 5)] * tmp[static_cast<size_t>(y + k) * w + x];
      out[static_cast<size_t>(y) * w + x] = s;
    }
  return out;
}

}  // namespace

double ssim(const Image8& a, const Image8& b) {
  if (a.width != b.width || a.height != b.height)
    throw std::invalid_argument("ssim: image dimensions differ");
  int w = a.width, h = a.height;
  if (w < 11 || h < 11) throw std::invalid_argument("ssim: image smaller than the 11x11 window");
  const double c1 = (0.01 * 255) * (0.01 * 255);
  const double c2 = (0.03 * 255) * (0.03 * 255);

  double total = 0;
  for (int ch = 0; ch < 3; ++ch) {
    std::vector<double> pa(static_cast<size_t>(w) * h), pb(static_cast<size_t>(w) * h);
    for (int i = 0; i < w * h; ++i) {
      pa[static_cast<size_t>(i)] = a.rgb[static_cast<size_t>(i) * 3 + ch];
      pb[static_cast<size_t>(i)] = b.rgb[static_cast<size_t>(i) * 3 + ch];
    }
    std::vector<double> aa(pa), bb(pb), ab(pa);
    for (int i = 0; i < w * h; ++i) {
      aa[static_cast<size_t>(i)] *= pa[static_cast<size_t>(i)];
      bb[static_cast<size_t>(i)] *= pb[static_cast<size_t>(i)];
      ab[static_cast<size_t>(i)] *= pb[static_cast<size_t>(i)];
    }
    auto mu_a = blur(pa, w, h);
    auto mu_b = blur(pb, w, h);
    auto s_aa = blur(aa, w, h);
    auto s_bb = blur(bb, w, h);
    auto s_ab = blur(ab, w, h);
    double sum = 0;
    std::int64_t count = 0;
    for (int y = 5; y < h - 5; ++y)
      for (int x = 5; x < w - 5; ++x) {
        size_t i = static_cast<size_t>(y) * w + x;
        double ma = mu_a[i], mb = mu_b[i];
        double va = s_aa[i] - ma * ma;
        double vb = s_bb[i] - mb * mb;
        double cov = s_ab[i] - ma * mb;
        double v = ((2 * ma * mb + c1) * (2 * cov + c2)) /
                   ((ma * ma + mb * mb + c1) * (va + vb + c2));
        sum += v;
        ++count;
      }
    total += sum / static_cast<double>(count);
  }
  return total / 3.0;
}

}  // namespace crfd
