#include "mia/metrics.hpp"

#include <cmath>

namespace mia::metrics {

real psnr(const Tensor& a, const Tensor& b) {
  require(a.same_shape(b), "psnr: shape mismatch");
  real mse = 0;
  for (long long i = 0; i < a.numel(); ++i) {
    const real d = a[i] - b[i];
    mse += d * d;
  }
  mse /= a.numel();
  if (mse <= 0) return 99.0;
  return std::min(99.0, 10.0 * std::log10(1.0 / mse));
}

Tensor bt601_luma(const Tensor& rgb) {
  require(rgb.rank() == 3 && rgb.dim(2) == 3, "bt601_luma: expect H×W×3");
  Tensor y({rgb.dim(0), rgb.dim(1)});
  for (int i = 0; i < rgb.dim(0); ++i)
    for (int j = 0; j < rgb.dim(1); ++j)
      y.at(i, j) = 0.299 * rgb.at(i, j, 0) + 0.587 * rgb.at(i, j, 1) +
                   0.114 * rgb.at(i, j, 2);
  return y;
}

namespace {

std::vector<real> gaussian_kernel_11() {
  constexpr int R = 5;
  constexpr real sigma = 1.5;
  std::vector<real> k(11 * 11);
  real sum = 0;
  for (int dy = -R; dy <= R; ++dy)
    for (int dx = -R; dx <= R; ++dx) {
      const real v = std::exp(-(dy * dy + dx * dx) / (2.0 * sigma * sigma));
      k[static_cast<size_t>((dy + R) * 11 + dx + R)] = v;
      sum += v;
    }
  for (auto& v : k) v /= sum;
  return k;
}

}  // namespace

real ssim(const Tensor& a, const Tensor& b) {
  require(a.same_shape(b), "ssim: shape mismatch");
  Tensor ya = a.rank() == 3 ? bt601_luma(a) : a;
  Tensor yb = b.rank() == 3 ? bt601_luma(b) : b;
  const int H = ya.dim(0), W = ya.dim(1);
  constexpr int R = 5;
  require(H >= 11 && W >= 11, "ssim: image smaller than 11x11 window");
  static const std::vector<real> kern = gaussian_kernel_11();
  constexpr real c1 = (0.01 * 1.0) * (0.01 * 1.0);
  constexpr real c2 = (0.03 * 1.0) * (0.03 * 1.0);
  real acc = 0;
  long long n = 0;
  for (int y = R; y < H - R; ++y)
    for (int x = R; x < W - R; ++x) {
      real mu_a = 0, mu_b = 0;
      for (int dy = -R; dy <= R; ++dy)
        for (int dx = -R; dx <= R; ++dx) {
          const real w = kern[static_cast<size_t>((dy + R) * 11 + dx + R)];
          mu_a += w * ya.at(y + dy, x + dx);
          mu_b += w * yb.at(y + dy, x + dx);
        }
      real va = 0, vb = 0, cov = 0;
      for (int dy = -R; dy <= R; ++dy)
        for (int dx = -R; dx <= R; ++dx) {
          const real w = kern[static_cast<size_t>((dy + R) * 11 + dx + R)];
          const real da = ya.at(y + dy, x + dx) - mu_a;
          const real db = yb.at(y + dy, x + dx) - mu_b;
          // Group the products so swapping a and b performs the exact same
          // arithmetic; (w * da) * db would round differently from
          // (w * db) * da and break bitwise symmetry.
          va += w * (da * da);
          vb += w * (db * db);
          cov += w * (da * db);
        }
      acc += ((2 * (mu_a * mu_b) + c1) * (2 * cov + c2)) /
             ((mu_a * mu_a + mu_b * mu_b + c1) * (va + vb + c2));
      ++n;
    }
  return acc / n;
}

}  // namespace mia::metrics
