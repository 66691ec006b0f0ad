#pragma once

#include "mia/tensor.hpp"

namespace mia::metrics {

// 10*log10(1/MSE) over all elements, peak 1.0; identical inputs cap at 99 dB.
real psnr(const Tensor& a, const Tensor& b);

// Mean local SSIM on BT.601 luma, 11x11 Gaussian (sigma 1.5), K1=0.01,
// K2=0.03, valid positions only (no padding). Inputs H×W×3 or H×W.
real ssim(const Tensor& a, const Tensor& b);

Tensor bt601_luma(const Tensor& rgb);

}  // namespace mia::metrics
