#pragma once

#include <random>
#include <vector>

#include "mia/autodiff.hpp"

namespace mia {

// Per-pixel binary mask for one IIAB block; alpha is the fraction of ones.
struct BlockMask {
  Tensor values;  // H×W, exact {0,1}
  real alpha = 0;
};

BlockMask make_block_mask(Tensor binary);

// Δ = |norm(x_cur) − norm(x_prev)|, norm = per-pixel channel layernorm
// without affine.
Tensor feature_difference(const Tensor& x_cur, const Tensor& x_prev, real eps = 1e-5);

// π₁ per pixel through the 1×1 conv: logits = Δ·w + b, π₁ = sigmoid(logits).
Tensor mask_logits(const Tensor& delta, const Tensor& conv_w, real conv_b);
Tensor mask_probabilities(const Tensor& logits);

// Training-mode Gumbel-softmax gate (binary case, temperature tau).
// Returns soft values in (0,1); deterministic per rng state.
Tensor gumbel_gate(const Tensor& pi1, real tau, std::mt19937_64& rng);

// Per-pixel difference of two independent Gumbel(0,1) samples, g1 - g2,
// matching gumbel_gate's noise stream. Exposed so the tape path can sample
// identically: soft = sigmoid((logits + noise)/tau).
Tensor gumbel_noise_diff(int H, int W, std::mt19937_64& rng);

// Inference-mode binarization, strict > 0.5.
BlockMask binarize(const Tensor& mask_features);

// Uniform-threshold baseline: 1 where channel-mean of Δ > threshold.
BlockMask handcrafted_mask(const Tensor& delta, real threshold);

// M⊙cur + (1−M)⊙cached, mask broadcast over channels. Plain-tensor version;
// the differentiable path lives in ad::masked_blend.
Tensor masked_blend(const Tensor& cur, const Tensor& cached, const Tensor& mask);

// Mean ℓ1 over all blocks' soft mask features.
real sparsity_loss(const std::vector<Tensor>& soft_masks);

}  // namespace mia
