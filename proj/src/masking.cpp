#include "mia/masking.hpp"

#include <cmath>

#include "mia/kernels.hpp"

namespace mia {

BlockMask make_block_mask(Tensor binary) {
  BlockMask m;
  real ones = 0;
  for (real v : binary.data) {
    require(v == 0.0 || v == 1.0, "BlockMask: values must be exactly 0 or 1");
    ones += v;
  }
  m.alpha = ones / static_cast<real>(binary.numel());
  m.values = std::move(binary);
  return m;
}

Tensor feature_difference(const Tensor& x_cur, const Tensor& x_prev, real eps) {
  require(x_cur.same_shape(x_prev), "feature_difference: shape mismatch");
  static const Tensor empty;
  Tensor a = kernels::layer_norm(x_cur, empty, empty, eps);
  Tensor b = kernels::layer_norm(x_prev, empty, empty, eps);
  for (long long i = 0; i < a.numel(); ++i) a[i] = std::fabs(a[i] - b[i]);
  return a;
}

Tensor mask_logits(const Tensor& delta, const Tensor& conv_w, real conv_b) {
  const int HW = delta.rows(), C = delta.cols();
  require(conv_w.numel() == C, "mask_logits: conv weight length mismatch");
  Tensor out({HW});
  for (int p = 0; p < HW; ++p) {
    real acc = conv_b;
    for (int c = 0; c < C; ++c) acc += delta.data[(size_t)p * C + c] * conv_w[c];
    out[p] = acc;
  }
  return out;
}

Tensor mask_probabilities(const Tensor& logits) {
  Tensor out = logits;
  for (auto& v : out.data) v = 1.0 / (1.0 + std::exp(-v));
  return out;
}

Tensor gumbel_noise_diff(int H, int W, std::mt19937_64& rng) {
  std::uniform_real_distribution<real> uni(std::numeric_limits<real>::min(), 1.0);
  Tensor n({H, W});
  for (auto& v : n.data) {
    const real g1 = -std::log(-std::log(uni(rng)));
    const real g2 = -std::log(-std::log(uni(rng)));
    v = g1 - g2;
  }
  return n;
}

Tensor gumbel_gate(const Tensor& pi1, real tau, std::mt19937_64& rng) {
  require(tau > 0, "gumbel_gate: tau must be positive");
  std::uniform_real_distribution<real> uni(std::numeric_limits<real>::min(), 1.0);
  Tensor out = pi1;
  for (auto& v : out.data) {
    require(v > 0.0 && v < 1.0, "gumbel_gate: pi1 must lie in (0,1)");
    const real g1 = -std::log(-std::log(uni(rng)));
    const real g2 = -std::log(-std::log(uni(rng)));
    const real a = (std::log(v) + g1) / tau;
    const real b = (std::log(1.0 - v) + g2) / tau;
    // two-way softmax, max-subtracted
    const real mx = std::max(a, b);
    const real ea = std::exp(a - mx), eb = std::exp(b - mx);
    v = ea / (ea + eb);
  }
  return out;
}

BlockMask binarize(const Tensor& mask_features) {
  Tensor b = mask_features;
  for (auto& v : b.data) v = v > 0.5 ? 1.0 : 0.0;
  return make_block_mask(std::move(b));
}

BlockMask handcrafted_mask(const Tensor& delta, real threshold) {
  require(threshold >= 0, "handcrafted_mask: threshold must be >= 0");
  const int HW = delta.rows(), C = delta.cols();
  Tensor b({HW});
  for (int p = 0; p < HW; ++p) {
    real mean = 0;
    for (int c = 0; c < C; ++c) mean += delta.data[(size_t)p * C + c];
    mean /= C;
    b[p] = mean > threshold ? 1.0 : 0.0;
  }
  if (delta.rank() == 3) b = b.reshaped({delta.dim(0), delta.dim(1)});
  return make_block_mask(std::move(b));
}

Tensor masked_blend(const Tensor& cur, const Tensor& cached, const Tensor& mask) {
  require(cur.same_shape(cached), "masked_blend: shape mismatch");
  const int HW = cur.rows(), C = cur.cols();
  require(mask.numel() == HW, "masked_blend: mask does not broadcast");
  Tensor out = cur;
  for (int p = 0; p < HW; ++p) {
    const real m = mask[p];
    for (int c = 0; c < C; ++c) {
      const size_t i = (size_t)p * C + c;
      out.data[i] = m * cur.data[i] + (1.0 - m) * cached.data[i];
    }
  }
  return out;
}

real sparsity_loss(const std::vector<Tensor>& soft_masks) {
  require(!soft_masks.empty(), "sparsity_loss: empty input");
  real total = 0;
  long long n = 0;
  for (const Tensor& m : soft_masks) {
    for (real v : m.data) total += std::fabs(v);
    n += m.numel();
  }
  return total / static_cast<real>(n);
}

}  // namespace mia
