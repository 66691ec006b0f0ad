#pragma once

#include <random>
#include <string>
#include <vector>

#include "mia/autodiff.hpp"
#include "mia/kernels.hpp"

namespace mia {

// Per-block parameters bound on the current tape. Projections are bias-free;
// the FFN carries biases; bias_table is {heads, 3, (2w-1)^2} — one Swin-style
// 2-D relative table per frame group (intra, t-1, t-2) per head.
struct IiabParamRefs {
  ad::TVar wq, wk, wv, wo;
  ad::TVar ffn_w1, ffn_b1, ffn_w2, ffn_b2;
  ad::TVar ln1_g, ln1_b, ln2_g, ln2_b;
  ad::TVar bias_table;
};

// Parameter names carry a prefix like "m0.n2." so one flat store holds all blocks.
void init_iiab_params(ad::ParamStore& store, const std::string& prefix, int C,
                      int heads, int window_side, int ffn_ratio,
                      std::mt19937_64& rng, real init_std);
IiabParamRefs bind_iiab(const ad::ParamBinding& bind, const std::string& prefix);

// Dense-bias index map: flat (h, i, j) -> flat (h, group(j), offset(i, j mod w²))
// into the learnable table. Equal relative offsets share one table entry.
ad::IndexMap bias_index_map(int window_side, int heads);
ad::TVar relative_position_bias(ad::TVar table, int window_side, int heads);

// Q from the current frame's unmasked window rows only; K/V over
// [intra; past1; past2], 3w² rows per window.
struct WindowedQkv {
  ad::TVar q, k, v;               // q: n_unmasked×C (row-less windows skipped)
  std::vector<int> q_offset;      // per window: offset into q's rows
  std::vector<int> q_count;       // per window: unmasked token count
  std::vector<std::vector<int>> q_tokens;  // per window: unmasked token ids
  std::shared_ptr<std::vector<int>> q_rows;  // window-layout rows of all queries
  int n_windows = 0, tokens = 0;
  long long n_unmasked = 0;
};

// xw/p1w/p2w: window batches as TVars with dims {n_windows, w², C}.
// mask_in_window: nullable; exact {0,1} per window-layout row. Null = all ones.
WindowedQkv make_qkv(ad::TVar xw, ad::TVar p1w, ad::TVar p2w,
                     const IiabParamRefs& p, const std::vector<real>* mask_in_window);

// Joint softmax attention, Eq-for-one-window form. Thin alias kept so the
// attention surface reads at domain level.
inline ad::TVar iiab_attention(ad::TVar q, ad::TVar k, ad::TVar v, ad::TVar bias,
                               int heads) {
  return ad::mha(q, k, v, bias, heads);
}

struct BlockCache {
  Tensor x_attn;      // hidden after the attention sub-layer, previous frame
  Tensor x_ffn;       // hidden after the FFN sub-layer, previous frame
  Tensor norm_input;  // channel-layernormed block input, previous frame
  bool valid = false;
};

struct IiabConfig {
  int C = 0, heads = 1, window_side = 4, ffn_ratio = 2;
  real ln_eps = 1e-5;
};

// One pre-norm IIAB forward with masked skipping and cache reuse.
// mask_var must hold exact {0,1} values (H×W); pass an all-ones constant for
// the unmasked path. past1/past2 are detached feature maps (may be zero maps).
// Writes the new hidden features back into `cache`.
ad::TVar iiab_block(const IiabConfig& cfg, ad::TVar x, const IiabParamRefs& p,
                    const Tensor& past1, const Tensor& past2, ad::TVar mask_var,
                    BlockCache& cache, int shift);

// Window-layout mask values (per gather slot) for a pixel-space mask.
std::vector<real> mask_to_window_layout(const Tensor& mask,
                                        const kernels::WindowIndexMap& map);

}  // namespace mia
