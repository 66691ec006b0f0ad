#pragma once

#include <random>
#include <vector>

#include "mia/attention.hpp"
#include "mia/flops.hpp"
#include "mia/masking.hpp"

namespace mia {

// Pluggable alignment for past enhanced features. Identity at desk scale;
// integer cyclic translation supports synthetic-motion experiments.
struct AlignPolicy {
  enum class Kind { identity, translate } kind = Kind::identity;
  int dy = 0, dx = 0;
};
Tensor align(const Tensor& feature, const AlignPolicy& policy);

struct ScheduleConfig {
  int M = 2;              // feature propagation modules
  int N = 4;              // IIABs per module
  int skip_interval = 2;  // identity residual around each group of this many blocks
  int window_side = 4;
  int heads = 4;
  int channels = 32;
  int ffn_ratio = 2;
  real ln_eps = 1e-5;
  void validate() const;
};

enum class MaskMode { all_ones, adaptive_hard, adaptive_gumbel, handcrafted, forced };

struct PropagationOptions {
  MaskMode mask_mode = MaskMode::all_ones;
  real hm_threshold = 0.2;
  Tensor forced_mask;  // H×W exact {0,1}; used by MaskMode::forced
  std::mt19937_64* rng = nullptr;  // required for adaptive_gumbel
  real tau = 2.0 / 3.0;
  AlignPolicy align;
};

struct BlockRecord {
  int frame = 0, module = 0, block = 0;
  BlockMask mask;
  ad::TVar soft_mask;  // gumbel soft values, training mode only
  bool has_soft = false;
  // True when the mask came from a real decision (predictor, threshold or a
  // forced test mask). False for boundary all-ones (missing caches or
  // unmasked/saturated runs); alpha statistics skip those.
  bool live = false;
};

// Per-(module, block) recurrence state, owned by the sequential driver.
struct PropagationState {
  std::vector<BlockCache> caches;  // one per block of the module being traversed
  Tensor past1, past2;             // enhanced outputs of the two prior frames
  bool has_past = false;
};

// One feature propagation module applied to one frame: N cascaded IIABs with
// identity residuals every `skip_interval` blocks. Appends one BlockRecord
// per block that ran with a live mask decision.
ad::TVar fpm_forward(ad::TVar x_in, int module_index, int frame_index,
                     const ad::ParamBinding& bind, const ScheduleConfig& sched,
                     const PropagationOptions& opts, PropagationState& state,
                     std::vector<BlockRecord>& records);

struct PropagationResult {
  std::vector<ad::TVar> refined;               // per frame
  std::vector<std::vector<BlockRecord>> records;  // per frame
};

// Bi-directional second-order propagation: even modules traverse forward in
// time, odd modules in reverse; each frame consumes the two previously
// enhanced frames of the same module in traversal order. Missing neighbors
// are zero maps with masks forced to ones.
PropagationResult propagate_bidirectional(const std::vector<ad::TVar>& shallow,
                                          const ad::ParamBinding& bind,
                                          const ScheduleConfig& sched,
                                          const PropagationOptions& opts);

std::string iiab_prefix(int module_index, int block_index);

}  // namespace mia
