#pragma once

#include <map>
#include <optional>
#include <random>
#include <vector>

#include "mia/optim.hpp"
#include "mia/propagation.hpp"

namespace mia {

struct ModelConfig {
  int scale = 4;
  int channels = 32;
  int window_side = 4;
  int heads = 4;
  int M = 2;
  int N = 4;
  int skip_interval = 2;
  int ffn_ratio = 2;
  real tau = 2.0 / 3.0;
  real lambda = 5e-4;
  real mask_threshold = 0.5;
  real charbonnier_eps = 1e-3;
  real ln_eps = 1e-5;
  bool global_residual = true;
  real init_std = 0.02;

  void validate() const;
  ScheduleConfig schedule() const;
};

enum class RunMode { unmasked, masked, handcrafted };

struct ForwardOptions {
  RunMode mode = RunMode::unmasked;
  bool training = false;       // gumbel sampling + straight-through
  bool saturate_masks = false; // masked mode but every mask forced to ones
  real hm_threshold = 0.2;
  std::optional<Tensor> forced_mask;  // overrides mode for FLOP cross-checks
  uint64_t seed = 0;
  AlignPolicy align;
  const std::vector<Tensor>* targets = nullptr;  // HR frames; enables losses
};

struct LossBreakdown {
  real l_sr = 0, l_mask = 0, total = 0, mean_alpha = 1;
};

struct ForwardResult {
  std::vector<Tensor> hr;
  std::vector<std::vector<BlockRecord>> records;  // per frame
  std::vector<real> frame_alpha;                  // mean mask density per frame
  real mean_alpha = 1;
  FlopLedger ledger;
  std::optional<LossBreakdown> loss;
};

class Model {
 public:
  Model(ModelConfig cfg, uint64_t init_seed);

  const ModelConfig& config() const { return cfg_; }
  ad::ParamStore& params() { return params_; }
  const ad::ParamStore& params() const { return params_; }

  // Full pipeline on an existing tape; returns the total-loss node when
  // targets are given (invalid TVar otherwise). Ledger recording follows the
  // active ledger set by the caller.
  ad::TVar forward_on_tape(ad::Tape& tape, const ad::ParamBinding& bind,
                           const std::vector<Tensor>& lr_frames,
                           const ForwardOptions& opts, ForwardResult& out) const;

  // Convenience wrapper owning its tape and ledger.
  ForwardResult forward_sequence(const std::vector<Tensor>& lr_frames,
                                 const ForwardOptions& opts) const;

  // Single differentiable ops exposed for tests and the reconstruction path.
  ad::TVar shallow_extract(ad::TVar frame, const ad::ParamBinding& bind) const;
  ad::TVar reconstruct(ad::TVar feat, const Tensor& lr_frame,
                       const ad::ParamBinding& bind) const;

 private:
  ModelConfig cfg_;
  ad::ParamStore params_;
};

real charbonnier_loss(const Tensor& pred, const Tensor& target, real eps);

LossBreakdown total_loss(real l_sr, real l_mask, real lambda, real mean_alpha);

struct TrainStats {
  real total = 0, l_sr = 0, l_mask = 0, mean_alpha = 1;
};

// One optimizer step on the combined objective over the whole sequence.
TrainStats train_step(Model& model, const std::vector<Tensor>& lr_frames,
                      const std::vector<Tensor>& hr_frames, uint64_t step_seed,
                      const ad::AdamConfig& adam, ad::AdamState& state);

}  // namespace mia
