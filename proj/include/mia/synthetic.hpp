#pragma once

#include <cstdint>
#include <vector>

#include "mia/tensor.hpp"

namespace mia::synth {

enum class Pattern { static_scene, moving_square, mixed };

struct SyntheticSpec {
  int T = 5;
  int H = 64, W = 64;  // HR size; must be divisible by scale
  int scale = 4;
  Pattern pattern = Pattern::static_scene;
  int vy = 1, vx = 0;       // moving_square velocity, pixels per frame
  real fraction = 0.25;     // mixed: exact fraction of changing pixels
  real noise_std = 0.0;
  uint64_t seed = 0;
  void validate() const;
};

struct Sequence {
  std::vector<Tensor> hr;  // T frames, H×W×3 in [0,1]
  std::vector<Tensor> lr;  // box-downsampled by scale
};

// Procedural HR frames + box-downsampled LR. Deterministic per seed.
// static: all frames identical. moving_square: frame t is frame t-1
// cyclically shifted by (vy, vx). mixed: exactly round(fraction*H*W) pixels
// change between consecutive frames before noise.
Sequence gen_synthetic(const SyntheticSpec& spec);

}  // namespace mia::synth
