#pragma once

#include <functional>
#include <map>
#include <string>

#include "mia/autodiff.hpp"

namespace mia::ad {

struct AdamConfig {
  real lr = 1e-3;
  real beta1 = 0.9;
  real beta2 = 0.999;
  real eps = 1e-8;
};

struct AdamState {
  std::map<std::string, Tensor> m;  // first moment
  std::map<std::string, Tensor> v;  // second moment
  long long step = 0;
};

// One Adam update with bias correction over every named gradient.
void adam_step(ParamStore& params, const std::map<std::string, Tensor>& grads,
               const AdamConfig& cfg, AdamState& state);

// Central-difference gradient check for a scalar-valued closure of the named
// parameters. Returns max relative error per parameter,
//   rel = |fd - ad| / max(|fd|, |ad|, abs_floor).
struct GradCheckResult {
  std::map<std::string, real> max_rel_err;
  real worst = 0;
};

GradCheckResult finite_diff_check(
    const std::function<TVar(Tape&, const ParamBinding&)>& forward,
    const ParamStore& params, real h = 1e-5, real abs_floor = 1e-7);

}  // namespace mia::ad
