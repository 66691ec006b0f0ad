#pragma once

#include <map>
#include <string>

#include "mia/optim.hpp"

namespace mia {

// Finite-difference checks for every differentiable building block: linear,
// conv, layernorm, softmax attention, the pixel-shuffle reconstruction path,
// Charbonnier loss, sparsity loss, the full IIAB block (unmasked and masked)
// and a one-frame end-to-end model forward. Each check perturbs its own tiny
// parameter set. The recurrent pasts and Eq.3 caches are held constant
// because backpropagation through time is truncated at frame boundaries by
// design; a multi-frame forward is therefore not finite-difference testable.
std::map<std::string, ad::GradCheckResult> run_standard_grad_checks(
    real h = 1e-5, real abs_floor = 1e-7);

}  // namespace mia
