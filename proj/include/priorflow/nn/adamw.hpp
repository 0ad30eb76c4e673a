#pragma once

#include "priorflow/nn/param_store.hpp"
#include "priorflow/nn/tape.hpp"

namespace priorflow::nn {

struct AdamWConfig {
  double lr = 1e-3;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Decoupled weight decay Adam. Parameters absent from `grads` are treated as
// having zero gradient. Rejects non-finite gradients before touching any state.
void adamw_step(ParamStore& params, const GradientReport& grads, const AdamWConfig& config);

}  // namespace priorflow::nn
