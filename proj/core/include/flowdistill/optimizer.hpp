#pragma once

#include <cstdint>

#include "flowdistill/nn.hpp"

namespace flowdistill::nn {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled (AdamW)
};

struct OptimizerState {
  AdamConfig config;
  ParamSet first_moment;
  ParamSet second_moment;
  std::int64_t step = 0;
};

OptimizerState make_adam(const ParamSet& params, AdamConfig config);

/// One Adam/AdamW update in place. Throws UsageError on shape mismatch.
void optimizer_step(ParamSet& params, const ParamSet& grads, OptimizerState& state);

}  // namespace flowdistill::nn
