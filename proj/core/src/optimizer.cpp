#include "flowdistill/optimizer.hpp"

#include <cmath>

namespace flowdistill::nn {

OptimizerState make_adam(const ParamSet& params, AdamConfig config) {
  if (!(config.lr > 0.0) || config.beta1 < 0.0 || config.beta1 >= 1.0 || config.beta2 < 0.0 ||
      config.beta2 >= 1.0 || !(config.eps > 0.0) || config.weight_decay < 0.0) {
    throw ConfigError("invalid Adam hyperparameters");
  }
  return OptimizerState{config, params.zeros_like(), params.zeros_like(), 0};
}

void optimizer_step(ParamSet& params, const ParamSet& grads, OptimizerState& state) {
  if (!params.congruent(grads) || !params.congruent(state.first_moment) ||
      !params.congruent(state.second_moment)) {
    throw UsageError("optimizer_step: params, grads and moments must be shape-congruent");
  }
  const auto& cfg = state.config;
  state.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.tensor_count(); ++i) {
    Matrix& m = state.first_moment[i];
    Matrix& v = state.second_moment[i];
    const Matrix& g = grads[i];
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * g.cwiseProduct(g);
    if (cfg.weight_decay > 0.0) params[i] *= (1.0 - cfg.lr * cfg.weight_decay);
    params[i].array() -=
        cfg.lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + cfg.eps);
  }
}

}  // namespace flowdistill::nn
