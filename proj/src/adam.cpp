#include "milgrad/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace milgrad {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) {
    throw ConfigError("learning_rate must be positive");
  }
  if (weight_decay < 0.0) {
    throw ConfigError("weight_decay must be >= 0");
  }
  if (batch_size < 1) {
    throw ConfigError("batch_size must be >= 1");
  }
  if (epochs < 1) {
    throw ConfigError("epochs must be >= 1");
  }
  if (!(epsilon > 0.0)) {
    throw ConfigError("epsilon must be positive");
  }
  if (checkpoint_cadence < 1) {
    throw ConfigError("checkpoint_cadence must be >= 1");
  }
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("beta1 and beta2 must be in [0, 1)");
  }
}

AdamState AdamState::zeros(Index param_count, double eta) {
  AdamState state;
  state.m = Vector::Zero(param_count);
  state.v = Vector::Zero(param_count);
  state.eta = eta;
  return state;
}

void adam_step(Vector& params, AdamState& state, const Vector& grad, const TrainConfig& config) {
  if (params.size() != grad.size() || state.m.size() != grad.size() ||
      state.v.size() != grad.size()) {
    throw std::runtime_error("adam_step: shape mismatch");
  }
  if (!grad.allFinite()) {
    throw std::runtime_error("adam_step: non-finite gradient entries");
  }
  state.step += 1;
  state.eta = config.learning_rate;
  if (config.weight_decay != 0.0) {
    params -= (state.eta * config.weight_decay) * params;
  }
  state.m = config.beta1 * state.m + (1.0 - config.beta1) * grad;
  state.v = config.beta2 * state.v + (1.0 - config.beta2) * grad.cwiseProduct(grad);
  params -= state.eta * (state.m.array() / (state.v.array().sqrt() + config.epsilon)).matrix();
}

}  // namespace milgrad
