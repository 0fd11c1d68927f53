#pragma once

#include <cstdint>

#include "milgrad/types.hpp"

namespace milgrad {

struct TrainConfig {
  double learning_rate = 1e-3;
  double weight_decay = 1e-4;
  int batch_size = 4;
  int epochs = 30;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int checkpoint_cadence = 1;  // epochs between stored checkpoints
  std::uint64_t seed = 1;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

// Raw (uncorrected) first/second moments. The update applied is
//   w <- w - eta * m / (sqrt(v) + eps)
// with decoupled weight decay (w <- w - eta * wd * w) before the Adam delta,
// so m and v stay pure gradient moments.
struct AdamState {
  std::uint64_t step = 0;
  Vector m;
  Vector v;
  double eta = 0.0;

  static AdamState zeros(Index param_count, double eta);
};

void adam_step(Vector& params, AdamState& state, const Vector& grad, const TrainConfig& config);

}  // namespace milgrad
