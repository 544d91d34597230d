#pragma once

#include <cstdint>
#include <vector>

#include "oneshot/network.hpp"

namespace oneshot {

// Adam with bias correction. The learning rate schedule multiplies the base
// rate by `lr_decay` once every `decay_every` epochs.
struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double lr_decay = 0.9;
  int decay_every = 10;
};

struct AdamState {
  std::vector<std::vector<Tensor>> m;
  std::vector<std::vector<Tensor>> v;
  std::int64_t step = 0;
};

AdamState init_adam(const ModelParams& params);

// Effective learning rate for a zero-based epoch index.
double adam_lr_at_epoch(const AdamConfig& cfg, int epoch);

// One update over every parameter tensor. `lr` is the effective rate for the
// current epoch (see adam_lr_at_epoch). Throws if any gradient is non-finite:
// silently absorbing a NaN here would poison the whole run.
void adam_step(ModelParams& params, const Gradients& grads, AdamState& state,
               const AdamConfig& cfg, double lr);

}  // namespace oneshot
