#pragma once

#include <cstddef>
#include <vector>

#include "msar/numerics/params.hpp"

namespace msar::training {

using numerics::ParamList;
using GradientSet = std::vector<std::vector<double>>;  // one flat vector per parameter

// k * d^-0.5 * min(step^-0.5, step * warmup^-1.5); step counts from 1.
double noam_lr(std::size_t step, std::size_t d_att, std::size_t warmup, double k);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
};

struct OptimizerState {
  AdamConfig config;
  std::size_t step = 0;
  GradientSet m;
  GradientSet v;

  static OptimizerState for_params(const ParamList& params, AdamConfig cfg = {});
};

// Zero vectors shaped like params.
GradientSet zero_gradients(const ParamList& params);

// One bias-corrected Adam update. Parameters whose `trainable` flag is false
// keep their values and moments; the step counter advances regardless.
void adam_step(const ParamList& params, const GradientSet& grads, OptimizerState& state, double lr,
               const std::vector<bool>* trainable = nullptr);

// Rescales the trainable gradients to a global L2 norm of at most max_norm;
// returns the norm before rescaling.
double clip_global_norm(GradientSet& grads, double max_norm, const std::vector<bool>* trainable = nullptr);

}  // namespace msar::training
