#include "msar/training/optimizer.hpp"

#include <algorithm>
#include <cmath>

#include "msar/error.hpp"

namespace msar::training {

double noam_lr(std::size_t step, std::size_t d_att, std::size_t warmup, double k) {
  if (step == 0) throw ContractError("noam_lr: step counts from 1");
  if (warmup == 0) throw ConfigError("noam_lr: warmup must be at least 1");
  if (d_att == 0) throw ConfigError("noam_lr: d_att must be positive");
  const double s = static_cast<double>(step);
  const double w = static_cast<double>(warmup);
  return k / std::sqrt(static_cast<double>(d_att)) * std::min(1.0 / std::sqrt(s), s * std::pow(w, -1.5));
}

GradientSet zero_gradients(const ParamList& params) {
  GradientSet g;
  g.reserve(params.size());
  for (const auto& item : params.items()) g.emplace_back(item.tensor.size(), 0.0);
  return g;
}

OptimizerState OptimizerState::for_params(const ParamList& params, AdamConfig cfg) {
  OptimizerState s;
  s.config = cfg;
  s.m = zero_gradients(params);
  s.v = zero_gradients(params);
  return s;
}

void adam_step(const ParamList& params, const GradientSet& grads, OptimizerState& state, double lr,
               const std::vector<bool>* trainable) {
  const auto& items = params.items();
  if (grads.size() != items.size() || state.m.size() != items.size() || state.v.size() != items.size())
    throw ShapeError("adam_step: parameter, gradient and moment counts differ");
  if (trainable && trainable->size() != items.size()) throw ShapeError("adam_step: trainable mask size mismatch");
  for (std::size_t i = 0; i < items.size(); ++i) {
    const std::size_t n = items[i].tensor.size();
    if (grads[i].size() != n || state.m[i].size() != n || state.v[i].size() != n)
      throw ShapeError("adam_step: shape mismatch for " + items[i].name);
  }
  ++state.step;
  const auto& c = state.config;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (trainable && !(*trainable)[i]) continue;
    numerics::Tensor p = items[i].tensor;
    auto w = p.values();
    auto& m = state.m[i];
    auto& v = state.v[i];
    const auto& g = grads[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * g[k];
      v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * g[k] * g[k];
      const double mh = m[k] / bc1;
      const double vh = v[k] / bc2;
      w[k] -= lr * mh / (std::sqrt(vh) + c.eps);
    }
  }
}

double clip_global_norm(GradientSet& grads, double max_norm, const std::vector<bool>* trainable) {
  double sq = 0.0;
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (trainable && !(*trainable)[i]) continue;
    for (double g : grads[i]) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double scale = max_norm / norm;
    for (std::size_t i = 0; i < grads.size(); ++i) {
      if (trainable && !(*trainable)[i]) continue;
      for (double& g : grads[i]) g *= scale;
    }
  }
  return norm;
}

}  // namespace msar::training
