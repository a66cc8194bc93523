#include "dnfn/optimizer.hpp"

#include "dnfn/error.hpp"

namespace dnfn {

OptimizerState make_optimizer(double momentum, double lr_initial, double lr_final,
                              std::int64_t total_steps) {
  if (!(momentum >= 0.0 && momentum < 1.0)) {
    throw ConfigError("momentum " + std::to_string(momentum) + " outside [0, 1)");
  }
  if (!(lr_final >= 0.0 && lr_final <= lr_initial)) {
    throw ConfigError("learning rates need 0 <= lr_final <= lr_initial");
  }
  OptimizerState s;
  s.momentum_coef = momentum;
  s.lr_initial = lr_initial;
  s.lr_final = lr_final;
  s.total_steps = total_steps;
  return s;
}

double sgd_cosine_step(OptimizerState& state, std::span<Parameter<float>* const> params) {
  for (const auto* p : params) {
    if (p->grad.size() != p->value.size()) {
      throw DimensionError("optimizer: gradient of " + p->name + " has " +
                           std::to_string(p->grad.size()) + " entries for shape " +
                           shape_str(p->value.shape));
    }
    for (float g : p->grad) {
      if (!std::isfinite(g)) throw TrainingError("non-finite gradient in parameter " + p->name);
    }
  }
  if (state.momentum.empty()) {
    for (const auto* p : params) state.momentum.emplace_back(p->value.size(), 0.0f);
  }
  if (state.momentum.size() != params.size()) {
    throw DimensionError("optimizer: " + std::to_string(params.size()) +
                         " parameters for " + std::to_string(state.momentum.size()) +
                         " momentum buffers");
  }
  const double lr = state.learning_rate(state.current_step);
  const float mu = static_cast<float>(state.momentum_coef);
  const float rate = static_cast<float>(lr);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& v = state.momentum[k];
    auto& p = *params[k];
    if (v.size() != p.value.size()) {
      throw DimensionError("optimizer: momentum buffer size mismatch for " + p.name);
    }
    for (std::size_t i = 0; i < v.size(); ++i) {
      v[i] = mu * v[i] + p.grad[i];
      p.value[i] -= rate * v[i];
    }
  }
  ++state.current_step;
  return lr;
}

}  // namespace dnfn
