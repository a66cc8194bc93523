#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "dnfn/tape.hpp"

namespace dnfn {

/// SGD with momentum under a cosine-annealed learning rate:
///   v <- mu * v + g,  p <- p - lr(t) * v,
///   lr(t) = lr_final + (lr_initial - lr_final) * (1 + cos(pi * t / T)) / 2.
/// t is clamped to T, so lr stays inside [lr_final, lr_initial].
struct OptimizerState {
  std::vector<std::vector<float>> momentum;  // one buffer per parameter
  double momentum_coef = 0.9;
  double lr_initial = 0.1;
  double lr_final = 0.001;
  std::int64_t total_steps = 1;  // T: the step at which lr reaches lr_final
  std::int64_t current_step = 0;

  double learning_rate(std::int64_t step) const {
    if (total_steps <= 0) return lr_initial;
    const double t = static_cast<double>(std::min(step, total_steps));
    const double phase = std::numbers::pi * t / static_cast<double>(total_steps);
    return lr_final + 0.5 * (lr_initial - lr_final) * (1.0 + std::cos(phase));
  }
};

OptimizerState make_optimizer(double momentum, double lr_initial, double lr_final,
                              std::int64_t total_steps);

/// One update over params (with their accumulated grads). Returns the learning
/// rate that was applied. Throws TrainingError naming the first parameter with
/// a non-finite gradient, before touching any value.
double sgd_cosine_step(OptimizerState& state, std::span<Parameter<float>* const> params);

}  // namespace dnfn
