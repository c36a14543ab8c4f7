#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <vector>

#include <fmt/format.h>

#include "doublematch/error.hpp"

namespace dm {

// eta(k) = eta0 * cos(gamma * pi * k / (2K)); stays positive on [0, K]
// because gamma < 1.
struct LrSchedule {
  double eta0 = 0.3;
  double gamma = 7.0 / 8.0;
  std::int64_t total_steps = 1;
};

inline double lr_at(const LrSchedule& s, std::int64_t k) {
  if (k < 0 || k > s.total_steps)
    throw ConfigError(fmt::format("step {} outside the schedule range [0, {}]", k, s.total_steps));
  return s.eta0 * std::cos(s.gamma * std::numbers::pi * static_cast<double>(k) /
                           (2.0 * static_cast<double>(s.total_steps)));
}

template <typename T>
struct OptimizerState {
  std::vector<T> velocity;
  double momentum = 0.9;
  std::int64_t step = 0;
};

template <typename T>
OptimizerState<T> make_optimizer(std::size_t num_params, double momentum) {
  return {std::vector<T>(num_params, T(0)), momentum, 0};
}

// Nesterov momentum in the "look-ahead in the gradient" form:
//   v <- momentum * v + g
//   theta <- theta - lr * (g + momentum * v)
// Weight decay is not applied here; it arrives through the loss gradient.
// Non-finite gradients abort the step before anything is modified.
template <typename T>
void sgd_step(std::span<T> params, std::span<const T> grads, OptimizerState<T>& state, double lr) {
  if (params.size() != grads.size() || state.velocity.size() != params.size())
    throw ShapeError(fmt::format("sgd_step: {} params, {} grads, {} velocity entries", params.size(), grads.size(),
                                 state.velocity.size()));
  for (std::size_t i = 0; i < grads.size(); ++i)
    if (!std::isfinite(static_cast<double>(grads[i])))
      throw TrainingError(fmt::format("sgd_step: non-finite gradient at index {}", i));
  const T mom = static_cast<T>(state.momentum);
  const T rate = static_cast<T>(lr);
  for (std::size_t i = 0; i < params.size(); ++i) {
    T& v = state.velocity[i];
    v = mom * v + grads[i];
    params[i] -= rate * (grads[i] + mom * v);
  }
  ++state.step;
}

}  // namespace dm
