#pragma once

#include <span>
#include <vector>

#include "doublematch/error.hpp"

namespace dm {

// Exponential moving average of the trainable parameters, used for
// evaluation. Normalization statistics are not averaged; evaluation pairs the
// shadow with the live model's running statistics.
template <typename T>
struct EmaState {
  std::vector<T> shadow;
  double momentum = 0.999;
};

template <typename T>
EmaState<T> ema_init(std::span<const T> params, double momentum = 0.999) {
  return {std::vector<T>(params.begin(), params.end()), momentum};
}

// shadow <- momentum * shadow + (1 - momentum) * params
template <typename T>
void ema_update(EmaState<T>& state, std::span<const T> params) {
  if (params.size() != state.shadow.size()) throw ShapeError("ema_update: parameter count changed");
  const T m = static_cast<T>(state.momentum);
  const T one_minus = static_cast<T>(1.0 - state.momentum);
  for (std::size_t i = 0; i < params.size(); ++i) state.shadow[i] = m * state.shadow[i] + one_minus * params[i];
}

}  // namespace dm
