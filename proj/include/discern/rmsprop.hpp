#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

#include "discern/tensor.hpp"

namespace discern {

// Plain (uncentered) RMSProp.
//   acc   <- decay * acc + (1 - decay) * g^2
//   param <- param - lr * g / sqrt(acc + eps)
struct RmsPropState {
  double learning_rate = 1e-4;
  double decay = 0.9;
  double epsilon = 1e-8;
  ParamSet accumulators;
};

struct OptimizerError : std::runtime_error {
  explicit OptimizerError(const std::string& m) : std::runtime_error(m) {}
};

// Applies one step for every parameter present in grads. All grads are
// validated before anything is mutated, so a refused step leaves params and
// state untouched.
inline void rmsprop_step(ParamSet& params, const ParamSet& grads, RmsPropState& state) {
  for (const auto& [name, g] : grads) {
    auto it = params.find(name);
    if (it == params.end()) throw OptimizerError("rmsprop: unknown parameter " + name);
    if (!it->second.same_shape(g))
      throw OptimizerError("rmsprop: gradient shape mismatch for " + name);
    if (!g.all_finite()) throw OptimizerError("rmsprop: non-finite gradient for " + name);
  }
  for (const auto& [name, g] : grads) {
    Tensor& p = params[name];
    auto [it, inserted] = state.accumulators.try_emplace(name, Tensor::zeros(p.shape));
    Tensor& acc = it->second;
    for (int i = 0; i < p.numel(); ++i) {
      double gv = g.data[i];
      acc.data[i] = state.decay * acc.data[i] + (1.0 - state.decay) * gv * gv;
      p.data[i] -= state.learning_rate * gv / std::sqrt(acc.data[i] + state.epsilon);
    }
  }
}

}  // namespace discern
