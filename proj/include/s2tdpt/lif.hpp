#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "s2tdpt/surrogate.hpp"

namespace s2tdpt {

// Multi-step leaky integrate-and-fire neuron:
//   U[t] = H[t-1] + X[t]
//   S[t] = step(U[t] - v_th)            (fires when U >= v_th)
//   H[t] = v_reset * S[t] + beta * U[t] * (1 - S[t])
struct LifConfig {
  double v_th = 1.0;
  double v_reset = 0.0;
  double beta = 0.5;
  SurrogateSpec surrogate{};

  void validate() const {
    require(beta >= 0.0 && beta <= 1.0, ErrorCategory::config, "lif: beta must lie in [0, 1]");
    require(v_reset < v_th, ErrorCategory::config, "lif: v_reset must be below v_th");
    surrogate.validate();
  }

  friend bool operator==(const LifConfig&, const LifConfig&) = default;
};

template <class T>
struct LifState {
  Var<T> h;
};

template <class T>
struct LifStepResult {
  Var<T> spikes;
  LifState<T> state;
};

// One timestep, composed from primitive differentiable ops.
template <class T>
LifStepResult<T> lif_step(const LifState<T>& state, const Var<T>& x, const LifConfig& cfg) {
  cfg.validate();
  require(state.h.shape() == x.shape(), ErrorCategory::contract,
          "lif_step: input " + shape_str(x.shape()) + " does not match state " + shape_str(state.h.shape()));
  Var<T> u = add(state.h, x);
  Var<T> s = heaviside_surrogate(u, static_cast<T>(cfg.v_th), cfg.surrogate);
  Var<T> keep = affine(s, T{-1}, T{1});
  Var<T> h = add(scale(s, static_cast<T>(cfg.v_reset)), mul(scale(u, static_cast<T>(cfg.beta)), keep));
  return {s, {h}};
}

template <class T>
LifState<T> lif_initial_state(const Shape& shape) {
  return {Var<T>(Tensor<T>(shape))};
}

// Whole sequence in one fused op. `inputs` has the time axis first; the
// remaining axes form the neuron population. `initial` defaults to H = 0.
// Gradients are the exact chain rule of the step composition above, with the
// surrogate standing in for the step derivative.
template <class T>
Var<T> lif_sequence(const Var<T>& inputs, const LifConfig& cfg, const Tensor<T>* initial = nullptr) {
  cfg.validate();
  require(inputs.value().rank() >= 1 && inputs.shape()[0] >= 1, ErrorCategory::contract,
          "lif_sequence: need at least one timestep");
  const std::size_t steps = inputs.shape()[0];
  const std::size_t M = inputs.size() / steps;
  if (initial)
    require(initial->size() == M, ErrorCategory::contract, "lif_sequence: initial state size mismatch");

  const T v_th = static_cast<T>(cfg.v_th), v_reset = static_cast<T>(cfg.v_reset), beta = static_cast<T>(cfg.beta);
  Tensor<T> spikes(inputs.shape());
  std::vector<T> membrane(inputs.size());  // U[t] for the backward pass
  std::vector<T> h(M, T{0});
  if (initial) std::copy(initial->raw(), initial->raw() + M, h.begin());
  const T* x = inputs.value().raw();
  for (std::size_t t = 0; t < steps; ++t)
    for (std::size_t i = 0; i < M; ++i) {
      const std::size_t idx = t * M + i;
      const T u = h[i] + x[idx];
      const T s = u >= v_th ? T{1} : T{0};
      membrane[idx] = u;
      spikes[idx] = s;
      h[i] = v_reset * s + beta * u * (T{1} - s);
    }

  return make_op<T>(std::move(spikes), "lif", {inputs},
                    [membrane = std::move(membrane), steps, M, v_th, v_reset, beta, cfg](Node<T>& self) {
                      T* gx = self.parents[0]->grad_buffer().raw();
                      std::vector<T> gh(M, T{0});
                      for (std::size_t t = steps; t-- > 0;)
                        for (std::size_t i = 0; i < M; ++i) {
                          const std::size_t idx = t * M + i;
                          const T u = membrane[idx];
                          const T s = self.value[idx];
                          const T gs = self.grad[idx] + gh[i] * (v_reset - beta * u);
                          const T gu = gs * cfg.surrogate.derivative(u - v_th) + gh[i] * beta * (T{1} - s);
                          gx[idx] += gu;
                          gh[i] = gu;
                        }
                    });
}

// Smallest |U[t] - v_th| over a sequence, replaying the forward recurrence.
template <class T>
double lif_threshold_margin(const Tensor<T>& inputs, const LifConfig& cfg) {
  const std::size_t steps = inputs.dim(0), M = inputs.size() / steps;
  std::vector<double> h(M, 0.0);
  double margin = std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t < steps; ++t)
    for (std::size_t i = 0; i < M; ++i) {
      const double u = h[i] + static_cast<double>(inputs[t * M + i]);
      margin = std::min(margin, std::abs(u - cfg.v_th));
      h[i] = u >= cfg.v_th ? cfg.v_reset : cfg.beta * u;
    }
  return margin;
}

}  // namespace s2tdpt
