#pragma once

#include <cmath>

#include "s2tdpt/autodiff.hpp"

namespace s2tdpt {

enum class SurrogateKind { rectangular, triangular };

// Stand-in derivative for the spike threshold. `width` is the half-width of
// the support around the threshold.
struct SurrogateSpec {
  SurrogateKind kind = SurrogateKind::rectangular;
  double width = 0.5;

  void validate() const {
    require(width > 0.0 && std::isfinite(width), ErrorCategory::config,
            "surrogate width must be positive, got " + std::to_string(width));
  }

  // Derivative at distance d from the threshold.
  template <class T>
  T derivative(T d) const {
    const T w = static_cast<T>(width);
    const T ad = std::abs(d);
    if (kind == SurrogateKind::rectangular) return ad <= w ? T{1} / (T{2} * w) : T{0};
    return ad < w ? (T{1} - ad / w) / w : T{0};
  }

  friend bool operator==(const SurrogateSpec&, const SurrogateSpec&) = default;
};

// Forward: 1 where x >= threshold, else 0. Backward: g * surrogate'(x - threshold).
template <class T>
Var<T> heaviside_surrogate(const Var<T>& x, T threshold, const SurrogateSpec& spec) {
  spec.validate();
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.value()[i] >= threshold ? T{1} : T{0};
  return make_op<T>(std::move(out), "heaviside", {x}, [threshold, spec](Node<T>& self) {
    const auto& in = self.parents[0]->value;
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * spec.derivative(in[i] - threshold);
  });
}

}  // namespace s2tdpt
