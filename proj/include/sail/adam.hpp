#pragma once

#include <cmath>
#include <cstdint>

#include "sail/nn.hpp"

namespace sail {

struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  ParamSet m;
  ParamSet v;

  AdamState() = default;
  AdamState(const ParamSet& params, double learning_rate)
      : lr(learning_rate), m(params.zeros_like()), v(params.zeros_like()) {}
};

// One bias-corrected Adam update. Returns the new parameters; `state` is
// advanced in place.
inline ParamSet adam_step(const ParamSet& params, const ParamSet& grads, AdamState& state) {
  if (state.m.empty() && !params.empty()) {
    state.m = params.zeros_like();
    state.v = params.zeros_like();
  }
  for (const auto& [name, p] : params) {
    const Tensor& g = grads.at(name);
    if (!g.same_shape(p)) {
      throw ShapeError("gradient for '" + name + "' has shape " + g.shape_string() + ", parameter " +
                       p.shape_string());
    }
    if (!g.all_finite()) throw NumericError("non-finite gradient for parameter '" + name + "'");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  ParamSet out;
  for (const auto& [name, p] : params) {
    const Tensor& g = grads.at(name);
    Tensor m = state.m.at(name);
    Tensor v = state.v.at(name);
    Tensor np = p;
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      np[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
    }
    state.m.set(name, std::move(m));
    state.v.set(name, std::move(v));
    out.insert(name, std::move(np));
  }
  return out;
}

}  // namespace sail
