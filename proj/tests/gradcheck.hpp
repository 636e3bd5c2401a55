#pragma once

// Central finite-difference oracle. It only evaluates the loss forward, so it
// stays independent of the reverse-mode sweep it checks.

#include <algorithm>
#include <cmath>
#include <functional>

#include "sail/nn.hpp"

namespace sail::testing {

struct GradCheck {
  double max_rel_error = 0.0;
  std::string worst;
};

inline double rel_error(double a, double n) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-6});
}

// Compares `analytic` against central differences of `loss` for every entry
// of every parameter (or every `stride`-th entry for large sets).
inline GradCheck check_gradients(const std::function<double(const ParamSet&)>& loss, const ParamSet& params,
                                 const ParamSet& analytic, double h = 1e-5, std::size_t stride = 1) {
  GradCheck out;
  std::vector<double> flat = params.flatten();
  const std::vector<double> grad = analytic.flatten();
  for (std::size_t i = 0; i < flat.size(); i += stride) {
    const double keep = flat[i];
    flat[i] = keep + h;
    const double up = loss(params.with_flat(flat));
    flat[i] = keep - h;
    const double down = loss(params.with_flat(flat));
    flat[i] = keep;
    const double numeric = (up - down) / (2.0 * h);
    const double err = rel_error(grad[i], numeric);
    if (err > out.max_rel_error) {
      out.max_rel_error = err;
      out.worst = "index " + std::to_string(i) + ": analytic " + std::to_string(grad[i]) + " numeric " +
                  std::to_string(numeric);
    }
  }
  return out;
}

inline Tensor random_tensor(Rng& rng, std::size_t rows, std::size_t cols, double scale = 1.0) {
  Tensor t(rows, cols);
  for (double& v : t.values()) v = scale * normal(rng);
  return t;
}

}  // namespace sail::testing
