#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <vector>

#include "ecpp/tensor.hpp"

namespace ecpp {

/// Largest coordinate-wise relative error between the reverse-mode gradient
/// of `f` at `x` and a central difference with step `h`:
///   |analytic - central| / (|analytic| + |central| + 1e-8).
/// `x` must be a leaf; its values are restored before returning.
template <typename T, typename F>
  requires std::invocable<F, const BasicTensor<T>&>
double finite_difference_check(F&& f, BasicTensor<T> x, double h) {
  if (!(h > 0.0)) throw DomainError("finite_difference_check: step must be positive");
  x.set_requires_grad(true);
  x.zero_grad();
  BasicTensor<T> loss = f(x);
  backward(loss);
  std::vector<T> analytic(x.grad().begin(), x.grad().end());
  if (analytic.empty()) analytic.assign(x.numel(), T(0));

  auto values = x.mutable_data();
  double worst = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const T saved = values[i];
    values[i] = static_cast<T>(saved + h);
    const double up = static_cast<double>(f(x).item());
    values[i] = static_cast<T>(saved - h);
    const double down = static_cast<double>(f(x).item());
    values[i] = saved;
    const double central = (up - down) / (2.0 * h);
    const double a = static_cast<double>(analytic[i]);
    worst = std::max(worst, std::abs(a - central) / (std::abs(a) + std::abs(central) + 1e-8));
  }
  x.zero_grad();
  return worst;
}

}  // namespace ecpp
