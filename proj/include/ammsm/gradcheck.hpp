#pragma once

#include <cmath>
#include <functional>

#include "ammsm/ops.hpp"

namespace ammsm {

// Central-difference validation of reverse-mode gradients. `f` must be a pure
// scalar-valued function of x (it may close over fixed parameters). Returns
// the max over coordinates of |autodiff - central_diff| / (|central_diff| + 1e-8).
// Run in 64-bit mode; 32-bit finite differences are too noisy to bound.
template <typename S>
double finite_diff_check(const std::function<Tensor<S>(const Tensor<S>&)>& f, const Tensor<S>& x0,
                         double eps = 1e-4) {
  Tensor<S> x = x0.clone();
  Tensor<S> autograd;
  {
    GradTape<S> tape;
    TapeScope<S> scope(&tape);
    tape.watch(x);
    Tensor<S> y = f(x);
    require(y.numel() == 1, "finite_diff_check: f must be scalar-valued");
    if (!std::isfinite(static_cast<double>(y.value())))
      throw NumericError("finite_diff_check: f(x) is non-finite");
    tape.backward(y);
    autograd = tape.grad_of(x);
  }
  double worst = 0.0;
  for (Index i = 0; i < x.numel(); ++i) {
    Tensor<S> xp = x.clone();
    Tensor<S> xm = x.clone();
    xp[i] += static_cast<S>(eps);
    xm[i] -= static_cast<S>(eps);
    const double yp = static_cast<double>(f(xp).value());
    const double ym = static_cast<double>(f(xm).value());
    const double fd = (yp - ym) / (2.0 * eps);
    const double err = std::abs(static_cast<double>(autograd[i]) - fd) / (std::abs(fd) + 1e-8);
    worst = std::max(worst, err);
  }
  return worst;
}

// Checks `loss()` against one parameter tensor of a model by swapping the
// probe tensor in wholesale (the swap shares storage and tape identity, so
// the recorded graph sees the watched leaf).
template <typename S>
double finite_diff_check_param(Tensor<S>& param, const std::function<Tensor<S>()>& loss, double eps = 1e-4) {
  Tensor<S> original = param;
  auto f = [&](const Tensor<S>& x) {
    param = x;
    Tensor<S> out = loss();
    param = original;
    return out;
  };
  return finite_diff_check<S>(f, original, eps);
}

}  // namespace ammsm
