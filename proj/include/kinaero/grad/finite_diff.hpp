#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <span>
#include <stdexcept>
#include <vector>

#include "kinaero/grad/tensor.hpp"

namespace kinaero::grad {

// Max over coordinates of |analytic - central difference| / (|analytic| + 1e-8).
// `loss` maps a parameter vector to a scalar and must not retain the span.
template <class Loss>
  requires std::invocable<Loss&, std::span<const double>>
double finite_diff_check(Loss&& loss, std::span<const double> params,
                         std::span<const double> analytic, double h) {
  if (params.size() != analytic.size()) throw ShapeError("finite_diff_check: size mismatch");
  std::vector<double> x(params.begin(), params.end());
  const double base = loss(std::span<const double>(x));
  if (!std::isfinite(base)) throw NonFiniteError("finite_diff_check: non-finite loss");
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + h;
    const double fp = loss(std::span<const double>(x));
    x[i] = orig - h;
    const double fm = loss(std::span<const double>(x));
    x[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw NonFiniteError("finite_diff_check: non-finite loss");
    }
    const double numeric = (fp - fm) / (2.0 * h);
    const double err = std::abs(analytic[i] - numeric) / (std::abs(analytic[i]) + 1e-8);
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace kinaero::grad
