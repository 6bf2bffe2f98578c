#pragma once

#include <cmath>
#include <functional>

#include "projsdpa/numerics/errors.hpp"
#include "projsdpa/numerics/tensor.hpp"

namespace projsdpa {

using ScalarFunction = std::function<double(const Tensor&)>;

/// Central-difference gradient of a scalar function:
/// (f(x + h e_i) - f(x - h e_i)) / 2h for every coordinate i.
inline Tensor finite_difference_grad(const ScalarFunction& f, const Tensor& x,
                                     double h = 1e-5) {
  if (!(h > 0.0)) throw ConfigError("finite_difference_grad: h must be > 0");
  Tensor probe = x;
  Tensor grad(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double fp = f(probe);
    probe[i] = orig - h;
    const double fm = f(probe);
    probe[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw NumericError("finite_difference_grad: non-finite evaluation at "
                         "coordinate " + std::to_string(i));
    }
    grad[i] = (fp - fm) / (2.0 * h);
  }
  return grad;
}

/// Weighted sum <w, y>; composing a tensor-valued op with this turns its
/// vector-Jacobian product with upstream w into a plain gradient.
inline double weighted_sum(const Tensor& y, const Tensor& w) {
  require_same_shape(y, w, "weighted_sum");
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * w[i];
  return s;
}

}  // namespace projsdpa
