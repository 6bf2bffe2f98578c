#pragma once

#include <cmath>
#include <vector>

#include "projsdpa/numerics/tensor.hpp"

namespace projsdpa::pipeline {

struct AdamHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First and second moment estimates for one tensor.
struct AdamMoments {
  Tensor m;
  Tensor v;
};

/// One bias-corrected Adam update of `value` at step t (t >= 1).
inline void adam_step(Tensor& value, const Tensor& grad, AdamMoments& state,
                      const AdamHyper& h, std::size_t t) {
  require_same_shape(value, grad, "adam_step");
  if (t < 1) throw ConfigError("adam_step: step counter starts at 1");
  if (state.m.empty()) {
    state.m = Tensor(value.shape());
    state.v = Tensor(value.shape());
  }
  require_same_shape(value, state.m, "adam_step");
  const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < value.size(); ++i) {
    const double g = grad[i];
    state.m[i] = h.beta1 * state.m[i] + (1.0 - h.beta1) * g;
    state.v[i] = h.beta2 * state.v[i] + (1.0 - h.beta2) * g * g;
    value[i] -= h.lr * (state.m[i] / c1) / (std::sqrt(state.v[i] / c2) + h.eps);
  }
}

/// Adam over a fixed, ordered list of parameters.
class Adam {
 public:
  explicit Adam(AdamHyper h = {}) : hyper_(h) {}

  void step(const std::vector<Parameter*>& params) {
    if (moments_.empty()) moments_.resize(params.size());
    if (moments_.size() != params.size())
      throw ShapeError("Adam::step: parameter list changed between steps");
    ++t_;
    for (std::size_t i = 0; i < params.size(); ++i)
      adam_step(params[i]->value, params[i]->grad, moments_[i], hyper_, t_);
  }

  std::size_t steps() const { return t_; }
  const AdamHyper& hyper() const { return hyper_; }

 private:
  AdamHyper hyper_;
  std::vector<AdamMoments> moments_;
  std::size_t t_ = 0;
};

}  // namespace projsdpa::pipeline
