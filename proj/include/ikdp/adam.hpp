#pragma once

#include <cmath>

#include "ikdp/tensor.hpp"

namespace ikdp {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First/second moments per parameter, lazily shaped on the first step.
template <typename Scalar>
struct AdamState {
  ParamStore<Scalar> m;
  ParamStore<Scalar> v;
  long step = 0;
};

/// One bias-corrected Adam update. Gradients must be aligned with `params`
/// (same names, same order, same shapes), which is what Graph::backward
/// returns. A non-finite gradient aborts before any parameter changes.
template <typename Scalar>
void adam_step(ParamStore<Scalar>& params, const ParamStore<Scalar>& grads, AdamState<Scalar>& state,
               const AdamConfig& cfg) {
  if (grads.size() != params.size())
    throw Error(ErrorCode::kShapeMismatch, "adam: " + std::to_string(grads.size()) + " gradients for " +
                                               std::to_string(params.size()) + " parameters");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].name != params[i].name || !(grads[i].value.shape() == params[i].value.shape()))
      throw Error(ErrorCode::kShapeMismatch, "adam: gradient '" + grads[i].name + "' does not match parameter '" +
                                                 params[i].name + "'");
    if (!grads[i].value.all_finite())
      throw Error(ErrorCode::kNonFinite, "adam: gradient of '" + params[i].name + "' is not finite");
  }
  if (state.m.size() != params.size()) {
    state.m = ParamStore<Scalar>();
    state.v = ParamStore<Scalar>();
    for (const auto& e : params) {
      state.m.add(e.name, Array<Scalar>(e.value.shape()));
      state.v.add(e.name, Array<Scalar>(e.value.shape()));
    }
    state.step = 0;
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  const Scalar b1 = static_cast<Scalar>(cfg.beta1), b2 = static_cast<Scalar>(cfg.beta2);
  const Scalar step_size = static_cast<Scalar>(cfg.lr / bc1);
  const Scalar inv_sqrt_bc2 = static_cast<Scalar>(1.0 / std::sqrt(bc2));
  const Scalar eps = static_cast<Scalar>(cfg.eps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& m = state.m[i].value.matrix();
    auto& v = state.v[i].value.matrix();
    const auto& g = grads[i].value.matrix();
    m = b1 * m + (Scalar(1) - b1) * g;
    v = b2 * v + (Scalar(1) - b2) * g.cwiseAbs2();
    params[i].value.matrix().array() -= step_size * m.array() / ((v.array().sqrt() * inv_sqrt_bc2) + eps);
  }
}

}  // namespace ikdp
