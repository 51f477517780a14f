#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>

#include "bgattack/errors.hpp"
#include "bgattack/tensor.hpp"

namespace bgattack {

struct AmsGradConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const {
    if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("beta1 must lie in [0, 1)");
    if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("beta2 must lie in [0, 1)");
    if (!(eps > 0.0)) throw ConfigError("eps must be > 0");
  }

  friend bool operator==(const AmsGradConfig&, const AmsGradConfig&) = default;
};

/// AMSGrad moments. v_hat is the running maximum of the bias-corrected
/// second moment, so it never decreases.
struct AmsGradState {
  AmsGradConfig config;
  Tensor m;
  Tensor v;
  Tensor v_hat;
  std::size_t t = 0;

  AmsGradState() = default;
  AmsGradState(const Shape& dims, AmsGradConfig cfg)
      : config(cfg), m(Tensor::zeros(dims)), v(Tensor::zeros(dims)), v_hat(Tensor::zeros(dims)) {
    config.validate();
  }

  friend bool operator==(const AmsGradState&, const AmsGradState&) = default;
};

/// One AMSGrad update; returns p - lr * m_hat / (sqrt(v_hat) + eps).
/// No projection happens here.
inline Tensor amsgrad_step(AmsGradState& state, const Tensor& p, const Tensor& grad, double lr) {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("learning rate must be finite and > 0");
  require_same_shape(p, grad, "amsgrad_step");
  require_same_shape(p, state.m, "amsgrad_step");

  const auto& cfg = state.config;
  state.t += 1;
  const double t = static_cast<double>(state.t);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);

  Tensor out(p.dims());
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double g = grad[i];
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
    const double m_hat = state.m[i] / c1;
    state.v_hat[i] = std::max(state.v_hat[i], state.v[i] / c2);
    out[i] = p[i] - lr * m_hat / (std::sqrt(state.v_hat[i]) + cfg.eps);
  }
  return out;
}

enum class LrMode { Constant, PolyDecay };

struct LrSchedule {
  double alpha0 = 0.03;
  double exponent = 0.5;
  LrMode mode = LrMode::Constant;

  void validate() const {
    if (!(alpha0 > 0.0)) throw ConfigError("alpha must be > 0");
    if (!(exponent >= 0.0 && exponent <= 1.0)) throw ConfigError("lr exponent must lie in [0, 1]");
  }

  friend bool operator==(const LrSchedule&, const LrSchedule&) = default;
};

/// alpha_t = alpha0 / t^e for PolyDecay, alpha0 otherwise. t starts at 1.
inline double lr_at(const LrSchedule& schedule, std::size_t t) {
  if (t == 0) throw ContractError("learning-rate schedule is indexed from t = 1");
  if (schedule.mode == LrMode::Constant) return schedule.alpha0;
  return schedule.alpha0 * std::pow(static_cast<double>(t), -schedule.exponent);
}

}  // namespace bgattack
