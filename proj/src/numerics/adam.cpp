// Copyright 2026 The ssbrpe Authors
//
// Licensed under the Apache License, Version 2.0

#include "ssbrpe/numerics/adam.hpp"

#include <cmath>

#include "ssbrpe/errors.hpp"

namespace ssbrpe::nn {

AdamState AdamState::fresh(const Shape& shape, const AdamConfig& config) {
  if (!(config.beta1 >= 0.0 && config.beta1 < 1.0 && config.beta2 >= 0.0 && config.beta2 < 1.0)) {
    throw ConfigError("Adam betas must lie in [0, 1)");
  }
  AdamState s;
  s.m = Array(shape, 0.0f);
  s.v = Array(shape, 0.0f);
  s.lr = config.lr;
  s.beta1 = config.beta1;
  s.beta2 = config.beta2;
  s.eps = config.eps;
  s.weight_decay = config.weight_decay;
  return s;
}

void adam_step(Parameter& param, AdamState& state) {
  if (state.m.shape() != param.shape() || state.v.shape() != param.shape()) {
    throw DimensionError("adam_step: state shape " + shape_str(state.m.shape()) +
                         " does not match parameter " + shape_str(param.shape()));
  }
  if (!param.trainable()) return;
  if (param.grad().shape() != param.shape()) param.zero_grad();
  ++state.step_count;
  const double t = static_cast<double>(state.step_count);
  const double bc1 = 1.0 - std::pow(state.beta1, t);
  const double bc2 = 1.0 - std::pow(state.beta2, t);
  Array& value = param.value();
  const Array& grad = param.grad();
  for (std::size_t i = 0; i < value.size(); ++i) {
    const double g = grad[i];
    const double m = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
    const double v = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
    state.m[i] = static_cast<float>(m);
    state.v[i] = static_cast<float>(v);
    const double m_hat = m / bc1;
    const double v_hat = v / bc2;
    double theta = value[i];
    theta -= state.lr * state.weight_decay * theta;
    theta -= state.lr * m_hat / (std::sqrt(v_hat) + state.eps);
    value[i] = static_cast<float>(theta);
  }
  if (!value.all_finite()) throw NumericError("adam_step produced non-finite parameters");
}

Adam::Adam(std::vector<Parameter> params, const AdamConfig& config)
    : params_(std::move(params)), lr_(config.lr) {
  states_.reserve(params_.size());
  for (const Parameter& p : params_) states_.push_back(AdamState::fresh(p.shape(), config));
}

void Adam::step() {
  for (std::size_t i = 0; i < params_.size(); ++i) adam_step(params_[i], states_[i]);
}

void Adam::zero_grad() {
  for (Parameter& p : params_) p.zero_grad();
}

void Adam::set_lr(double lr) {
  lr_ = lr;
  for (AdamState& s : states_) s.lr = lr;
}

}  // namespace ssbrpe::nn
