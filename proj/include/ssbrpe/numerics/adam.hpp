// Copyright 2026 The ssbrpe Authors
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <cstdint>
#include <vector>

#include "ssbrpe/numerics/tensor.hpp"

namespace ssbrpe::nn {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  // Decoupled L2: applied directly to the value, never enters the moments.
  double weight_decay = 0.0;
};

struct AdamState {
  Array m;
  Array v;
  std::uint64_t step_count = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;

  static AdamState fresh(const Shape& shape, const AdamConfig& config);
};

// One bias-corrected Adam update of `param` from its current gradient.
void adam_step(Parameter& param, AdamState& state);

// Adam over a fixed parameter list; the list order defines state order.
class Adam {
 public:
  Adam(std::vector<Parameter> params, const AdamConfig& config);

  void step();
  void zero_grad();
  void set_lr(double lr);
  double lr() const { return lr_; }

  std::vector<AdamState>& states() { return states_; }
  const std::vector<AdamState>& states() const { return states_; }

 private:
  std::vector<Parameter> params_;
  std::vector<AdamState> states_;
  double lr_;
};

}  // namespace ssbrpe::nn
