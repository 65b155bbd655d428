#pragma once

#include <vector>

#include "specmix/params.hpp"

namespace specmix {

struct AdamConfig {
  double learning_rate = 0.002;
  double beta1 = 0.7;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<Tensor> first;   // m, shaped like the parameters
  std::vector<Tensor> second;  // v
  std::size_t step = 0;

  static AdamState for_group(const ParameterGroup& group);
};

// One bias-corrected Adam update of `group` in place.
void adam_step(ParameterGroup& group, const std::vector<Tensor>& grads, AdamState& state, const AdamConfig& config);

}  // namespace specmix
