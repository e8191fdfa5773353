#pragma once

#include <cstdint>
#include <vector>

#include "salcar/autodiff.hpp"

namespace salcar {

struct AdamOptions {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First/second moments aligned with a ParameterSet's entry order.
template <typename T>
struct AdamState {
  AdamOptions options;
  std::uint64_t step = 0;
  std::vector<BasicTensor<T>> m;
  std::vector<BasicTensor<T>> v;

  AdamState() = default;
  AdamState(const ParameterSet<T>& params, AdamOptions opts = {});
};

/// One bias-corrected Adam update. Every parameter must carry a gradient from
/// a completed backward pass; gradients are zeroed afterwards.
template <typename T>
void adam_step(ParameterSet<T>& params, AdamState<T>& state);

}  // namespace salcar
