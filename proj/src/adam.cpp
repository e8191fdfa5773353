#include "salcar/adam.hpp"

#include <cmath>

namespace salcar {

template <typename T>
AdamState<T>::AdamState(const ParameterSet<T>& params, AdamOptions opts) : options(opts) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    m.emplace_back(params[i].value.shape());
    v.emplace_back(params[i].value.shape());
  }
}

template <typename T>
void adam_step(ParameterSet<T>& params, AdamState<T>& state) {
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ShapeError("adam_step: optimizer state has " + std::to_string(state.m.size()) +
                     " moments for " + std::to_string(params.size()) + " parameters");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& p = params[i];
    if (!p.grad_ready || p.grad.shape() != p.value.shape()) {
      throw ShapeError("adam_step: missing gradient for parameter '" + p.name + "'");
    }
    if (state.m[i].shape() != p.value.shape() || state.v[i].shape() != p.value.shape()) {
      throw ShapeError("adam_step: moment shape mismatch for parameter '" + p.name + "'");
    }
  }
  const auto& o = state.options;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(o.beta1, t);
  const double c2 = 1.0 - std::pow(o.beta2, t);
  const T b1 = static_cast<T>(o.beta1), b2 = static_cast<T>(o.beta2);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    auto g = p.grad.data();
    auto m = state.m[i].data();
    auto v = state.v[i].data();
    auto w = p.value.data();
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = b1 * m[k] + (T{1} - b1) * g[k];
      v[k] = b2 * v[k] + (T{1} - b2) * g[k] * g[k];
      const double mhat = static_cast<double>(m[k]) / c1;
      const double vhat = static_cast<double>(v[k]) / c2;
      w[k] = static_cast<T>(static_cast<double>(w[k]) - o.learning_rate * mhat / (std::sqrt(vhat) + o.eps));
    }
  }
  params.zero_grad();
}

template struct AdamState<float>;
template struct AdamState<double>;
template void adam_step(ParameterSet<float>&, AdamState<float>&);
template void adam_step(ParameterSet<double>&, AdamState<double>&);

}  // namespace salcar
