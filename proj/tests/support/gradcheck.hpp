#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "salcar/autodiff.hpp"

namespace salcar::testing {

struct GradCheck {
  double rel_error = 0.0;
  double analytic_norm = 0.0;
  std::size_t coords = 0;
  std::size_t skipped = 0;
};

// ||a - n|| / max(||a||, ||n||) over sampled coordinates, with n from central
// differences in double. `loss` rebuilds the graph from the current values.
// A coordinate whose differences at h and h/10 disagree sits on a kink
// (ReLU, max pooling, hinge) and is skipped.
struct Probe {
  std::vector<double>* values;
  std::vector<double> analytic;
};

inline GradCheck compare(std::vector<Probe>& probes, const std::function<double()>& loss, std::uint64_t seed,
                         std::size_t samples_per_probe = 12, double h = 1e-4) {
  std::mt19937_64 rng(seed);
  double diff2 = 0, a2 = 0, n2 = 0;
  GradCheck r;
  for (auto& p : probes) {
    auto& v = *p.values;
    std::vector<std::size_t> idx(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) idx[i] = i;
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(std::min(idx.size(), samples_per_probe));
    for (std::size_t i : idx) {
      const double saved = v[i];
      auto central = [&](double step) {
        v[i] = saved + step;
        const double up = loss();
        v[i] = saved - step;
        const double down = loss();
        v[i] = saved;
        return (up - down) / (2 * step);
      };
      const double numeric = central(h);
      const double fine = central(h / 10);
      if (std::abs(numeric - fine) > 1e-5 * (1.0 + std::abs(fine))) {
        ++r.skipped;
        continue;
      }
      diff2 += (numeric - p.analytic[i]) * (numeric - p.analytic[i]);
      a2 += p.analytic[i] * p.analytic[i];
      n2 += numeric * numeric;
      ++r.coords;
    }
  }
  const double scale = std::max(std::sqrt(a2), std::sqrt(n2));
  r.analytic_norm = std::sqrt(a2);
  r.rel_error = scale < 1e-12 ? std::sqrt(diff2) : std::sqrt(diff2) / scale;
  return r;
}

// Fixed random projection turning any output into a scalar with a generic gradient.
inline Var<double> project(Var<double> out, std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ull);
  std::normal_distribution<double> n(0.0, 1.0);
  TensorD r(out.shape());
  for (auto& x : r.data()) x = n(rng);
  return sum(mul(out, out.tape->constant(std::move(r))));
}

inline TensorD random_tensor(const Shape& shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  TensorD t(shape);
  for (auto& x : t.data()) x = u(rng);
  return t;
}

// Gradient check of f(inputs) w.r.t. every input tensor (and optionally every
// parameter of `params`). f builds a scalar from Vars on the given tape.
using GraphFn = std::function<Var<double>(Tape<double>&, std::vector<Var<double>>&, Binding<double>*)>;

inline GradCheck check_graph(std::vector<TensorD> inputs, const GraphFn& f, std::uint64_t seed,
                             ParameterSet<double>* params = nullptr, std::size_t samples = 12) {
  std::vector<std::vector<double>> storage;
  for (auto& t : inputs) storage.push_back(t.vec());
  std::vector<std::vector<double>> pstore;
  if (params) {
    for (std::size_t i = 0; i < params->size(); ++i) pstore.push_back((*params)[i].value.vec());
  }
  auto build = [&](Tape<double>& tape, std::vector<Var<double>>& vars, std::unique_ptr<Binding<double>>& b) {
    for (std::size_t i = 0; i < inputs.size(); ++i) vars.push_back(tape.input(TensorD(inputs[i].shape(), storage[i])));
    if (params) {
      for (std::size_t i = 0; i < params->size(); ++i) {
        (*params)[i].value = TensorD((*params)[i].value.shape(), pstore[i]);
      }
      b = std::make_unique<Binding<double>>(tape, *params);
    }
    return f(tape, vars, b.get());
  };
  auto loss = [&] {
    Tape<double> tape;
    std::vector<Var<double>> vars;
    std::unique_ptr<Binding<double>> b;
    return build(tape, vars, b).value()[0];
  };

  std::vector<Probe> probes;
  {
    Tape<double> tape;
    std::vector<Var<double>> vars;
    std::unique_ptr<Binding<double>> b;
    if (params) params->zero_grad();
    const Var<double> out = build(tape, vars, b);
    tape.backward(out);
    for (std::size_t i = 0; i < inputs.size(); ++i) probes.push_back({&storage[i], tape.grad(vars[i]).vec()});
    if (params) {
      for (std::size_t i = 0; i < params->size(); ++i) probes.push_back({&pstore[i], (*params)[i].grad.vec()});
    }
  }
  return compare(probes, loss, seed, samples);
}

}  // namespace salcar::testing
