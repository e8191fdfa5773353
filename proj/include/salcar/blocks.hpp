#pragma once

#include <optional>
#include <random>
#include <string>

#include "salcar/autodiff.hpp"
#include "salcar/config.hpp"

namespace salcar {

using InitRng = std::mt19937_64;

// He-uniform weights (bound sqrt(6 / fan_in)) and zero biases, named
// `<name>.w` / `<name>.b`. Conv weights are O x I x k x k, FC weights O x I.
template <typename T>
void add_conv_params(ParameterSet<T>& params, const std::string& name, std::size_t in, std::size_t out,
                     std::size_t kernel, InitRng& rng);
template <typename T>
void add_fc_params(ParameterSet<T>& params, const std::string& name, std::size_t in, std::size_t out, InitRng& rng);

// Convolution with the bound `<name>.w` / `<name>.b`; padding keeps the size at stride 1.
template <typename T>
Var<T> conv(const Binding<T>& b, const std::string& name, Var<T> x, std::size_t stride = 1);
template <typename T>
Var<T> dense(const Binding<T>& b, const std::string& name, Var<T> x);

/// Squeeze-and-excitation style gating: GAP -> 1x1 down (C/r) -> ReLU ->
/// 1x1 up (C) -> sigmoid -> per-channel rescale.
class ChannelAttention {
 public:
  // With `strict` unset a non-divisible width falls back to max(1, C/r); used
  // when the unit is disabled but its parameters are still allocated.
  ChannelAttention(std::string prefix, std::size_t channels, std::size_t ratio, bool strict = true);

  template <typename T>
  void init(ParameterSet<T>& params, InitRng& rng) const;
  // Attention factors, shape N x C, each in (0,1).
  template <typename T>
  Var<T> factors(const Binding<T>& b, Var<T> x) const;
  template <typename T>
  Var<T> forward(const Binding<T>& b, Var<T> x) const;

 private:
  std::string prefix_;
  std::size_t channels_;
  std::size_t reduced_;
};

/// Saliency-guided channel attention residual block:
///   x' = CA(Conv1(Concat{MaxPool(x), F_sal}))
///   out = Concat{Conv3(Conv3(x')) + x', Conv1_stride2(x)}
/// Each concat branch carries out_channels / 2 channels.
class SalCarBlock {
 public:
  SalCarBlock(std::string prefix, BlockConfig cfg, std::size_t sal_channels, double leaky_slope);

  template <typename T>
  void init(ParameterSet<T>& params, InitRng& rng) const;
  template <typename T>
  Var<T> forward(const Binding<T>& b, Var<T> x, std::optional<Var<T>> f_sal) const;

  const BlockConfig& config() const { return cfg_; }

 private:
  std::string prefix_;
  BlockConfig cfg_;
  std::size_t sal_channels_;
  double slope_;
  ChannelAttention ca_;
};

/// Split-convolution channel attention residual block:
///   x' = CA(MaxPool(x)); x'_i = Conv3(Conv3(x')) per branch
///   out = Concat{x'_1 .. x'_k} + Conv1(x')
class SplitCarBlock {
 public:
  SplitCarBlock(std::string prefix, BlockConfig cfg, double leaky_slope);

  template <typename T>
  void init(ParameterSet<T>& params, InitRng& rng) const;
  template <typename T>
  Var<T> forward(const Binding<T>& b, Var<T> x) const;

  std::size_t branches() const { return branches_; }
  const BlockConfig& config() const { return cfg_; }

 private:
  std::string prefix_;
  BlockConfig cfg_;
  double slope_;
  std::size_t branches_;
  ChannelAttention ca_;
};

}  // namespace salcar
