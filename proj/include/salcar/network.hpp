#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "salcar/adam.hpp"
#include "salcar/autodiff.hpp"
#include "salcar/blocks.hpp"
#include "salcar/checkpoint.hpp"
#include "salcar/config.hpp"
#include "salcar/dataset.hpp"

namespace salcar {

// Quads packed along the batch axis.
struct PatchBatch {
  Tensor ref;  // N x C x P x P
  Tensor dst;
  Tensor sal;  // N x 1 x P x P
  Tensor jnd;
  std::vector<Rect> regions;
};

PatchBatch make_batch(std::span<const PatchQuad> quads);

/// Full JND-SalCAR model: SalSubnet, the shared ImgSubnet, JndSubnet, feature
/// fusion, the weight and quality heads, and weighted-average pooling.
template <typename T>
class Network {
 public:
  struct SalFeatures {
    Var<T> f1;  // after the first pooling, P/2
    Var<T> f2;  // after the second pooling, P/4
  };
  struct Output {
    Var<T> f_ref, f_dst, f_jnd, fused;
    Var<T> w;      // [N], > 0
    Var<T> q;      // [N]
    Var<T> score;  // [1]
  };

  Network(const NetworkConfig& cfg, std::uint64_t seed);
  // Adopts existing parameters; names and shapes must match the layout of cfg.
  Network(const NetworkConfig& cfg, ParameterSet<T> params);

  const NetworkConfig& config() const { return cfg_; }
  ParameterSet<T>& params() { return params_; }
  const ParameterSet<T>& params() const { return params_; }

  SalFeatures sal_subnet(const Binding<T>& b, Var<T> sal) const;
  // Shared by the reference and distorted patches; returns N x feature_length.
  Var<T> img_subnet(const Binding<T>& b, Var<T> patches, const std::optional<SalFeatures>& sal) const;
  Var<T> jnd_subnet(const Binding<T>& b, Var<T> jnd, const std::optional<SalFeatures>& sal) const;
  // (w, q), each of shape [N].
  std::pair<Var<T>, Var<T>> heads(const Binding<T>& b, Var<T> fused) const;

  Output forward(const Binding<T>& b, const PatchBatch& batch) const;

 private:
  struct Subnet {
    std::string prefix;
    std::vector<SalCarBlock> salcar;
    std::vector<SplitCarBlock> splitcar;
  };

  Subnet make_subnet(const std::string& prefix) const;
  void init(std::uint64_t seed);
  Var<T> run_subnet(const Subnet& net, const Binding<T>& b, Var<T> x, const std::optional<SalFeatures>& sal) const;

  NetworkConfig cfg_;
  Subnet img_;
  Subnet jnd_;
  ParameterSet<T> params_;
};

// Concat{f_ref - f_dst, f_jnd} along the feature axis.
template <typename T>
Var<T> fuse(Var<T> f_ref, Var<T> f_dst, Var<T> f_jnd);

// sum(w_i q_i) / sum(w_i).
template <typename T>
Var<T> pool_score(Var<T> w, Var<T> q);
double pool_score(std::span<const double> w, std::span<const double> q);

template <typename T>
std::size_t count_parameters(const ParameterSet<T>& params) {
  return params.scalar_count();
}

/// Plain-value forward result for one image.
struct Prediction {
  std::vector<double> weights;
  std::vector<double> qualities;
  std::vector<Rect> regions;
  double score = 0.0;
};

// Evaluates quads in chunks (no gradients) and pools them into one score.
Prediction predict(Network<float>& net, std::span<const PatchQuad> quads, std::size_t chunk = 32);

// Parameters, optional Adam moments (adam.m.* / adam.v.*) and metadata
// including the network description and its hash.
Checkpoint make_checkpoint(const Network<float>& net, const AdamState<float>* adam = nullptr,
                           std::map<std::string, std::string> meta = {});
// Rebuilds the network recorded in a checkpoint after verifying its config hash.
Network<float> network_from_checkpoint(const Checkpoint& ckpt);
// Restores Adam moments and step counter if present, else a fresh state.
AdamState<float> adam_from_checkpoint(const Checkpoint& ckpt, const ParameterSet<float>& params, AdamOptions opts);

}  // namespace salcar
