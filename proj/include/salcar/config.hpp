#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "salcar/losses.hpp"
#include "salcar/priors.hpp"

namespace salcar {

// Configuration of one SalCAR or SplitCAR block.
struct BlockConfig {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t ca_ratio = 16;
  std::size_t split_count = 32;
  bool enable_ca = true;
  bool enable_saliency_fusion = true;
  bool enable_skips = true;
  bool enable_split = true;
};

enum class WeightActivation { softplus, exp };

struct NetworkConfig {
  std::size_t patch_size = 32;
  std::size_t image_channels = 3;
  std::size_t stem_channels = 32;
  std::vector<std::size_t> sal_channels{32, 64};
  std::vector<std::size_t> salcar_channels{64, 128};
  std::vector<std::size_t> splitcar_channels{256, 512};
  std::size_t head_hidden = 512;
  std::size_t ca_ratio = 16;
  std::size_t split_count = 32;
  bool enable_ca = true;
  bool enable_saliency_fusion = true;
  bool enable_skips = true;
  bool enable_split = true;
  double leaky_slope = 0.2;
  WeightActivation weight_activation = WeightActivation::softplus;

  void validate() const;
  // Spatial side of the last feature map.
  std::size_t final_spatial() const;
  // Length of one subnet's flattened feature vector.
  std::size_t feature_length() const;
  BlockConfig block(std::size_t in, std::size_t out) const;

  // Single-line "key=value;..." form; stable across runs and platforms.
  std::string canonical() const;
  // FNV-1a of canonical().
  std::uint64_t hash() const;
};

enum class ScorePolarity { mos, dmos };

struct TrainConfig {
  std::size_t batch_size = 4;
  std::size_t patches_per_image = 32;
  std::size_t max_epochs = 1000;
  double learning_rate = 1e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  LossWeights loss;
  bool resample_patches = true;
  ScorePolarity polarity = ScorePolarity::mos;
  // Reference-image counts "train/val/test"; empty puts every reference in train.
  std::string split_ratios;
  int saliency_passes = 4;
  JndModelParams jnd;

  void validate() const;
};

struct Config {
  NetworkConfig network;
  TrainConfig train;
};

// Parses `key = value` lines; '#' starts a comment. Unknown keys are errors.
Config parse_config(const std::string& text, Config base = {});
// "default" yields the built-in defaults.
Config load_config(const std::string& path_or_default);
std::string config_to_text(const Config& cfg);
NetworkConfig parse_network_canonical(const std::string& canonical);

}  // namespace salcar
