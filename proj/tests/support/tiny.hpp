#pragma once

#include <random>
#include <vector>

#include "salcar/config.hpp"
#include "salcar/dataset.hpp"
#include "support/synthetic.hpp"

namespace salcar::testing {

// Smallest network that still exercises every block: 16x16 patches.
inline NetworkConfig tiny_network() {
  NetworkConfig n;
  n.patch_size = 16;
  n.stem_channels = 2;
  n.sal_channels = {2, 2};
  n.salcar_channels = {4, 4};
  n.splitcar_channels = {4, 4};
  n.head_hidden = 3;
  n.ca_ratio = 2;
  n.split_count = 2;
  return n;
}

inline std::vector<PatchQuad> textured_quads(std::size_t count, std::size_t patch, std::uint64_t seed,
                                             double blur = 1.5) {
  const ColorImage ref = textured_image(patch * count, patch, seed);
  const QuadSource src = make_quad_source(ref, gaussian_blur(ref, blur), TrainConfig{});
  std::vector<PatchQuad> quads;
  for (std::size_t i = 0; i < count; ++i) quads.push_back(cut_quad(src, 0, i * patch, patch));
  return quads;
}

}  // namespace salcar::testing
