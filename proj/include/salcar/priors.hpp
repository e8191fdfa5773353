#pragma once

#include <array>
#include <filesystem>

#include "salcar/image.hpp"

namespace salcar {

/// Parameters of the DCT-domain JND detection model. Thresholds are in units of
/// orthonormal 8x8 DCT coefficients of [0,255] luma.
struct JndModelParams {
  // Psychometric slope of p = 1 - exp(-(|dC|/T)^beta).
  double beta = 4.0;
  // Base (CSF) threshold per DCT frequency, row = vertical frequency.
  std::array<double, 64> base_thresholds = default_base_thresholds();
  // Luminance adaptation: 1 + gain * ((mean - center) / center)^2.
  double luminance_center = 128.0;
  double luminance_gain = 2.0;
  // Contrast masking: max(1, (ac_rms / reference)^exponent), ac_rms from the reference block.
  double masking_reference = 8.0;
  double masking_exponent = 0.6;

  // JPEG luminance quantization table scaled by 1/2, so the DC threshold is 8,
  // i.e. a change of one gray level in the block mean.
  static std::array<double, 64> default_base_thresholds();
  void validate() const;
};

PriorMap compute_sid_map(const GrayImage& ref, const GrayImage& dst);

// Raw raster-scan minimum barrier distances to the image border (not normalized).
Plane mbd_distance(const GrayImage& img, int passes = 4);
// Distances normalized by their maximum; the outer pixel ring is 0.
PriorMap compute_saliency_mbd(const GrayImage& img, int passes = 4);

PriorMap compute_jnd_probability(const GrayImage& ref, const GrayImage& dst, const JndModelParams& params = {});

// 8-bit grayscale file, values / 255.
PriorMap load_prior(const std::filesystem::path& path);
void save_prior(const std::filesystem::path& path, const PriorMap& map);

}  // namespace salcar
