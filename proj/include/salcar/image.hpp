#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace salcar {

/// Single-channel H x W float raster, row-major.
struct Plane {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<float> values;

  Plane() = default;
  Plane(std::size_t w, std::size_t h, float fill = 0.0f) : width(w), height(h), values(w * h, fill) {}

  float& at(std::size_t row, std::size_t col) { return values[row * width + col]; }
  float at(std::size_t row, std::size_t col) const { return values[row * width + col]; }
  std::size_t size() const { return values.size(); }
};

// Luma in [0,255].
struct GrayImage : Plane {
  using Plane::Plane;
};

// Values in [0,1]: saliency, JND probability and SID maps.
struct PriorMap : Plane {
  using Plane::Plane;
};

/// Planar RGB image with values in [0,255].
struct ColorImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<float> data;  // 3 planes of height*width

  ColorImage() = default;
  ColorImage(std::size_t w, std::size_t h, float fill = 0.0f) : width(w), height(h), data(3 * w * h, fill) {}

  float& at(std::size_t ch, std::size_t row, std::size_t col) { return data[(ch * height + row) * width + col]; }
  float at(std::size_t ch, std::size_t row, std::size_t col) const {
    return data[(ch * height + row) * width + col];
  }

  static ColorImage from_gray(const GrayImage& g);
};

// ITU-R BT.601 luma.
GrayImage to_luma(const ColorImage& img);

GrayImage gaussian_blur(const GrayImage& img, double sigma);
ColorImage gaussian_blur(const ColorImage& img, double sigma);

/// Decoded 8-bit raster: 1 (gray) or 3 (RGB) channels.
struct RasterFile {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 0;
  std::vector<std::uint8_t> pixels;  // interleaved
};

// PNG or BMP chosen by file extension.
RasterFile read_raster(const std::filesystem::path& path);
void write_raster(const std::filesystem::path& path, const RasterFile& raster);

// Any supported file as color (gray files are replicated to three channels).
ColorImage load_color_image(const std::filesystem::path& path);
// Values rounded and clamped to [0,255].
void save_gray_image(const std::filesystem::path& path, const Plane& img);
void save_color_image(const std::filesystem::path& path, const ColorImage& img);

}  // namespace salcar
