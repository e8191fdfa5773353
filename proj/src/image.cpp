#include "salcar/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include "salcar/errors.hpp"

namespace salcar {

ColorImage ColorImage::from_gray(const GrayImage& g) {
  ColorImage out(g.width, g.height);
  for (std::size_t ch = 0; ch < 3; ++ch) {
    std::copy(g.values.begin(), g.values.end(), out.data.begin() + ch * g.size());
  }
  return out;
}

GrayImage to_luma(const ColorImage& img) {
  GrayImage out(img.width, img.height);
  const std::size_t n = img.width * img.height;
  for (std::size_t i = 0; i < n; ++i) {
    out.values[i] = 0.299f * img.data[i] + 0.587f * img.data[n + i] + 0.114f * img.data[2 * n + i];
  }
  return out;
}

namespace {

std::vector<double> gaussian_kernel(double sigma) {
  if (!(sigma > 0.0)) throw ShapeError("gaussian_blur: sigma must be positive");
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * radius + 1);
  double total = 0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    total += k[i + radius];
  }
  for (auto& v : k) v /= total;
  return k;
}

// Separable blur with replicated borders.
void blur_plane(const float* src, float* dst, std::size_t w, std::size_t h, const std::vector<double>& k) {
  const int r = static_cast<int>(k.size() / 2);
  std::vector<float> tmp(w * h);
  auto clampi = [](int v, int hi) { return std::clamp(v, 0, hi); };
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      double acc = 0;
      for (int i = -r; i <= r; ++i) acc += k[i + r] * src[y * w + clampi(static_cast<int>(x) + i, int(w) - 1)];
      tmp[y * w + x] = static_cast<float>(acc);
    }
  }
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      double acc = 0;
      for (int i = -r; i <= r; ++i) acc += k[i + r] * tmp[clampi(static_cast<int>(y) + i, int(h) - 1) * w + x];
      dst[y * w + x] = static_cast<float>(acc);
    }
  }
}

std::string lower_ext(const std::filesystem::path& p) {
  std::string e = p.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return std::tolower(c); });
  return e;
}

RasterFile read_png(const std::filesystem::path& path) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    throw IoError("cannot read PNG " + path.string() + ": " + image.message);
  }
  RasterFile out;
  const bool color = (image.format & PNG_FORMAT_FLAG_COLOR) != 0;
  const bool alpha = (image.format & PNG_FORMAT_FLAG_ALPHA) != 0;
  if (alpha) {
    png_image_free(&image);
    throw IoError("unsupported PNG with alpha channel: " + path.string());
  }
  image.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  out.width = image.width;
  out.height = image.height;
  out.channels = color ? 3 : 1;
  out.pixels.resize(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, out.pixels.data(), 0, nullptr)) {
    std::string msg = image.message;
    png_image_free(&image);
    throw IoError("cannot decode PNG " + path.string() + ": " + msg);
  }
  return out;
}

void write_png(const std::filesystem::path& path, const RasterFile& r) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(r.width);
  image.height = static_cast<png_uint_32>(r.height);
  image.format = r.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&image, path.c_str(), 0, r.pixels.data(), 0, nullptr)) {
    throw IoError("cannot write PNG " + path.string() + ": " + image.message);
  }
}

std::uint32_t le32(const std::uint8_t* p) {
  return p[0] | (p[1] << 8) | (p[2] << 16) | (std::uint32_t(p[3]) << 24);
}
std::uint16_t le16(const std::uint8_t* p) { return static_cast<std::uint16_t>(p[0] | (p[1] << 8)); }

RasterFile read_bmp(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open BMP " + path.string());
  std::vector<std::uint8_t> b((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (b.size() < 54 || b[0] != 'B' || b[1] != 'M') throw IoError("not a BMP file: " + path.string());
  const std::uint32_t offset = le32(&b[10]);
  const std::uint32_t header = le32(&b[14]);
  const auto width = static_cast<std::int32_t>(le32(&b[18]));
  const auto height_raw = static_cast<std::int32_t>(le32(&b[22]));
  const std::uint16_t bpp = le16(&b[28]);
  const std::uint32_t compression = le32(&b[30]);
  if (compression != 0) throw IoError("compressed BMP not supported: " + path.string());
  if (bpp != 8 && bpp != 24) throw IoError("BMP must be 8- or 24-bit: " + path.string());
  if (width <= 0 || height_raw == 0) throw IoError("invalid BMP dimensions: " + path.string());
  const bool bottom_up = height_raw > 0;
  const std::size_t w = static_cast<std::size_t>(width);
  const std::size_t h = static_cast<std::size_t>(bottom_up ? height_raw : -height_raw);
  const std::size_t stride = ((w * bpp / 8) + 3) & ~std::size_t{3};
  if (offset + stride * h > b.size()) throw IoError("truncated BMP: " + path.string());

  RasterFile out;
  out.width = w;
  out.height = h;
  if (bpp == 24) {
    out.channels = 3;
    out.pixels.resize(w * h * 3);
    for (std::size_t y = 0; y < h; ++y) {
      const std::uint8_t* row = &b[offset + (bottom_up ? h - 1 - y : y) * stride];
      for (std::size_t x = 0; x < w; ++x) {
        out.pixels[(y * w + x) * 3 + 0] = row[3 * x + 2];
        out.pixels[(y * w + x) * 3 + 1] = row[3 * x + 1];
        out.pixels[(y * w + x) * 3 + 2] = row[3 * x + 0];
      }
    }
    return out;
  }
  std::uint32_t colors = le32(&b[46]);
  if (colors == 0) colors = 256;
  const std::size_t pal = 14 + header;
  if (pal + 4 * colors > b.size()) throw IoError("truncated BMP palette: " + path.string());
  bool gray = true;
  for (std::uint32_t i = 0; i < colors; ++i) {
    const std::uint8_t* e = &b[pal + 4 * i];
    gray = gray && e[0] == e[1] && e[1] == e[2];
  }
  out.channels = gray ? 1 : 3;
  out.pixels.resize(w * h * out.channels);
  for (std::size_t y = 0; y < h; ++y) {
    const std::uint8_t* row = &b[offset + (bottom_up ? h - 1 - y : y) * stride];
    for (std::size_t x = 0; x < w; ++x) {
      const std::uint8_t idx = row[x];
      if (idx >= colors) throw IoError("BMP palette index out of range: " + path.string());
      const std::uint8_t* e = &b[pal + 4 * idx];
      if (gray) {
        out.pixels[y * w + x] = e[0];
      } else {
        for (int c = 0; c < 3; ++c) out.pixels[(y * w + x) * 3 + c] = e[2 - c];
      }
    }
  }
  return out;
}

void put32(std::vector<std::uint8_t>& v, std::uint32_t x) {
  for (int i = 0; i < 4; ++i) v.push_back(static_cast<std::uint8_t>(x >> (8 * i)));
}
void put16(std::vector<std::uint8_t>& v, std::uint16_t x) {
  v.push_back(static_cast<std::uint8_t>(x));
  v.push_back(static_cast<std::uint8_t>(x >> 8));
}

void write_bmp(const std::filesystem::path& path, const RasterFile& r) {
  const std::uint16_t bpp = r.channels == 3 ? 24 : 8;
  const std::size_t stride = ((r.width * bpp / 8) + 3) & ~std::size_t{3};
  const std::uint32_t palette = bpp == 8 ? 256 * 4 : 0;
  const std::uint32_t offset = 54 + palette;
  std::vector<std::uint8_t> b{'B', 'M'};
  put32(b, static_cast<std::uint32_t>(offset + stride * r.height));
  put32(b, 0);
  put32(b, offset);
  put32(b, 40);
  put32(b, static_cast<std::uint32_t>(r.width));
  put32(b, static_cast<std::uint32_t>(r.height));
  put16(b, 1);
  put16(b, bpp);
  put32(b, 0);
  put32(b, static_cast<std::uint32_t>(stride * r.height));
  put32(b, 2835);
  put32(b, 2835);
  put32(b, bpp == 8 ? 256 : 0);
  put32(b, 0);
  if (bpp == 8) {
    for (int i = 0; i < 256; ++i) {
      b.insert(b.end(), {std::uint8_t(i), std::uint8_t(i), std::uint8_t(i), 0});
    }
  }
  for (std::size_t y = r.height; y-- > 0;) {
    std::vector<std::uint8_t> row(stride, 0);
    for (std::size_t x = 0; x < r.width; ++x) {
      if (bpp == 8) {
        row[x] = r.pixels[y * r.width + x];
      } else {
        for (int c = 0; c < 3; ++c) row[3 * x + c] = r.pixels[(y * r.width + x) * 3 + (2 - c)];
      }
    }
    b.insert(b.end(), row.begin(), row.end());
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
  if (!f) throw IoError("failed writing " + path.string());
}

std::uint8_t to_byte(float v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

}  // namespace

GrayImage gaussian_blur(const GrayImage& img, double sigma) {
  GrayImage out(img.width, img.height);
  blur_plane(img.values.data(), out.values.data(), img.width, img.height, gaussian_kernel(sigma));
  return out;
}

ColorImage gaussian_blur(const ColorImage& img, double sigma) {
  ColorImage out(img.width, img.height);
  const auto k = gaussian_kernel(sigma);
  const std::size_t n = img.width * img.height;
  for (std::size_t ch = 0; ch < 3; ++ch) {
    blur_plane(img.data.data() + ch * n, out.data.data() + ch * n, img.width, img.height, k);
  }
  return out;
}

RasterFile read_raster(const std::filesystem::path& path) {
  const auto ext = lower_ext(path);
  if (ext == ".png") return read_png(path);
  if (ext == ".bmp") return read_bmp(path);
  throw IoError("unsupported image extension '" + ext + "' (expected .png or .bmp): " + path.string());
}

void write_raster(const std::filesystem::path& path, const RasterFile& raster) {
  if (raster.channels != 1 && raster.channels != 3) throw IoError("raster must have 1 or 3 channels");
  if (raster.pixels.size() != raster.width * raster.height * raster.channels) {
    throw IoError("raster pixel count does not match its dimensions");
  }
  const auto ext = lower_ext(path);
  if (ext == ".png") return write_png(path, raster);
  if (ext == ".bmp") return write_bmp(path, raster);
  throw IoError("unsupported image extension '" + ext + "' (expected .png or .bmp): " + path.string());
}

ColorImage load_color_image(const std::filesystem::path& path) {
  const RasterFile r = read_raster(path);
  ColorImage out(r.width, r.height);
  const std::size_t n = r.width * r.height;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t ch = 0; ch < 3; ++ch) {
      out.data[ch * n + i] = r.channels == 3 ? r.pixels[i * 3 + ch] : r.pixels[i];
    }
  }
  return out;
}

void save_gray_image(const std::filesystem::path& path, const Plane& img) {
  RasterFile r{img.width, img.height, 1, {}};
  r.pixels.reserve(img.size());
  for (float v : img.values) r.pixels.push_back(to_byte(v));
  write_raster(path, r);
}

void save_color_image(const std::filesystem::path& path, const ColorImage& img) {
  RasterFile r{img.width, img.height, 3, {}};
  const std::size_t n = img.width * img.height;
  r.pixels.resize(3 * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t ch = 0; ch < 3; ++ch) r.pixels[i * 3 + ch] = to_byte(img.data[ch * n + i]);
  }
  write_raster(path, r);
}

}  // namespace salcar
