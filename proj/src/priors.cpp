#include "salcar/priors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "salcar/errors.hpp"

namespace salcar {

std::array<double, 64> JndModelParams::default_base_thresholds() {
  static constexpr std::array<int, 64> kJpegLuma = {
      16, 11, 10, 16, 24,  40,  51,  61,  12, 12, 14, 19, 26,  58,  60,  55,   //
      14, 13, 16, 24, 40,  57,  69,  56,  14, 17, 22, 29, 51,  87,  80,  62,   //
      18, 22, 37, 56, 68,  109, 103, 77,  24, 35, 55, 64, 81,  104, 113, 92,   //
      49, 64, 78, 87, 103, 121, 120, 101, 72, 92, 95, 98, 112, 100, 103, 99};
  std::array<double, 64> t{};
  for (std::size_t i = 0; i < 64; ++i) t[i] = 0.5 * kJpegLuma[i];
  return t;
}

void JndModelParams::validate() const {
  if (!(beta > 0.0)) throw ConfigError("JND beta must be positive");
  for (double t : base_thresholds) {
    if (!(t > 0.0)) throw ConfigError("JND base thresholds must be positive");
  }
  if (!(luminance_center > 0.0) || luminance_gain < 0.0) throw ConfigError("invalid JND luminance parameters");
  if (!(masking_reference > 0.0) || masking_exponent < 0.0) throw ConfigError("invalid JND masking parameters");
}

namespace {

void require_same_dims(const Plane& a, const Plane& b, const char* op) {
  if (a.width != b.width || a.height != b.height) {
    throw ShapeError(std::string(op) + ": image dimensions differ (" + std::to_string(a.width) + "x" +
                     std::to_string(a.height) + " vs " + std::to_string(b.width) + "x" +
                     std::to_string(b.height) + ")");
  }
}

struct Dct8 {
  double basis[8][8];  // basis[u][x]
  Dct8() {
    for (int u = 0; u < 8; ++u) {
      const double a = u == 0 ? std::sqrt(1.0 / 8.0) : std::sqrt(2.0 / 8.0);
      for (int x = 0; x < 8; ++x) basis[u][x] = a * std::cos((2 * x + 1) * u * std::numbers::pi / 16.0);
    }
  }
  void forward(const double in[64], double out[64]) const {
    double tmp[64];
    for (int y = 0; y < 8; ++y) {
      for (int v = 0; v < 8; ++v) {
        double s = 0;
        for (int x = 0; x < 8; ++x) s += basis[v][x] * in[y * 8 + x];
        tmp[y * 8 + v] = s;
      }
    }
    for (int u = 0; u < 8; ++u) {
      for (int v = 0; v < 8; ++v) {
        double s = 0;
        for (int y = 0; y < 8; ++y) s += basis[u][y] * tmp[y * 8 + v];
        out[u * 8 + v] = s;
      }
    }
  }
};

double pixel_clamped(const Plane& img, std::size_t row, std::size_t col) {
  return img.at(std::min(row, img.height - 1), std::min(col, img.width - 1));
}

}  // namespace

PriorMap compute_sid_map(const GrayImage& ref, const GrayImage& dst) {
  require_same_dims(ref, dst, "compute_sid_map");
  PriorMap out(ref.width, ref.height);
  float peak = 0.0f;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    const float d = ref.values[i] - dst.values[i];
    out.values[i] = d * d;
    peak = std::max(peak, out.values[i]);
  }
  if (peak > 0.0f) {
    for (auto& v : out.values) v /= peak;
  }
  return out;
}

Plane mbd_distance(const GrayImage& img, int passes) {
  if (passes < 2 || passes % 2 != 0) throw ShapeError("mbd: passes must be an even count >= 2");
  if (img.width < 3 || img.height < 3) throw ShapeError("mbd: image must be at least 3x3");
  const std::size_t w = img.width, h = img.height;
  constexpr float kInf = std::numeric_limits<float>::infinity();
  Plane dist(w, h, kInf);
  std::vector<float> hi(img.values), lo(img.values);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      if (y == 0 || x == 0 || y == h - 1 || x == w - 1) dist.at(y, x) = 0.0f;
    }
  }
  auto relax = [&](std::size_t p, std::size_t q) {
    const float v = img.values[p];
    const float u = std::max(hi[q], v);
    const float l = std::min(lo[q], v);
    if (u - l < dist.values[p]) {
      dist.values[p] = u - l;
      hi[p] = u;
      lo[p] = l;
    }
  };
  for (int pass = 0; pass < passes; ++pass) {
    if (pass % 2 == 0) {
      for (std::size_t y = 1; y + 1 < h; ++y) {
        for (std::size_t x = 1; x + 1 < w; ++x) {
          const std::size_t p = y * w + x;
          relax(p, p - w);
          relax(p, p - 1);
        }
      }
    } else {
      for (std::size_t y = h - 1; y-- > 1;) {
        for (std::size_t x = w - 1; x-- > 1;) {
          const std::size_t p = y * w + x;
          relax(p, p + w);
          relax(p, p + 1);
        }
      }
    }
  }
  return dist;
}

PriorMap compute_saliency_mbd(const GrayImage& img, int passes) {
  Plane dist = mbd_distance(img, passes);
  PriorMap out(img.width, img.height);
  float peak = 0.0f;
  for (float v : dist.values) peak = std::max(peak, v);
  if (peak > 0.0f) {
    for (std::size_t i = 0; i < dist.size(); ++i) out.values[i] = dist.values[i] / peak;
  }
  return out;
}

PriorMap compute_jnd_probability(const GrayImage& ref, const GrayImage& dst, const JndModelParams& params) {
  require_same_dims(ref, dst, "compute_jnd_probability");
  params.validate();
  static const Dct8 dct;
  const std::size_t bw = (ref.width + 7) / 8, bh = (ref.height + 7) / 8;
  PriorMap out(ref.width, ref.height);
  double rb[64], db[64], rc[64], dc[64];
  for (std::size_t by = 0; by < bh; ++by) {
    for (std::size_t bx = 0; bx < bw; ++bx) {
      double mean = 0;
      for (std::size_t y = 0; y < 8; ++y) {
        for (std::size_t x = 0; x < 8; ++x) {
          rb[y * 8 + x] = pixel_clamped(ref, by * 8 + y, bx * 8 + x);
          db[y * 8 + x] = pixel_clamped(dst, by * 8 + y, bx * 8 + x);
          mean += rb[y * 8 + x];
        }
      }
      mean /= 64.0;
      dct.forward(rb, rc);
      dct.forward(db, dc);
      double ac_energy = 0;
      for (int i = 1; i < 64; ++i) ac_energy += rc[i] * rc[i];
      const double ac_rms = std::sqrt(ac_energy / 63.0);
      const double lum_dev = (mean - params.luminance_center) / params.luminance_center;
      const double lum = 1.0 + params.luminance_gain * lum_dev * lum_dev;
      const double mask = std::max(1.0, std::pow(ac_rms / params.masking_reference, params.masking_exponent));
      // Noisy-OR over coefficients: 1 - prod(1 - p_uv) = 1 - exp(-sum (|dC|/T)^beta).
      double hazard = 0;
      for (int i = 0; i < 64; ++i) {
        const double t = params.base_thresholds[i] * lum * mask;
        hazard += std::pow(std::abs(dc[i] - rc[i]) / t, params.beta);
      }
      const float p = static_cast<float>(std::clamp(-std::expm1(-hazard), 0.0, 1.0));
      for (std::size_t y = by * 8; y < std::min(by * 8 + 8, ref.height); ++y) {
        for (std::size_t x = bx * 8; x < std::min(bx * 8 + 8, ref.width); ++x) out.at(y, x) = p;
      }
    }
  }
  return out;
}

PriorMap load_prior(const std::filesystem::path& path) {
  const RasterFile r = read_raster(path);
  if (r.channels != 1) {
    throw IoError("prior map must be single-channel grayscale, got " + std::to_string(r.channels) +
                  " channels: " + path.string());
  }
  PriorMap out(r.width, r.height);
  for (std::size_t i = 0; i < r.pixels.size(); ++i) out.values[i] = static_cast<float>(r.pixels[i]) / 255.0f;
  return out;
}

void save_prior(const std::filesystem::path& path, const PriorMap& map) {
  Plane scaled(map.width, map.height);
  for (std::size_t i = 0; i < map.size(); ++i) scaled.values[i] = std::clamp(map.values[i], 0.0f, 1.0f) * 255.0f;
  save_gray_image(path, scaled);
}

}  // namespace salcar
