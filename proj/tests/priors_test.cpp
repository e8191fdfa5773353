#include <doctest.h>

#include <filesystem>
#include <random>

#include "salcar/errors.hpp"
#include "salcar/priors.hpp"
#include "support/oracles.hpp"

using namespace salcar;
namespace fs = std::filesystem;

namespace {

GrayImage random_gray(std::size_t w, std::size_t h, std::uint64_t seed, int levels = 256) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> u(0, levels - 1);
  GrayImage g(w, h);
  for (auto& v : g.values) v = static_cast<float>(u(rng) * (255 / std::max(1, levels - 1)));
  return g;
}

// Left half flat at 128, right half a fine checker-like texture.
GrayImage half_flat_half_texture(std::size_t size = 64) {
  GrayImage g(size, size, 128.0f);
  for (std::size_t r = 0; r < size; ++r)
    for (std::size_t c = size / 2; c < size; ++c) g.at(r, c) = ((r / 1 + c / 1) % 2) ? 200.0f : 56.0f;
  return g;
}

GrayImage add_noise(const GrayImage& img, double sigma, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, sigma);
  GrayImage out = img;
  for (auto& v : out.values) v = static_cast<float>(std::clamp(v + n(rng), 0.0, 255.0));
  return out;
}

std::pair<double, double> half_means(const PriorMap& m) {
  double left = 0, right = 0;
  for (std::size_t r = 0; r < m.height; ++r)
    for (std::size_t c = 0; c < m.width; ++c) (c < m.width / 2 ? left : right) += m.at(r, c);
  const double n = m.height * (m.width / 2.0);
  return {left / n, right / n};
}

void check_unit_range(const Plane& m, std::size_t w, std::size_t h) {
  CHECK(m.width == w);
  CHECK(m.height == h);
  for (float v : m.values) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "salcar_priors_test";
  fs::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("sid map") {
  const GrayImage a = random_gray(10, 7, 1);
  for (float v : compute_sid_map(a, a).values) CHECK(v == 0.0f);

  GrayImage b = a;
  b.at(3, 4) += 9.0f;
  const PriorMap one = compute_sid_map(a, b);
  int nonzero = 0;
  for (float v : one.values) nonzero += v != 0.0f;
  CHECK(nonzero == 1);
  CHECK(one.at(3, 4) == 1.0f);

  GrayImage c = a;
  for (auto& v : c.values) v += 3.0f;
  for (float v : compute_sid_map(a, c).values) CHECK(v == 1.0f);

  const GrayImage d = random_gray(10, 7, 2);
  CHECK(compute_sid_map(a, d).values == compute_sid_map(d, a).values);
  check_unit_range(compute_sid_map(a, d), 10, 7);
  CHECK_THROWS_AS(compute_sid_map(a, random_gray(7, 10, 3)), ShapeError);
}

TEST_CASE("mbd saliency basics") {
  for (float v : compute_saliency_mbd(GrayImage(12, 9, 77.0f)).values) CHECK(v == 0.0f);

  const GrayImage img = random_gray(20, 15, 4);
  const PriorMap s = compute_saliency_mbd(img);
  check_unit_range(s, 20, 15);
  for (std::size_t r = 0; r < 15; ++r)
    for (std::size_t c = 0; c < 20; ++c)
      if (r == 0 || c == 0 || r == 14 || c == 19) CHECK(s.at(r, c) == 0.0f);

  CHECK_THROWS(compute_saliency_mbd(GrayImage(2, 8, 1.0f)));
  CHECK_THROWS(compute_saliency_mbd(img, 3));
  CHECK_THROWS(compute_saliency_mbd(img, 0));
}

TEST_CASE("bright disc is salient against its border ring") {
  GrayImage img(64, 64, 20.0f);
  for (std::size_t r = 0; r < 64; ++r)
    for (std::size_t c = 0; c < 64; ++c)
      if ((r - 31.5) * (r - 31.5) + (c - 31.5) * (c - 31.5) < 15.0 * 15.0) img.at(r, c) = 200.0f;
  const PriorMap s = compute_saliency_mbd(img);
  const auto exact = salcar::testing::exact_mbd(img);
  double inside = 0, ring = 0, exact_inside = 0;
  int ni = 0, nr = 0;
  for (std::size_t r = 0; r < 64; ++r)
    for (std::size_t c = 0; c < 64; ++c) {
      if (img.at(r, c) == 200.0f) {
        inside += s.at(r, c);
        exact_inside += exact[r * 64 + c];
        ++ni;
      }
      if (r < 3 || c < 3 || r > 60 || c > 60) {
        ring += s.at(r, c);
        ++nr;
      }
    }
  CHECK(inside / ni > 2 * ring / nr);
  CHECK(exact_inside / ni == doctest::Approx(180.0));
}

TEST_CASE("more raster passes never increase the barrier and stay above the exact distance") {
  for (std::uint64_t seed = 1; seed <= 6; ++seed) {
    CAPTURE(seed);
    const GrayImage img = random_gray(14, 11, seed, seed % 2 ? 6 : 256);
    const auto exact = salcar::testing::exact_mbd(img);
    Plane prev = mbd_distance(img, 2);
    for (int passes : {4, 6, 8, 20}) {
      const Plane cur = mbd_distance(img, passes);
      for (std::size_t i = 0; i < cur.size(); ++i) {
        CHECK(cur.values[i] <= prev.values[i]);
        CHECK(exact[i] <= cur.values[i] + 1e-4);
      }
      prev = cur;
    }
  }
}

TEST_CASE("jnd probability") {
  const GrayImage flat = half_flat_half_texture();
  for (float v : compute_jnd_probability(flat, flat).values) CHECK(v == 0.0f);

  const PriorMap noisy = compute_jnd_probability(flat, add_noise(flat, 10.0, 9));
  check_unit_range(noisy, 64, 64);
  const auto [nf, nt] = half_means(noisy);
  CHECK(nf > nt);

  const PriorMap blurred = compute_jnd_probability(flat, gaussian_blur(flat, 2.0));
  const auto [bf, bt] = half_means(blurred);
  CHECK(bt > bf);

  CHECK_THROWS_AS(compute_jnd_probability(flat, GrayImage(64, 32, 1.0f)), ShapeError);

  // Sizes that are not multiples of 8 are handled and every pixel of a block agrees.
  const GrayImage odd = random_gray(21, 13, 5);
  const PriorMap p = compute_jnd_probability(odd, add_noise(odd, 4.0, 1));
  check_unit_range(p, 21, 13);
  CHECK(p.at(0, 0) == p.at(7, 7));
}

TEST_CASE("jnd probability is monotone in distortion magnitude") {
  std::mt19937_64 rng(12);
  std::normal_distribution<double> n(0.0, 1.0);
  GrayImage ref = random_gray(32, 24, 6);
  for (auto& v : ref.values) v = 60.0f + v * 0.5f;
  std::vector<float> noise(ref.size());
  for (auto& v : noise) v = static_cast<float>(n(rng));
  PriorMap prev(32, 24);
  for (float lambda : {0.5f, 1.0f, 2.0f, 4.0f, 8.0f}) {
    GrayImage dst = ref;
    for (std::size_t i = 0; i < dst.size(); ++i) dst.values[i] += lambda * noise[i];
    const PriorMap p = compute_jnd_probability(ref, dst);
    for (std::size_t i = 0; i < p.size(); ++i) CHECK(p.values[i] >= prev.values[i]);
    prev = p;
  }
}

TEST_CASE("jnd parameters are validated") {
  JndModelParams p;
  CHECK(p.base_thresholds[0] == 8.0);
  p.beta = 0.0;
  CHECK_THROWS(p.validate());
  JndModelParams q;
  q.base_thresholds[5] = 0.0;
  CHECK_THROWS(q.validate());
}

TEST_CASE("prior files") {
  save_gray_image(scratch("white.png"), GrayImage(5, 4, 255.0f));
  for (float v : load_prior(scratch("white.png")).values) CHECK(v == 1.0f);
  save_gray_image(scratch("black.bmp"), GrayImage(5, 4, 0.0f));
  for (float v : load_prior(scratch("black.bmp")).values) CHECK(v == 0.0f);

  PriorMap m(9, 6);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (auto& v : m.values) v = u(rng);
  save_prior(scratch("m.png"), m);
  const PriorMap back = load_prior(scratch("m.png"));
  REQUIRE(back.size() == m.size());
  for (std::size_t i = 0; i < m.size(); ++i) CHECK(std::abs(back.values[i] - m.values[i]) <= 1.0f / 255 + 1e-6f);

  save_color_image(scratch("color.png"), ColorImage(4, 4, 10.0f));
  CHECK_THROWS_AS(load_prior(scratch("color.png")), IoError);
  CHECK_THROWS_AS(load_prior(scratch("missing.png")), IoError);
}
