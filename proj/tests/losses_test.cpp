#include <doctest.h>

#include <random>

#include "salcar/losses.hpp"
#include "support/gradcheck.hpp"

using namespace salcar;
using salcar::testing::check_graph;
using salcar::testing::random_tensor;

namespace {

// Brute-force Eq.-style pair sum written out independently.
double brute_rank(const std::vector<double>& s, const std::vector<double>& f, double eps) {
  double total = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (j <= i) continue;
      const double ds = s[i] - s[j], df = f[i] - f[j];
      const double v = -ds * df / (std::abs(ds) + eps);
      total += v > 0 ? v : 0;
    }
  return total;
}

}  // namespace

TEST_CASE("weight normalization") {
  const std::vector<double> four{1, 1, 1, 1}, two{2}, mixed{1, 3}, bad{1, 0};
  CHECK(normalize_weights(four) == std::vector<double>{0.25, 0.25, 0.25, 0.25});
  CHECK(normalize_weights(two) == std::vector<double>{1.0});
  CHECK(normalize_weights(mixed) == std::vector<double>{0.25, 0.75});
  CHECK_THROWS(normalize_weights(bad));
}

TEST_CASE("saliency significance") {
  const PriorMap uniform(16, 16, 0.3f);
  const Rect quarter[] = {{0, 0, 4, 4}};
  CHECK(saliency_significance(uniform, quarter)[0] == doctest::Approx(1.0 / 16));

  std::vector<Rect> tiles;
  for (std::size_t r = 0; r < 16; r += 4)
    for (std::size_t c = 0; c < 16; c += 8) tiles.push_back({r, c, 4, 8});
  PriorMap varied(16, 16);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<float> u(0, 1);
  for (auto& v : varied.values) v = u(rng);
  double sum = 0;
  for (double v : saliency_significance(varied, tiles)) sum += v;
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));

  PriorMap hot(4, 4);
  hot.at(1, 1) = 1.0f;
  const Rect patches[] = {{0, 0, 2, 2}, {2, 2, 2, 2}};
  const auto v = saliency_significance(hot, patches);
  CHECK(v[0] == 1.0);
  CHECK(v[1] == 0.0);

  CHECK_THROWS(saliency_significance(PriorMap(4, 4), patches));
  const Rect outside[] = {{3, 3, 2, 2}};
  CHECK_THROWS(saliency_significance(hot, outside));
}

TEST_CASE("saliency loss") {
  const std::vector<double> v{0.25, 0.75};
  CHECK(saliency_loss(std::vector<double>{1, 3}, v) == 0.0);
  CHECK(saliency_loss(std::vector<double>{1, 1e-300}, std::vector<double>{0, 1}) == doctest::Approx(1.0));
  CHECK(saliency_loss(std::vector<double>{1, 3}, std::vector<double>{0.5, 0.5}) == doctest::Approx(0.25));
  CHECK_THROWS(saliency_loss(std::vector<double>{1, 3}, std::vector<double>{1}));

  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.01, 1);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + trial % 9;
    std::vector<double> w(n), p(n);
    for (auto& x : w) x = u(rng);
    for (auto& x : p) x = u(rng);
    const auto vn = normalize_weights(p);
    CHECK(saliency_loss(w, vn) <= 2.0 / n + 1e-12);
  }
}

TEST_CASE("pairwise rank loss") {
  CHECK(pairwise_rank_loss(3, 1, 0.8, 0.2, 1e-6) == 0.0);
  const double d = pairwise_rank_loss(3, 1, 0.2, 0.8, 1e-6);
  CHECK(d == doctest::Approx(2 * 0.6 / (2 + 1e-6)).epsilon(1e-14));
  CHECK(d < 0.6);
  CHECK(0.6 - d < 1e-6);
  CHECK(pairwise_rank_loss(3, 1, 0.5, 0.5, 1e-6) == 0.0);
  CHECK(pairwise_rank_loss(2, 2, 0.1, 0.9, 1e-6) == 0.0);

  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-5, 5);
  for (int trial = 0; trial < 1000; ++trial) {
    const double sx = u(rng), sy = u(rng), fx = u(rng), fy = u(rng);
    const double l = pairwise_rank_loss(sx, sy, fx, fy, 1e-6);
    CHECK(l >= 0.0);
    if ((sx - sy) * (fx - fy) >= 0) {
      CHECK(l == 0.0);
    } else {
      CHECK(l < std::abs(fx - fy));
      CHECK(pairwise_rank_loss(sx, sy, fx, fy, 1e-3) <= l);
      CHECK(pairwise_rank_loss(sx, sy, fx, fy, 1e-12) == doctest::Approx(std::abs(fx - fy)).epsilon(1e-9));
    }
  }
}

TEST_CASE("batch rank loss") {
  const std::vector<double> s{1, 2, 3, 4};
  CHECK(batch_rank_loss(s, std::vector<double>{0.1, 0.2, 0.5, 0.9}, 1e-6) == 0.0);
  CHECK(rank_loss_terms(s, s, 1e-6).size() == 6);
  const std::vector<double> rev{4, 3, 2, 1};
  const double l = batch_rank_loss(s, rev, 1e-6);
  CHECK(l == doctest::Approx(brute_rank(s, rev, 1e-6)).epsilon(1e-14));
  CHECK(l < 10.0);
  CHECK(l == doctest::Approx(10.0).epsilon(1e-5));
  CHECK(rank_loss_terms(std::vector<double>(5, 1.0), std::vector<double>(5, 1.0), 1e-6).size() == 10);
  CHECK_THROWS(batch_rank_loss(std::vector<double>{1}, std::vector<double>{1}, 1e-6));
  CHECK_THROWS(batch_rank_loss(s, std::vector<double>{1, 2}, 1e-6));
}

TEST_CASE("mae and total loss") {
  CHECK(mae_loss(std::vector<double>{1, 2}, std::vector<double>{1, 2}) == 0.0);
  CHECK(mae_loss(std::vector<double>{1, 3}, std::vector<double>{2, 2}) == 1.0);
  CHECK(mae_loss(std::vector<double>{5}, std::vector<double>{4.5}) == 0.5);
  CHECK_THROWS(mae_loss(std::vector<double>{5}, std::vector<double>{4.5, 1}));

  const LossWeights w;
  CHECK(total_loss(0, 0, 0, w) == 0.0);
  CHECK(total_loss(1, 1, 1, w) == 12.0);
  CHECK(total_loss(0.5, 0.1, 0.2, w) == doctest::Approx(1.7).epsilon(1e-15));
  LossWeights neg;
  neg.beta = -1;
  CHECK_THROWS(neg.validate());
}

TEST_CASE("differentiable losses agree with the plain versions and their gradients") {
  std::mt19937_64 rng(6);
  const std::vector<double> scores{1.0, 4.0, 2.5, 7.0};
  const std::vector<double> v{0.1, 0.4, 0.3, 0.2};
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    CAPTURE(seed);
    const TensorD preds = random_tensor({4}, rng, 0, 8);
    const TensorD w = random_tensor({4}, rng, 0.2, 2.0);
    Tape<double> tape;
    const auto p = tape.constant(preds), wv = tape.constant(w);
    CHECK(mae_loss(p, scores).value()[0] == doctest::Approx(mae_loss(preds.vec(), scores)).epsilon(1e-14));
    CHECK(batch_rank_loss(p, scores, 1e-6).value()[0] ==
          doctest::Approx(batch_rank_loss(scores, preds.vec(), 1e-6)).epsilon(1e-14));
    CHECK(saliency_loss(wv, v).value()[0] == doctest::Approx(saliency_loss(w.vec(), v)).epsilon(1e-14));
    const TensorD nw = normalize_weights(wv).value();
    const auto plain = normalize_weights(w.vec());
    for (std::size_t i = 0; i < 4; ++i) CHECK(nw[i] == doctest::Approx(plain[i]).epsilon(1e-14));

    const LossWeights lw;
    const auto r = check_graph(
        {preds, w},
        [&](Tape<double>&, auto& x, auto*) {
          return total_loss(mae_loss(x[0], scores), batch_rank_loss(x[0], scores, 1e-6), saliency_loss(x[1], v), lw);
        },
        seed);
    CHECK(r.rel_error <= 1e-3);
    CHECK(r.skipped * 10 <= r.coords);
  }
}
