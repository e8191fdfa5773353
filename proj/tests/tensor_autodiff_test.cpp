#include <doctest.h>

#include <cmath>
#include <cstring>
#include <limits>
#include <random>

#include "salcar/adam.hpp"
#include "salcar/autodiff.hpp"
#include "salcar/checkpoint.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"

using namespace salcar;
using salcar::testing::check_graph;
using salcar::testing::project;
using salcar::testing::random_tensor;

namespace {

std::vector<Var<double>> as_vec(std::initializer_list<Var<double>> v) { return v; }

}  // namespace

TEST_CASE("tensor shape bookkeeping") {
  Tensor t({2, 3, 4, 5});
  CHECK(t.size() == 120);
  CHECK(t.rank() == 4);
  t.at(1, 2, 3, 4) = 7.0f;
  CHECK(t[119] == 7.0f);
  CHECK_THROWS_AS(Tensor({2, 0}), ShapeError);
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<float>(3)), ShapeError);
  CHECK(t.reshaped({120}).shape() == Shape{120});
  CHECK_THROWS_AS(t.reshaped({7}), ShapeError);
  CHECK(shape_string({2, 3}) == "[2x3]");
}

TEST_CASE("conv2d identity kernel returns the input") {
  Tape<float> tape;
  Tensor x({1, 1, 3, 3}, 1.0f);
  x[4] = 5.0f;
  const Tensor y =
      conv2d(tape.constant(x), tape.constant(Tensor({1, 1, 1, 1}, 1.0f)), tape.constant(Tensor({1})), 1, 0).value();
  CHECK(y == x);
}

TEST_CASE("conv2d all-ones 3x3 kernel sums the receptive field") {
  Tape<float> tape;
  auto y = conv2d(tape.constant(Tensor({1, 1, 3, 3}, 1.0f)), tape.constant(Tensor({1, 1, 3, 3}, 1.0f)),
                  tape.constant(Tensor({1})), 1, 1);
  const auto& v = y.value();
  CHECK(v.at(0, 0, 1, 1) == 9.0f);
  CHECK(v.at(0, 0, 0, 0) == 4.0f);
  CHECK(v.at(0, 0, 2, 2) == 4.0f);
  CHECK(v.at(0, 0, 0, 1) == 6.0f);
}

TEST_CASE("conv2d stride 2 halves the spatial size") {
  Tape<float> tape;
  auto y = conv2d(tape.constant(Tensor({1, 5, 4, 4}, 1.0f)), tape.constant(Tensor({3, 5, 1, 1}, 1.0f)),
                  tape.constant(Tensor({3})), 2, 0);
  CHECK(y.shape() == Shape{1, 3, 2, 2});
  auto odd = conv2d(tape.constant(Tensor({1, 1, 5, 5})), tape.constant(Tensor({1, 1, 3, 3})),
                    tape.constant(Tensor({1})), 2, 1);
  CHECK(odd.shape() == Shape{1, 1, 3, 3});
}

TEST_CASE("conv2d matches direct summation") {
  std::mt19937_64 rng(3);
  for (std::size_t k : {1, 3}) {
    for (std::size_t stride : {1, 2}) {
      const TensorD x = random_tensor({2, 3, 6, 6}, rng), w = random_tensor({4, 3, k, k}, rng),
                    b = random_tensor({4}, rng);
      Tape<double> tape;
      auto y = conv2d(tape.constant(x), tape.constant(w), tape.constant(b), stride, k / 2);
      const TensorD want = salcar::testing::direct_conv(x, w, b, stride, k / 2);
      REQUIRE(y.shape() == want.shape());
      for (std::size_t i = 0; i < want.size(); ++i) CHECK(y.value()[i] == doctest::Approx(want[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("conv2d rejects mismatched shapes with the axis named") {
  Tape<float> tape;
  auto x = tape.constant(Tensor({1, 3, 4, 4}));
  try {
    conv2d(x, tape.constant(Tensor({2, 4, 3, 3})), tape.constant(Tensor({2})), 1, 1);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("axis 1") != std::string::npos);
  }
  CHECK_THROWS_AS(conv2d(x, tape.constant(Tensor({2, 3, 3, 3})), tape.constant(Tensor({3})), 1, 1), ShapeError);
  CHECK_THROWS_AS(conv2d(x, tape.constant(Tensor({2, 3, 5, 5})), tape.constant(Tensor({2})), 1, 2), ShapeError);
  CHECK_THROWS_AS(conv2d(x, tape.constant(Tensor({2, 3, 3, 3})), tape.constant(Tensor({2})), 1, 0), ShapeError);
}

TEST_CASE("grouped conv equals per-group convs concatenated") {
  std::mt19937_64 rng(5);
  const TensorD x = random_tensor({2, 4, 4, 4}, rng);
  for (GroupInput mode : {GroupInput::shared, GroupInput::split}) {
    const std::size_t cin = mode == GroupInput::shared ? 4 : 2;
    Tape<double> tape;
    auto xv = tape.constant(x);
    std::vector<Var<double>> ws, bs, parts;
    for (int g = 0; g < 2; ++g) {
      ws.push_back(tape.constant(random_tensor({3, cin, 3, 3}, rng)));
      bs.push_back(tape.constant(random_tensor({3}, rng)));
    }
    for (std::size_t g = 0; g < 2; ++g) {
      Var<double> in = xv;
      if (mode == GroupInput::split) {
        TensorD slice({2, 2, 4, 4});
        for (std::size_t n = 0; n < 2; ++n)
          for (std::size_t c = 0; c < 2; ++c)
            for (std::size_t i = 0; i < 16; ++i) slice[(n * 2 + c) * 16 + i] = x[(n * 4 + g * 2 + c) * 16 + i];
        in = tape.constant(slice);
      }
      parts.push_back(conv2d(in, ws[g], bs[g], 1, 1));
    }
    auto want = concat_channels<double>(parts);
    auto got = grouped_conv2d<double>(xv, ws, bs, 1, 1, mode);
    REQUIRE(got.shape() == want.shape());
    for (std::size_t i = 0; i < got.value().size(); ++i) {
      CHECK(got.value()[i] == doctest::Approx(want.value()[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("maxpool2 forward, ties and errors") {
  Tape<float> tape;
  auto y = maxpool2(tape.constant(Tensor({1, 1, 2, 2}, {1, 2, 3, 4})));
  CHECK(y.value()[0] == 4.0f);
  auto c = maxpool2(tape.constant(Tensor({1, 2, 4, 4}, 2.5f)));
  for (float v : c.value().data()) CHECK(v == 2.5f);
  CHECK_THROWS_AS(maxpool2(tape.constant(Tensor({1, 1, 3, 4}))), ShapeError);

  Tape<double> t2;
  auto x = t2.input(TensorD({1, 1, 2, 2}, 1.0));
  t2.backward(sum(maxpool2(x)));
  CHECK(t2.grad(x).vec() == std::vector<double>{1, 0, 0, 0});
}

TEST_CASE("leaky relu values and slope gradient") {
  Tape<double> tape;
  auto x = tape.input(TensorD({2}, {-1.0, 3.0}));
  auto y = leaky_relu(x, 0.2);
  CHECK(y.value()[0] == doctest::Approx(-0.2));
  CHECK(y.value()[1] == 3.0);
  tape.backward(sum(y));
  CHECK(tape.grad(x)[0] == doctest::Approx(0.2));
  CHECK(tape.grad(x)[1] == 1.0);
}

TEST_CASE("global average pooling and its gradient") {
  Tape<double> tape;
  auto x = tape.input(TensorD({1, 2, 2, 2}, {0, 1, 2, 3, 5, 5, 5, 5}));
  auto y = global_avg_pool(x);
  CHECK(y.shape() == Shape{1, 2});
  CHECK(y.value()[0] == 1.5);
  CHECK(y.value()[1] == 5.0);
  tape.backward(sum(scale(y, 4.0)));
  const TensorD gx = tape.grad(x);
  for (double g : gx.data()) CHECK(g == 1.0);
}

TEST_CASE("fully connected layer") {
  Tape<float> tape;
  auto x = tape.constant(Tensor({1, 2}, {1, 2}));
  CHECK(fully_connected(x, tape.constant(Tensor({1, 2}, {1, 1})), tape.constant(Tensor({1}))).value()[0] == 3.0f);
  const Tensor id = fully_connected(x, tape.constant(Tensor({2, 2}, {1, 0, 0, 1})), tape.constant(Tensor({2}))).value();
  CHECK(id == x.value());
  CHECK_THROWS_AS(fully_connected(x, tape.constant(Tensor({2, 3})), tape.constant(Tensor({2}))), ShapeError);
}

TEST_CASE("concat_channels preserves order and mass") {
  Tape<float> tape;
  auto a = tape.constant(Tensor({1, 1, 2, 2}, 1.0f));
  auto b = tape.constant(Tensor({1, 2, 2, 2}, {2, 2, 2, 2, 3, 3, 3, 3}));
  const Var<float> one[] = {a};
  const Tensor cat1 = concat_channels<float>(one).value();
  CHECK(cat1 == a.value());
  const Var<float> two[] = {a, b};
  auto y = concat_channels<float>(two);
  CHECK(y.shape() == Shape{1, 3, 2, 2});
  CHECK(y.value().at(0, 0, 0, 0) == 1.0f);
  CHECK(y.value().at(0, 1, 0, 0) == 2.0f);
  CHECK(y.value().at(0, 2, 1, 1) == 3.0f);
  const float sy = sum(y).value()[0], sa = sum(a).value()[0], sb = sum(b).value()[0];
  CHECK(sy == sa + sb);
  const Var<float> bad[] = {a, tape.constant(Tensor({1, 1, 4, 4}))};
  CHECK_THROWS_AS(concat_channels<float>(bad), ShapeError);
}

TEST_CASE("elementwise helpers") {
  Tape<float> tape;
  CHECK(sigmoid(tape.constant(Tensor({1}))).value()[0] == 0.5f);
  auto x = tape.constant(Tensor({1, 2, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8}));
  const Tensor scaled = mul_broadcast(x, tape.constant(Tensor({1, 2}, 1.0f))).value();
  CHECK(scaled == x.value());
  const Tensor diff = sub(x, x).value();
  for (float v : diff.data()) CHECK(v == 0.0f);
  CHECK_THROWS_AS(add(x, tape.constant(Tensor({2}))), ShapeError);
}

TEST_CASE("gradients of every primitive match finite differences") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    CAPTURE(seed);
    std::mt19937_64 rng(seed);
    auto check = [&](std::vector<TensorD> in, const salcar::testing::GraphFn& f) {
      const auto r = check_graph(std::move(in), f, seed);
      CHECK(r.rel_error <= 1e-3);
      CHECK(r.skipped * 10 <= r.coords);
      CHECK(r.analytic_norm > 0);
    };
    for (std::size_t k : {1, 3})
      for (std::size_t stride : {1, 2}) {
        check({random_tensor({2, 3, 4, 4}, rng), random_tensor({2, 3, k, k}, rng), random_tensor({2}, rng)},
              [&](Tape<double>&, auto& v, auto*) { return project(conv2d(v[0], v[1], v[2], stride, k / 2), seed); });
      }
    check({random_tensor({1, 4, 3, 3}, rng), random_tensor({2, 2, 3, 3}, rng), random_tensor({2, 2, 3, 3}, rng),
           random_tensor({2}, rng), random_tensor({2}, rng)},
          [&](Tape<double>&, auto& v, auto*) {
            const Var<double> ws[] = {v[1], v[2]};
            const Var<double> bs[] = {v[3], v[4]};
            return project(grouped_conv2d<double>(v[0], ws, bs, 1, 1, GroupInput::split), seed);
          });
    check({random_tensor({2, 2, 4, 4}, rng)}, [&](Tape<double>&, auto& v, auto*) { return project(maxpool2(v[0]), seed); });
    check({random_tensor({3, 4}, rng)}, [&](Tape<double>&, auto& v, auto*) { return project(leaky_relu(v[0], 0.2), seed); });
    check({random_tensor({3, 4}, rng)}, [&](Tape<double>&, auto& v, auto*) { return project(relu(v[0]), seed); });
    check({random_tensor({3, 4}, rng)}, [&](Tape<double>&, auto& v, auto*) { return project(sigmoid(v[0]), seed); });
    check({random_tensor({3, 4}, rng)}, [&](Tape<double>&, auto& v, auto*) { return project(softplus(v[0]), seed); });
    check({random_tensor({3, 4}, rng)}, [&](Tape<double>&, auto& v, auto*) { return project(exponential(v[0]), seed); });
    check({random_tensor({3, 4}, rng)}, [&](Tape<double>&, auto& v, auto*) { return project(abs(v[0]), seed); });
    check({random_tensor({2, 3, 2, 2}, rng)},
          [&](Tape<double>&, auto& v, auto*) { return project(global_avg_pool(v[0]), seed); });
    check({random_tensor({3, 5}, rng), random_tensor({4, 5}, rng), random_tensor({4}, rng)},
          [&](Tape<double>&, auto& v, auto*) { return project(fully_connected(v[0], v[1], v[2]), seed); });
    check({random_tensor({1, 1, 2, 2}, rng), random_tensor({1, 2, 2, 2}, rng)}, [&](Tape<double>&, auto& v, auto*) {
      const Var<double> xs[] = {v[0], v[1]};
      return project(concat_channels<double>(xs), seed);
    });
    check({random_tensor({2, 3, 2, 2}, rng), random_tensor({2, 3}, rng)},
          [&](Tape<double>&, auto& v, auto*) { return project(mul_broadcast(v[0], v[1]), seed); });
    check({random_tensor({3, 2}, rng), random_tensor({3, 2}, rng)}, [&](Tape<double>&, auto& v, auto*) {
      return project(add(mul(v[0], v[1]), sub(v[0], scale(v[1], 0.3))), seed);
    });
    check({random_tensor({4}, rng), random_tensor({1}, rng, 0.5, 2.0)},
          [&](Tape<double>&, auto& v, auto*) { return project(div_scalar(add_scalar(v[0], 0.1), v[1]), seed); });
    check({random_tensor({2, 3}, rng)}, [&](Tape<double>&, auto& v, auto*) {
      const Var<double> xs[] = {select(v[0], 1), select(v[0], 4), mean(v[0])};
      return project(reshape(stack<double>(xs), {3, 1}), seed);
    });
  }
}

TEST_CASE("inputs off the output path receive exactly zero gradient") {
  Tape<double> tape;
  auto a = tape.input(TensorD({3}, {1, 2, 3}));
  auto b = tape.input(TensorD({3}, {4, 5, 6}));
  tape.backward(sum(mul(a, a)));
  const TensorD gb = tape.grad(b);
  for (double g : gb.data()) CHECK(g == 0.0);

  ParameterSet<double> ps;
  ps.add("used", TensorD({2}, 1.0));
  ps.add("unused", TensorD({2}, 1.0));
  Tape<double> t2;
  Binding<double> bind(t2, ps);
  t2.backward(sum(bind["used"]));
  CHECK(ps.at("unused").grad_ready);
  for (double g : ps.at("unused").grad.data()) CHECK(g == 0.0);
  CHECK_THROWS_AS(bind["missing"], std::invalid_argument);
}

TEST_CASE("backward needs a single-element output") {
  Tape<double> tape;
  auto a = tape.input(TensorD({3}, 1.0));
  CHECK_THROWS_AS(tape.backward(a), ShapeError);
}

TEST_CASE("forward passes are deterministic") {
  std::mt19937_64 rng(11);
  const TensorD x = random_tensor({2, 3, 8, 8}, rng), w = random_tensor({4, 3, 3, 3}, rng);
  auto run = [&] {
    Tape<float> tape;
    return leaky_relu(conv2d(tape.constant(x.cast<float>()), tape.constant(w.cast<float>()),
                             tape.constant(Tensor({4})), 1, 1),
                      0.2)
        .value();
  };
  CHECK(run() == run());
}

TEST_CASE("adam: zero gradients leave parameters unchanged") {
  ParameterSet<float> ps;
  ps.add("p", Tensor({3}, {1, 2, 3}));
  AdamState<float> st(ps);
  ps[0].grad = Tensor({3});
  ps[0].grad_ready = true;
  adam_step(ps, st);
  CHECK(ps[0].value.vec() == std::vector<float>{1, 2, 3});
  CHECK(st.step == 1);
}

TEST_CASE("adam: one bias-corrected step with unit gradient moves by the learning rate") {
  ParameterSet<double> ps;
  ps.add("p", TensorD({1}, 0.5));
  AdamState<double> st(ps);
  ps[0].grad = TensorD({1}, 1.0);
  ps[0].grad_ready = true;
  adam_step(ps, st);
  CHECK(ps[0].value[0] == doctest::Approx(0.5 - 1e-4 / (1 + 1e-8)).epsilon(1e-12));
  CHECK(ps[0].grad[0] == 0.0);
  CHECK_FALSE(ps[0].grad_ready);
}

TEST_CASE("adam: missing gradient names the parameter") {
  ParameterSet<float> ps;
  ps.add("head.w", Tensor({1}));
  AdamState<float> st(ps);
  try {
    adam_step(ps, st);
    FAIL("expected an error");
  } catch (const std::exception& e) {
    CHECK(std::string(e.what()).find("head.w") != std::string::npos);
  }
}

TEST_CASE("adam: identical sets stay bit-identical") {
  std::mt19937_64 rng(2);
  ParameterSet<float> a, b;
  const Tensor init = random_tensor({5}, rng).cast<float>();
  a.add("p", init);
  b.add("p", init);
  AdamState<float> sa(a), sb(b);
  for (int i = 0; i < 20; ++i) {
    const Tensor g = random_tensor({5}, rng).cast<float>();
    for (auto* s : {&a, &b}) {
      (*s)[0].grad = g;
      (*s)[0].grad_ready = true;
    }
    adam_step(a, sa);
    adam_step(b, sb);
  }
  CHECK(a[0].value == b[0].value);
}

TEST_CASE("checkpoint round trip is bit exact") {
  std::mt19937_64 rng(4);
  Checkpoint ck;
  ck.entries.emplace_back("img.stem.w", random_tensor({4, 3, 3, 3}, rng).cast<float>());
  ck.entries.emplace_back("pqp.fc2.b", Tensor({1}, -0.0f));
  ck.entries.emplace_back("weird", Tensor({2}, {std::numeric_limits<float>::denorm_min(), 1e30f}));
  ck.meta["epoch"] = "3";
  const auto bytes = encode_checkpoint(ck);
  REQUIRE(bytes.size() > 12);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "JSCR");
  CHECK(bytes[4] == 1);
  CHECK(bytes[8] == 3);
  const Checkpoint back = decode_checkpoint(bytes);
  REQUIRE(back.entries.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back.entries[i].first == ck.entries[i].first);
    CHECK(std::memcmp(back.entries[i].second.data().data(), ck.entries[i].second.data().data(),
                      ck.entries[i].second.size() * sizeof(float)) == 0);
  }
  CHECK(back.meta == ck.meta);
  CHECK(encode_checkpoint(back) == bytes);

  auto truncated = bytes;
  truncated.resize(bytes.size() - 3);
  CHECK_THROWS_AS(decode_checkpoint(truncated), IoError);
  auto extra = bytes;
  extra.push_back(0);
  CHECK_THROWS_AS(decode_checkpoint(extra), IoError);
  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(decode_checkpoint(bad), IoError);
}
