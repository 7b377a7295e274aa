#include <catch2/catch_amalgamated.hpp>

#include "neckbench/ops.hpp"

using namespace neckbench;

namespace {

Tensor rand_tensor(Shape s, std::uint64_t seed, double lo = -1.0,
                   double hi = 1.0) {
  SplitMix64 rng(seed);
  Tensor t = Tensor::zeros(s);
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (!(a.shape() == b.shape())) return false;
  for (std::size_t i = 0; i < a.numel(); ++i)
    if (a.data()[i] != b.data()[i]) return false;
  return true;
}

}  // namespace

TEST_CASE("tensor construction and invariants") {
  Tensor t = Tensor::zeros({2, 3, 4, 5});
  CHECK(t.numel() == 120);
  CHECK(t.shape().str() == "2x3x4x5");
  CHECK_THROWS_AS(Tensor::from_values({1, 1, 2, 2}, {1.0, 2.0, 3.0}),
                  std::invalid_argument);
  Tensor s = Tensor::scalar(7.5);
  CHECK(s.item() == 7.5);
  CHECK_THROWS_AS(t.item(), std::runtime_error);

  // copies share the buffer, clones do not
  Tensor view = t;
  view.ptr()[0] = 42.0;
  CHECK(t.data()[0] == 42.0);
  Tensor deep = t.clone();
  deep.ptr()[0] = -1.0;
  CHECK(t.data()[0] == 42.0);
}

TEST_CASE("tensor dump/parse round trip is exact") {
  Tensor t = rand_tensor({2, 2, 3, 3}, 99);
  std::stringstream ss;
  t.dump(ss);
  Tensor back = Tensor::parse(ss);
  CHECK(bitwise_equal(t, back));
}

TEST_CASE("conv2d: scalar kernel scales the input") {
  Tensor x = Tensor::full({1, 1, 3, 3}, 1.0);
  Tensor w = Tensor::from_values({1, 1, 1, 1}, {2.0});
  Tensor y = conv2d(x, w, nullptr, 1, 0);
  REQUIRE(y.shape() == Shape{1, 1, 3, 3});
  for (double v : y.data()) CHECK(v == 2.0);
}

TEST_CASE("conv2d: strided 2x2 box kernel") {
  std::vector<double> vals(16);
  for (int i = 0; i < 16; ++i) vals[i] = i;
  Tensor x = Tensor::from_values({1, 1, 4, 4}, vals);
  Tensor w = Tensor::full({1, 1, 2, 2}, 1.0);
  Tensor y = conv2d(x, w, nullptr, 2, 0);
  REQUIRE(y.shape() == Shape{1, 1, 2, 2});
  CHECK(y.data() == std::vector<double>{10.0, 18.0, 42.0, 50.0});
}

TEST_CASE("conv2d: zero weight and bias annihilate any input") {
  Tensor x = rand_tensor({2, 3, 5, 5}, 7);
  Tensor w = Tensor::zeros({4, 3, 3, 3});
  Tensor b = Tensor::zeros({1, 4, 1, 1});
  Tensor y = conv2d(x, w, &b, 1, 1);
  for (double v : y.data()) CHECK(v == 0.0);
}

TEST_CASE("conv2d: shape validation") {
  Tensor x = Tensor::zeros({1, 3, 4, 4});
  CHECK_THROWS_AS(conv2d(x, Tensor::zeros({2, 2, 3, 3}), nullptr, 1, 1),
                  std::invalid_argument);  // channel mismatch
  CHECK_THROWS_AS(conv2d(x, Tensor::zeros({2, 3, 5, 5}), nullptr, 1, 0),
                  std::invalid_argument);  // zero-sized output
  Tensor bad_bias = Tensor::zeros({1, 3, 1, 1});
  CHECK_THROWS_AS(conv2d(x, Tensor::zeros({2, 3, 3, 3}), &bad_bias, 1, 1),
                  std::invalid_argument);  // bias channel mismatch
}

TEST_CASE("conv2d is linear in the input") {
  const Tensor x = rand_tensor({1, 2, 6, 6}, 11);
  const Tensor y = rand_tensor({1, 2, 6, 6}, 12);
  const Tensor w = rand_tensor({3, 2, 3, 3}, 13);
  const double a = 1.7, b = -0.4;
  Tensor lhs_in = Tensor::zeros(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i)
    lhs_in.ptr()[i] = a * x.data()[i] + b * y.data()[i];
  Tensor lhs = conv2d(lhs_in, w, nullptr, 1, 1);
  Tensor cx = conv2d(x, w, nullptr, 1, 1);
  Tensor cy = conv2d(y, w, nullptr, 1, 1);
  for (std::size_t i = 0; i < lhs.numel(); ++i)
    CHECK(std::abs(lhs.data()[i] - (a * cx.data()[i] + b * cy.data()[i])) <
          1e-12);
}

TEST_CASE("pool2d: constant invariance, examples, factor-1 identity") {
  for (PoolMode mode : {PoolMode::kMax, PoolMode::kAvg})
    for (int factor : {1, 2, 4}) {
      Tensor c = Tensor::full({1, 2, 8, 8}, 3.25);
      Tensor p = pool2d(c, factor, mode);
      REQUIRE(p.shape() == Shape{1, 2, 8 / factor, 8 / factor});
      for (double v : p.data()) CHECK(v == 3.25);
    }
  Tensor q = Tensor::from_values({1, 1, 2, 2}, {1.0, 2.0, 3.0, 4.0});
  CHECK(pool2d(q, 2, PoolMode::kMax).item() == 4.0);
  CHECK(pool2d(q, 2, PoolMode::kAvg).item() == 2.5);

  Tensor x = rand_tensor({2, 3, 4, 4}, 21);
  CHECK(bitwise_equal(pool2d(x, 1, PoolMode::kMax), x));
  CHECK(bitwise_equal(pool2d(x, 1, PoolMode::kAvg), x));

  CHECK_THROWS_AS(pool2d(Tensor::zeros({1, 1, 6, 6}), 4, PoolMode::kMax),
                  std::invalid_argument);  // 6 not divisible by 4
  CHECK_THROWS_AS(pool2d(Tensor::zeros({1, 1, 8, 8}), 3, PoolMode::kMax),
                  std::invalid_argument);  // unsupported factor
}

TEST_CASE("upsample_bilinear: examples and conventions") {
  Tensor c = Tensor::full({1, 2, 3, 3}, -1.5);
  Tensor up = upsample_bilinear(c, 2);
  REQUIRE(up.shape() == Shape{1, 2, 6, 6});
  for (double v : up.data()) CHECK(v == -1.5);

  Tensor one = Tensor::from_values({1, 1, 1, 1}, {5.0});
  Tensor rep = upsample_bilinear(one, 2);
  REQUIRE(rep.shape() == Shape{1, 1, 2, 2});
  for (double v : rep.data()) CHECK(v == 5.0);

  // half-pixel centers: [0, 2] doubles to [0, 0.5, 1.5, 2] on both rows
  Tensor row = Tensor::from_values({1, 1, 1, 2}, {0.0, 2.0});
  Tensor up2 = upsample_bilinear(row, 2);
  REQUIRE(up2.shape() == Shape{1, 1, 2, 4});
  const std::vector<double> want = {0.0, 0.5, 1.5, 2.0,
                                    0.0, 0.5, 1.5, 2.0};
  for (int i = 0; i < 8; ++i)
    CHECK(std::abs(up2.data()[i] - want[i]) < 1e-12);

  CHECK(upsample_bilinear(Tensor::zeros({1, 1, 2, 2}), 4).shape() ==
        Shape{1, 1, 8, 8});
  CHECK_THROWS_AS(upsample_bilinear(one, 3), std::invalid_argument);
}

TEST_CASE("upsample then avg-pool round-trips constants") {
  for (int factor : {2, 4}) {
    Tensor c = Tensor::full({1, 1, 4, 4}, 0.77);
    Tensor round = pool2d(upsample_bilinear(c, factor), factor, PoolMode::kAvg);
    REQUIRE(round.shape() == c.shape());
    for (std::size_t i = 0; i < c.numel(); ++i)
      CHECK(std::abs(round.data()[i] - c.data()[i]) < 1e-12);
  }
}

TEST_CASE("add, concat, relu basics") {
  Tensor x = rand_tensor({1, 3, 2, 2}, 31);
  Tensor z = Tensor::zeros({1, 3, 2, 2});
  CHECK(bitwise_equal(add(x, z), x));
  CHECK_THROWS_AS(add(x, Tensor::zeros({1, 3, 2, 3})), std::invalid_argument);

  Tensor a = Tensor::zeros({2, 3, 4, 4});
  Tensor b = Tensor::zeros({2, 5, 4, 4});
  CHECK(concat_channels({a, b}).shape() == Shape{2, 8, 4, 4});
  CHECK_THROWS_AS(concat_channels({a, Tensor::zeros({2, 5, 4, 5})}),
                  std::invalid_argument);

  Tensor r = relu(Tensor::from_values({1, 1, 1, 3}, {-1.0, 0.0, 2.0}));
  CHECK(r.data() == std::vector<double>{0.0, 0.0, 2.0});
}

TEST_CASE("concat then slice recovers the parts bitwise") {
  Tensor a = rand_tensor({2, 3, 3, 3}, 41);
  Tensor b = rand_tensor({2, 2, 3, 3}, 42);
  Tensor c = concat_channels({a, b});
  CHECK(bitwise_equal(slice_channels(c, 0, 3), a));
  CHECK(bitwise_equal(slice_channels(c, 3, 5), b));
  CHECK_THROWS_AS(slice_channels(c, 3, 3), std::invalid_argument);
  CHECK_THROWS_AS(slice_channels(c, 0, 6), std::invalid_argument);
}

TEST_CASE("backward: linear map gives the constant factor as gradient") {
  // loss = sum_i w_i * x_i realized as a 1x1xn kernel dotted with x
  Tensor x = Tensor::from_values({1, 1, 1, 3}, {3.0, -2.0, 0.5});
  Tensor w = Tensor::from_values({1, 1, 1, 3}, {0.1, 0.2, 0.3});
  w.enable_grad();
  GradTape tape;
  {
    TapeScope scope(tape);
    Tensor loss = sum(conv2d(x, w, nullptr, 1, 0));
    tape.backward(loss);
  }
  CHECK(w.grad() == std::vector<double>{3.0, -2.0, 0.5});
}

TEST_CASE("backward: fully negative input to relu gets zero gradient") {
  Tensor w = Tensor::from_values({1, 1, 1, 3}, {-1.0, -5.0, -0.25});
  w.enable_grad();
  GradTape tape;
  {
    TapeScope scope(tape);
    tape.backward(sum(relu(w)));
  }
  CHECK(w.grad() == std::vector<double>{0.0, 0.0, 0.0});
}

TEST_CASE("backward: error contracts") {
  Tensor w = rand_tensor({1, 1, 2, 2}, 51);
  w.enable_grad();
  GradTape tape;
  TapeScope scope(tape);
  Tensor y = relu(w);  // not scalar
  CHECK_THROWS_AS(tape.backward(y), std::invalid_argument);
  Tensor untracked = Tensor::scalar(1.0);
  CHECK_THROWS_AS(tape.backward(untracked), std::invalid_argument);
  Tensor loss = sum(y);
  tape.backward(loss);
  CHECK_THROWS_AS(tape.backward(loss), std::runtime_error);  // no reset
  tape.reset();
  CHECK(tape.size() == 0);
}

TEST_CASE("composite graph matches finite differences") {
  // conv -> pool -> upsample -> add residual -> relu -> sum
  const Tensor w = rand_tensor({2, 2, 3, 3}, 61);
  auto f = [&](const Tensor& x) {
    Tensor c = conv2d(x, w, nullptr, 1, 1);
    Tensor p = pool2d(c, 2, PoolMode::kMax);
    Tensor u = upsample_bilinear(p, 2);
    return sum(relu(add(u, c)));
  };
  const Tensor point = rand_tensor({1, 2, 6, 6}, 62);
  CHECK(finite_diff_check(f, point, 1e-5) < 1e-4);
}

TEST_CASE("finite_diff_check: quadratic and constant functions") {
  // f(x) = sum(x^2) via x correlated with itself: gradient 2x
  auto square = [](const Tensor& x) { return sum(conv2d(x, x, nullptr, 1, 0)); };
  Tensor p = Tensor::from_values({1, 1, 1, 3}, {1.0, 2.0, 3.0});
  CHECK(finite_diff_check(square, p, 1e-5) < 1e-8);
  {
    Tensor x = p.clone();
    x.enable_grad();
    GradTape tape;
    TapeScope scope(tape);
    tape.backward(square(x));
    CHECK(std::abs(x.grad()[0] - 2.0) < 1e-12);
    CHECK(std::abs(x.grad()[1] - 4.0) < 1e-12);
    CHECK(std::abs(x.grad()[2] - 6.0) < 1e-12);
  }
  auto constant = [](const Tensor& x) { return scale(sum(x), 0.0); };
  CHECK(finite_diff_check(constant, p, 1e-5) == 0.0);
}

TEST_CASE("ops preserve finiteness on finite inputs") {
  Tensor x = rand_tensor({1, 2, 8, 8}, 71, -100.0, 100.0);
  Tensor w = rand_tensor({3, 2, 3, 3}, 72, -10.0, 10.0);
  CHECK(conv2d(x, w, nullptr, 2, 1).all_finite());
  CHECK(pool2d(x, 4, PoolMode::kAvg).all_finite());
  CHECK(upsample_bilinear(x, 2).all_finite());
  CHECK(relu(scale(x, -3.0)).all_finite());
}

TEST_CASE("seeded RNG and ops are deterministic across invocations") {
  Tensor a = rand_tensor({2, 3, 5, 5}, 81);
  Tensor b = rand_tensor({2, 3, 5, 5}, 81);
  CHECK(bitwise_equal(a, b));
  Tensor w = rand_tensor({2, 3, 3, 3}, 82);
  CHECK(bitwise_equal(conv2d(a, w, nullptr, 1, 1),
                      conv2d(b, w, nullptr, 1, 1)));
  // seed streams for distinct purposes do not collide
  CHECK(derive_seed(1, "alpha") != derive_seed(1, "beta"));
  CHECK(derive_seed(1, "alpha") == derive_seed(1, "alpha"));
}
