#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "crs/ops.hpp"
#include "testutil.hpp"

using namespace crs;
using crstest::random_tensor;

TEST_CASE("conv2d: 1x1 identity kernel over channels is the identity") {
  Rng rng(1);
  Tensor x = random_tensor<float>(rng, {2, 3, 4, 4});
  Tensor w({3, 3, 1, 1});
  for (int c = 0; c < 3; ++c) w.at4(c, c, 0, 0) = 1.0f;
  Tensor y = conv2d(x, w, nullptr, 1, 0);
  REQUIRE(y.shape() == x.shape());
  for (long i = 0; i < x.numel(); ++i) CHECK(y.data()[i] == x.data()[i]);
}

TEST_CASE("conv2d: all-ones 3x3 on all-ones input counts the overlap") {
  Tensor x({1, 1, 3, 3}, 1.0f);
  Tensor w({1, 1, 3, 3}, 1.0f);
  Tensor y = conv2d(x, w, nullptr, 1, 1);
  CHECK(y.at4(0, 0, 1, 1) == doctest::Approx(9.0f));
  CHECK(y.at4(0, 0, 0, 0) == doctest::Approx(4.0f));
  CHECK(y.at4(0, 0, 0, 1) == doctest::Approx(6.0f));
}

TEST_CASE("conv2d matches the naive oracle on random instances") {
  Rng rng(7);
  Tensor x = random_tensor<float>(rng, {2, 3, 5, 5});
  Tensor w = random_tensor<float>(rng, {4, 3, 3, 3});
  Tensor b = random_tensor<float>(rng, {4});
  Tensor y = conv2d(x, w, b, 1, 1);

  DTensor xd = DTensor::zeros(x.shape()), wd = DTensor::zeros(w.shape()),
          bd = DTensor::zeros(b.shape());
  for (long i = 0; i < x.numel(); ++i) xd.data()[i] = x.data()[i];
  for (long i = 0; i < w.numel(); ++i) wd.data()[i] = w.data()[i];
  for (long i = 0; i < b.numel(); ++i) bd.data()[i] = b.data()[i];
  DTensor ref = crstest::conv2d_oracle(xd, wd, &bd, 1, 1);
  CHECK(crstest::max_rel_diff(y, ref) < 1e-5);
}

TEST_CASE("conv2d equals the naive oracle across a small shape sweep") {
  // Both sides in double so the comparison isolates the index logic.
  Rng rng(11);
  for (int n : {1, 2, 4})
    for (int cin : {1, 3})
      for (int h : {3, 5, 8})
        for (int k : {1, 3})
          for (int stride : {1, 2})
            for (int pad : {0, 1}) {
              if ((h + 2 * pad - k) / stride + 1 < 1) continue;
              DTensor x = random_tensor<double>(rng, {n, cin, h, h});
              DTensor w = random_tensor<double>(rng, {2, cin, k, k});
              DTensor y = conv2d(x, w, nullptr, stride, pad);
              DTensor ref = crstest::conv2d_oracle(x, w, nullptr, stride, pad);
              REQUIRE(y.shape() == ref.shape());
              CHECK(crstest::max_rel_diff(y, ref) < 1e-10);
            }
}

TEST_CASE("conv2d rejects bad shapes") {
  Tensor x({1, 2, 4, 4});
  CHECK_THROWS_AS(conv2d(x, Tensor({1, 3, 3, 3}), nullptr, 1, 1), ShapeError);  // cin mismatch
  CHECK_THROWS_AS(conv2d(x, Tensor({1, 2, 2, 2}), nullptr, 1, 1), ShapeError);  // even kernel
  Tensor tiny({1, 1, 2, 2});
  CHECK_THROWS_AS(conv2d(tiny, Tensor({1, 1, 3, 3}), nullptr, 1, 0), ShapeError);  // empty out
}

TEST_CASE("avg_pool2d: window 1 is the identity bitwise") {
  Rng rng(3);
  Tensor x = random_tensor<float>(rng, {2, 2, 5, 5});
  Tensor y = avg_pool2d(x, 1);
  REQUIRE(y.shape() == x.shape());
  for (long i = 0; i < x.numel(); ++i) CHECK(y.data()[i] == x.data()[i]);
}

TEST_CASE("avg_pool2d: mean of a 2x2 window") {
  Tensor x = Tensor::from({1, 1, 2, 2}, {1, 2, 3, 4});
  Tensor y = avg_pool2d(x, 2);
  REQUIRE(y.shape() == Shape{1, 1, 1, 1});
  CHECK(y.data()[0] == doctest::Approx(2.5f));
}

TEST_CASE("avg_pool2d matches the per-window mean oracle") {
  Rng rng(5);
  Tensor x = random_tensor<float>(rng, {1, 2, 8, 8});
  Tensor y = avg_pool2d(x, 4);
  REQUIRE(y.shape() == Shape{1, 2, 2, 2});
  for (int c = 0; c < 2; ++c)
    for (int oh = 0; oh < 2; ++oh)
      for (int ow = 0; ow < 2; ++ow) {
        double acc = 0;
        for (int h = 0; h < 4; ++h)
          for (int w = 0; w < 4; ++w) acc += x.at4(0, c, oh * 4 + h, ow * 4 + w);
        CHECK(y.at4(0, c, oh, ow) == doctest::Approx(acc / 16.0).epsilon(1e-6));
      }
}

TEST_CASE("avg_pool2d: partial trailing windows average only valid elements") {
  Rng rng(6);
  Tensor x = random_tensor<float>(rng, {1, 1, 5, 5});
  Tensor y = avg_pool2d(x, 2);
  REQUIRE(y.shape() == Shape{1, 1, 3, 3});
  // bottom-right cell covers only x[4][4]
  CHECK(y.at4(0, 0, 2, 2) == doctest::Approx(x.at4(0, 0, 4, 4)));
  // right edge of the first row covers x[0][4], x[1][4]
  const double expect = (static_cast<double>(x.at4(0, 0, 0, 4)) + x.at4(0, 0, 1, 4)) / 2.0;
  CHECK(y.at4(0, 0, 0, 2) == doctest::Approx(expect).epsilon(1e-6));
}

TEST_CASE("avg_pool2d: oversized window clamps to the input") {
  Tensor x = Tensor::from({1, 1, 2, 2}, {1, 2, 3, 4});
  Tensor y = avg_pool2d(x, 100);
  REQUIRE(y.shape() == Shape{1, 1, 1, 1});
  CHECK(y.data()[0] == doctest::Approx(2.5f));
}

TEST_CASE("avg_pool2d preserves the global mean when divisible") {
  Rng rng(9);
  Tensor x = random_tensor<float>(rng, {2, 3, 8, 8});
  Tensor y = avg_pool2d(x, 2);
  double min = 0, mout = 0;
  for (long i = 0; i < x.numel(); ++i) min += x.data()[i];
  for (long i = 0; i < y.numel(); ++i) mout += y.data()[i];
  CHECK(min / x.numel() == doctest::Approx(mout / y.numel()).epsilon(1e-6));
}

TEST_CASE("avg_pool2d(upsample_nearest(k, s), s) == k bitwise") {
  Rng rng(10);
  for (int s : {1, 2, 3, 4, 5, 7}) {
    Tensor k = random_tensor<float>(rng, {1, 2, 3, 4}, 10.0);
    Tensor up = upsample_nearest(k, s);
    Tensor back = avg_pool2d(up, s);
    REQUIRE(back.shape() == k.shape());
    for (long i = 0; i < k.numel(); ++i) REQUIRE(back.data()[i] == k.data()[i]);
  }
}

TEST_CASE("global_avg_pool basics") {
  Tensor c({2, 3, 4, 4}, 2.5f);
  Tensor y = global_avg_pool(c);
  REQUIRE(y.shape() == Shape{2, 3, 1, 1});
  for (long i = 0; i < y.numel(); ++i) CHECK(y.data()[i] == doctest::Approx(2.5f));

  Tensor x = Tensor::from({1, 1, 2, 2}, {1, 2, 3, 4});
  CHECK(global_avg_pool(x).data()[0] == doctest::Approx(2.5f));

  Rng rng(12);
  Tensor r = random_tensor<float>(rng, {2, 2, 3, 5});
  Tensor g = global_avg_pool(r);
  for (int n = 0; n < 2; ++n)
    for (int c2 = 0; c2 < 2; ++c2) {
      double acc = 0;
      for (int h = 0; h < 3; ++h)
        for (int w = 0; w < 5; ++w) acc += r.at4(n, c2, h, w);
      CHECK(g.at4(n, c2, 0, 0) == doctest::Approx(acc / 15.0).epsilon(1e-6));
    }
}

TEST_CASE("upsample_nearest replicates blocks") {
  Tensor x({1, 1, 1, 1}, 7.0f);
  Tensor y = upsample_nearest(x, 3);
  REQUIRE(y.shape() == Shape{1, 1, 3, 3});
  for (long i = 0; i < y.numel(); ++i) CHECK(y.data()[i] == 7.0f);

  Rng rng(13);
  Tensor r = random_tensor<float>(rng, {1, 2, 2, 2});
  Tensor same = upsample_nearest(r, 1);
  for (long i = 0; i < r.numel(); ++i) CHECK(same.data()[i] == r.data()[i]);
}

TEST_CASE("upsample_to: integer multiples equal upsample_nearest") {
  Rng rng(14);
  Tensor x = random_tensor<float>(rng, {1, 2, 4, 4});
  Tensor a = upsample_to(x, 8, 8);
  Tensor b = upsample_nearest(x, 2);
  for (long i = 0; i < a.numel(); ++i) CHECK(a.data()[i] == b.data()[i]);
}

TEST_CASE("upsample_to: 1x1 source broadcasts") {
  Tensor x({2, 3, 1, 1});
  for (long i = 0; i < x.numel(); ++i) x.data()[i] = static_cast<float>(i);
  Tensor y = upsample_to(x, 5, 6);
  for (int n = 0; n < 2; ++n)
    for (int c = 0; c < 3; ++c)
      for (int h = 0; h < 5; ++h)
        for (int w = 0; w < 6; ++w) CHECK(y.at4(n, c, h, w) == x.at4(n, c, 0, 0));
}

TEST_CASE("upsample_to: floor index map and downscale rejection") {
  Rng rng(15);
  Tensor x = random_tensor<float>(rng, {1, 1, 3, 3});
  Tensor y = upsample_to(x, 8, 8);
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j)
      CHECK(y.at4(0, 0, i, j) == x.at4(0, 0, (i * 3) / 8, (j * 3) / 8));
  CHECK_THROWS_AS(upsample_to(x, 2, 8), ShapeError);
}

TEST_CASE("batchnorm2d: eval mode with unit running stats is the identity") {
  Rng rng(16);
  Tensor x = random_tensor<float>(rng, {3, 2, 2, 2});
  Tensor gamma({2}, 1.0f), beta({2});
  Tensor rm({2}, 0.0f), rv({2}, 1.0f);
  Tensor y = batchnorm2d(x, gamma, beta, rm, rv, false, 1e-5);
  for (long i = 0; i < x.numel(); ++i)
    CHECK(y.data()[i] == doctest::Approx(x.data()[i]).epsilon(1e-4));
}

TEST_CASE("batchnorm2d: training mode matches the direct formula") {
  Rng rng(17);
  Tensor x = random_tensor<float>(rng, {4, 2, 2, 2}, 2.0);
  Tensor gamma = random_tensor<float>(rng, {2});
  Tensor beta = random_tensor<float>(rng, {2});
  Tensor rm({2}), rv({2}, 1.0f);
  const double eps = 1e-5, momentum = 0.1;
  Tensor y = batchnorm2d(x, gamma, beta, rm, rv, true, eps, momentum);

  for (int c = 0; c < 2; ++c) {
    double mean = 0;
    for (int n = 0; n < 4; ++n)
      for (int h = 0; h < 2; ++h)
        for (int w = 0; w < 2; ++w) mean += x.at4(n, c, h, w);
    mean /= 16.0;
    double var = 0;
    for (int n = 0; n < 4; ++n)
      for (int h = 0; h < 2; ++h)
        for (int w = 0; w < 2; ++w) {
          const double d = x.at4(n, c, h, w) - mean;
          var += d * d;
        }
    var /= 16.0;
    for (int n = 0; n < 4; ++n)
      for (int h = 0; h < 2; ++h)
        for (int w = 0; w < 2; ++w) {
          const double expect =
              (x.at4(n, c, h, w) - mean) / std::sqrt(var + eps) * gamma.data()[c] +
              beta.data()[c];
          CHECK(y.at4(n, c, h, w) == doctest::Approx(expect).epsilon(1e-5));
        }
    CHECK(rm.data()[c] == doctest::Approx(momentum * mean).epsilon(1e-5));
    CHECK(rv.data()[c] == doctest::Approx(1.0 * (1 - momentum) + momentum * var).epsilon(1e-5));
  }
}

TEST_CASE("batchnorm2d: zero-variance batch stays finite through eps") {
  Tensor x({1, 2, 1, 1}, 3.0f);
  Tensor gamma({2}, 1.0f), beta({2}), rm({2}), rv({2}, 1.0f);
  Tensor y = batchnorm2d(x, gamma, beta, rm, rv, true, 1e-5);
  for (long i = 0; i < y.numel(); ++i) CHECK(std::isfinite(y.data()[i]));
  CHECK(y.data()[0] == doctest::Approx(0.0f));
}

TEST_CASE("relu and sigmoid pointwise contracts") {
  Tensor x = Tensor::from({1, 4}, {-1.0f, 2.0f, 0.0f, -0.5f});
  Tensor r = relu(x);
  CHECK(r.data()[0] == 0.0f);
  CHECK(r.data()[1] == 2.0f);
  CHECK(r.data()[2] == 0.0f);

  Tensor s = sigmoid(Tensor::from({1, 2}, {0.0f, 4.0f}));
  CHECK(s.data()[0] == doctest::Approx(0.5f));
  CHECK(s.data()[1] == doctest::Approx(1.0 / (1.0 + std::exp(-4.0))));

  Rng rng(18);
  Tensor rand = random_tensor<float>(rng, {2, 3, 4, 4}, 5.0);
  Tensor sr = sigmoid(rand), rr = relu(rand);
  for (long i = 0; i < rand.numel(); ++i) {
    CHECK(sr.data()[i] > 0.0f);
    CHECK(sr.data()[i] < 1.0f);
    CHECK(rr.data()[i] >= 0.0f);
  }
}

TEST_CASE("linear with identity weight and zero bias is the identity") {
  Rng rng(19);
  Tensor x = random_tensor<float>(rng, {3, 4});
  Tensor w({4, 4});
  for (int i = 0; i < 4; ++i) w.at2(i, i) = 1.0f;
  Tensor b({4});
  Tensor y = linear(x, w, b);
  for (long i = 0; i < x.numel(); ++i) CHECK(y.data()[i] == doctest::Approx(x.data()[i]));
}

TEST_CASE("mul_elementwise broadcast rules") {
  Rng rng(20);
  Tensor a = random_tensor<float>(rng, {2, 3, 4, 4});
  Tensor gate = random_tensor<float>(rng, {2, 3, 1, 1});
  Tensor y = mul_elementwise(a, gate);
  for (int n = 0; n < 2; ++n)
    for (int c = 0; c < 3; ++c)
      for (int h = 0; h < 4; ++h)
        for (int w = 0; w < 4; ++w)
          CHECK(y.at4(n, c, h, w) == doctest::Approx(a.at4(n, c, h, w) * gate.at4(n, c, 0, 0)));

  Tensor yr = mul_elementwise(gate, a);  // either order
  for (long i = 0; i < y.numel(); ++i) CHECK(yr.data()[i] == y.data()[i]);

  // unequal spatial dims without an explicit upsample are rejected
  Tensor half = random_tensor<float>(rng, {2, 3, 2, 2});
  CHECK_THROWS_AS(mul_elementwise(a, half), ShapeError);
  CHECK_THROWS_AS(add(a, half), ShapeError);
}

TEST_CASE("cross_entropy: uniform logits give ln(K)") {
  Tensor logits({4, 7}, 0.37f);
  Tensor loss = cross_entropy(logits, {0, 1, 2, 6});
  CHECK(loss.data()[0] == doctest::Approx(std::log(7.0)).epsilon(1e-6));
}

TEST_CASE("cross_entropy: saturated true logits give ~0") {
  Tensor logits({2, 5});
  logits.at2(0, 3) = 20.0f;
  logits.at2(1, 0) = 20.0f;
  Tensor loss = cross_entropy(logits, {3, 0});
  CHECK(loss.data()[0] < 1e-6);
}

TEST_CASE("cross_entropy matches a double-precision softmax oracle") {
  Rng rng(21);
  Tensor logits = random_tensor<float>(rng, {4, 5}, 3.0);
  std::vector<int> labels = {1, 4, 0, 2};
  Tensor loss = cross_entropy(logits, labels);

  double expect = 0.0;
  for (int n = 0; n < 4; ++n) {
    double denom = 0.0;
    for (int k = 0; k < 5; ++k) denom += std::exp(static_cast<double>(logits.at2(n, k)));
    expect -= std::log(std::exp(static_cast<double>(logits.at2(n, labels[n]))) / denom);
  }
  expect /= 4.0;
  CHECK(loss.data()[0] == doctest::Approx(expect).epsilon(1e-6));
}

TEST_CASE("cross_entropy rejects bad labels and tiny class counts") {
  Tensor logits({2, 3});
  CHECK_THROWS_AS(cross_entropy(logits, {0, 3}), ValueError);
  CHECK_THROWS_AS(cross_entropy(logits, {0, -1}), ValueError);
  Tensor one({2, 1});
  CHECK_THROWS_AS(cross_entropy(one, {0, 0}), ValueError);
}

TEST_CASE("backward: sum gives unit grads; sum(x*x) gives 2x") {
  Rng rng(22);
  Tensor x = random_tensor<float>(rng, {2, 3});
  x.set_requires_grad(true);
  Tensor loss = sum(x);
  backward(loss);
  for (long i = 0; i < x.numel(); ++i) CHECK(x.grad()[i] == doctest::Approx(1.0f));

  Tensor x2 = random_tensor<float>(rng, {3, 4});
  x2.set_requires_grad(true);
  Tensor loss2 = sum(mul_elementwise(x2, x2));
  backward(loss2);
  for (long i = 0; i < x2.numel(); ++i)
    CHECK(x2.grad()[i] == doctest::Approx(2.0f * x2.data()[i]).epsilon(1e-5));
}

TEST_CASE("backward accumulates across calls until zero_grad") {
  Rng rng(23);
  Tensor x = random_tensor<float>(rng, {2, 2});
  x.set_requires_grad(true);
  Tensor loss = sum(x);
  backward(loss);
  backward(loss);
  for (long i = 0; i < x.numel(); ++i) CHECK(x.grad()[i] == doctest::Approx(2.0f));
  x.zero_grad();
  for (long i = 0; i < x.numel(); ++i) CHECK(x.grad()[i] == 0.0f);
}

TEST_CASE("backward rejects non-scalar and untracked losses") {
  Tensor x({2, 2}, 1.0f);
  x.set_requires_grad(true);
  Tensor y = relu(x);
  CHECK_THROWS_AS(backward(y), ShapeError);
  Tensor plain = Tensor::scalar(1.0f);
  CHECK_THROWS_AS(backward(plain), ValueError);
}

TEST_CASE("no-grad mode skips recording") {
  Tensor x({2, 2}, 1.0f);
  x.set_requires_grad(true);
  NoGradGuard ng;
  Tensor y = relu(x);
  CHECK_FALSE(y.requires_grad());
  CHECK(y.node == nullptr);
}
