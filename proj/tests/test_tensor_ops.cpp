#include <doctest.h>

#include <cmath>
#include <random>

#include "modnet/ops.hpp"
#include "modnet/tensor.hpp"

using namespace modnet;

namespace {

// Direct sliding-window cross-correlation with 'same' zero padding. Kept
// loop-for-loop obvious so it can stand as the oracle for the im2col path.
Tensor conv2d_oracle(const Tensor& input, const Tensor& kernels, const Tensor& bias) {
  const int C = input.shape()[0], H = input.shape()[1], W = input.shape()[2];
  const int F = kernels.shape()[0], kh = kernels.shape()[2], kw = kernels.shape()[3];
  const int pad_h = (kh - 1) / 2, pad_w = (kw - 1) / 2;
  Tensor out({F, H, W});
  for (int f = 0; f < F; ++f)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        double acc = bias[f];
        for (int c = 0; c < C; ++c)
          for (int dy = 0; dy < kh; ++dy)
            for (int dx = 0; dx < kw; ++dx) {
              const int sy = y + dy - pad_h, sx = x + dx - pad_w;
              if (sy < 0 || sy >= H || sx < 0 || sx >= W) continue;
              acc += input.at(c, sy, sx) *
                     kernels[((static_cast<std::int64_t>(f) * C + c) * kh + dy) * kw + dx];
            }
        out.at(f, y, x) = acc;
      }
  return out;
}

Tensor maxpool2_oracle(const Tensor& input) {
  const int C = input.shape()[0], H = input.shape()[1], W = input.shape()[2];
  Tensor out({C, (H + 1) / 2, (W + 1) / 2});
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        double& cell = out.at(c, y / 2, x / 2);
        if (y % 2 == 0 && x % 2 == 0)
          cell = input.at(c, y, x);
        else
          cell = std::max(cell, input.at(c, y, x));
      }
  return out;
}

Tensor dense_oracle(const Tensor& x, const Tensor& w, const Tensor& b) {
  const int m = w.shape()[0], n = w.shape()[1];
  Tensor out({m});
  for (int i = 0; i < m; ++i) {
    double acc = b[i];
    for (int j = 0; j < n; ++j) acc += w.at(i, j) * x[j];
    out[i] = acc;
  }
  return out;
}

Tensor random_tensor(Shape shape, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  Tensor t(std::move(shape));
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = dist(rng);
  return t;
}

}  // namespace

TEST_CASE("conv2d: all-ones 3x3 kernel on all-ones 3x3 input") {
  Tensor input = Tensor::constant({1, 3, 3}, 1.0);
  Tensor kernel = Tensor::constant({1, 1, 3, 3}, 1.0);
  Tensor bias({1});
  Tensor out = conv2d(input, kernel, bias);
  Tensor expect = conv2d_oracle(input, kernel, bias);
  CHECK(bit_equal(out, expect));
  // window overlap counts: 9 at the center, 6 at edge midpoints, 4 at corners
  CHECK(out.at(0, 1, 1) == doctest::Approx(9.0));
  CHECK(out.at(0, 0, 1) == doctest::Approx(6.0));
  CHECK(out.at(0, 1, 0) == doctest::Approx(6.0));
  CHECK(out.at(0, 0, 0) == doctest::Approx(4.0));
  CHECK(out.at(0, 2, 2) == doctest::Approx(4.0));
}

TEST_CASE("conv2d: 1x1 identity kernel passes input through") {
  std::mt19937_64 rng(7);
  Tensor input = random_tensor({1, 4, 5}, rng);
  Tensor kernel = Tensor::constant({1, 1, 1, 1}, 1.0);
  Tensor bias({1});
  CHECK(bit_equal(conv2d(input, kernel, bias), input));
}

TEST_CASE("conv2d: zero kernels and bias give zero output") {
  std::mt19937_64 rng(8);
  Tensor input = random_tensor({3, 5, 5}, rng);
  Tensor kernel({2, 3, 3, 3});
  Tensor bias({2});
  Tensor out = conv2d(input, kernel, bias);
  CHECK(out.array().abs().maxCoeff() == 0.0);
}

TEST_CASE("conv2d: matches sliding-window oracle on random cases, even and odd kernels") {
  std::mt19937_64 rng(42);
  for (auto [C, H, W, F, kh, kw] : {std::tuple{1, 6, 6, 2, 3, 3},
                                    std::tuple{2, 5, 7, 3, 4, 4},
                                    std::tuple{3, 8, 4, 1, 8, 8},
                                    std::tuple{2, 3, 3, 2, 1, 5}}) {
    Tensor input = random_tensor({C, H, W}, rng);
    Tensor kernel = random_tensor({F, C, kh, kw}, rng);
    Tensor bias = random_tensor({F}, rng);
    Tensor out = conv2d(input, kernel, bias);
    Tensor expect = conv2d_oracle(input, kernel, bias);
    REQUIRE(out.same_shape(expect));
    CHECK((out.array() - expect.array()).abs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("conv2d: channel mismatch raises shape error") {
  Tensor input({2, 4, 4});
  Tensor kernel({1, 3, 3, 3});
  Tensor bias({1});
  CHECK_THROWS_AS(conv2d(input, kernel, bias), ShapeError);
}

TEST_CASE("maxpool2: 2x2 block") {
  Tensor input({1, 2, 2}, {1, 2, 3, 4});
  Tensor out = maxpool2(input);
  CHECK(out.shape() == Shape{1, 1, 1});
  CHECK(out[0] == 4.0);
}

TEST_CASE("maxpool2: constant input stays constant") {
  Tensor input = Tensor::constant({2, 5, 5}, 0.25);
  Tensor out = maxpool2(input);
  CHECK(out.shape() == Shape{2, 3, 3});
  CHECK((out.array() == 0.25).all());
}

TEST_CASE("maxpool2: distinct 4x4 matches per-block max oracle") {
  Tensor input({1, 4, 4}, {15, 3, 8, 1, 2, 9, 4, 12, 7, 14, 5, 10, 6, 11, 13, 16});
  Tensor out = maxpool2(input);
  Tensor expect = maxpool2_oracle(input);
  CHECK(bit_equal(out, expect));
  CHECK(out.at(0, 0, 0) == 15.0);
  CHECK(out.at(0, 0, 1) == 12.0);
  CHECK(out.at(0, 1, 0) == 14.0);
  CHECK(out.at(0, 1, 1) == 16.0);
}

TEST_CASE("maxpool2: odd extents truncate the trailing window") {
  std::mt19937_64 rng(3);
  for (auto [H, W] : {std::pair{5, 5}, std::pair{1, 4}, std::pair{7, 2}}) {
    Tensor input = random_tensor({2, H, W}, rng);
    Tensor out = maxpool2(input);
    CHECK(out.shape() == Shape{2, (H + 1) / 2, (W + 1) / 2});
    CHECK(bit_equal(out, maxpool2_oracle(input)));
  }
}

TEST_CASE("dense: identity weights pass input through") {
  Tensor x({3}, {0.5, -2.0, 7.0});
  Tensor w({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  Tensor b({3});
  CHECK(bit_equal(dense(x, w, b), x));
}

TEST_CASE("dense: zero weights return the bias") {
  Tensor x({4}, {1, 2, 3, 4});
  Tensor w({2, 4});
  Tensor b({2}, {-1.5, 2.5});
  CHECK(bit_equal(dense(x, w, b), b));
}

TEST_CASE("dense: hand matrix-vector product") {
  Tensor x({2}, {1, 1});
  Tensor w({2, 2}, {1, 2, 3, 4});
  Tensor b({2});
  Tensor out = dense(x, w, b);
  CHECK(bit_equal(out, dense_oracle(x, w, b)));
  CHECK(out[0] == 3.0);
  CHECK(out[1] == 7.0);
}

TEST_CASE("dense: dimension mismatch raises shape error") {
  Tensor x({3});
  Tensor w({2, 4});
  Tensor b({2});
  CHECK_THROWS_AS(dense(x, w, b), ShapeError);
}

TEST_CASE("relu: clamps negatives, keeps positives") {
  Tensor x({3}, {-1, 0, 2});
  Tensor out = relu(x);
  CHECK(out[0] == 0.0);
  CHECK(out[1] == 0.0);
  CHECK(out[2] == 2.0);

  Tensor pos({4}, {0.1, 5, 2, 0.7});
  CHECK(bit_equal(relu(pos), pos));
}

TEST_CASE("concat: vectors along axis 0") {
  Tensor a({2}, {1, 2});
  Tensor b({1}, {3});
  Tensor out = concat(a, b, 0);
  CHECK(out.shape() == Shape{3});
  CHECK(out[0] == 1.0);
  CHECK(out[1] == 2.0);
  CHECK(out[2] == 3.0);
}

TEST_CASE("concat: empty operand returns the other") {
  Tensor a({3}, {4, 5, 6});
  Tensor empty({0});
  CHECK(bit_equal(concat(a, empty, 0), a));
  CHECK(bit_equal(concat(empty, a, 0), a));
}

TEST_CASE("concat: channel axis of images") {
  std::mt19937_64 rng(5);
  Tensor a = random_tensor({2, 3, 4}, rng);
  Tensor b = random_tensor({3, 3, 4}, rng);
  Tensor out = concat(a, b, 0);
  REQUIRE(out.shape() == Shape{5, 3, 4});
  for (int y = 0; y < 3; ++y)
    for (int x = 0; x < 4; ++x) {
      CHECK(out.at(0, y, x) == a.at(0, y, x));
      CHECK(out.at(2, y, x) == b.at(0, y, x));
      CHECK(out.at(4, y, x) == b.at(2, y, x));
    }
}

TEST_CASE("concat: incompatible shapes raise shape error") {
  Tensor a({2, 3, 4});
  Tensor b({2, 4, 4});
  CHECK_THROWS_AS(concat(a, b, 0), ShapeError);
  CHECK_THROWS_AS(concat(a, b, 3), ShapeError);
}

TEST_CASE("concat backward: partitions the upstream gradient exactly") {
  std::mt19937_64 rng(11);
  for (int axis = 0; axis < 3; ++axis) {
    Shape sa{2, 3, 4}, sb{2, 3, 4};
    sb[axis] = 2;
    Tensor a = random_tensor(sa, rng), b = random_tensor(sb, rng);
    Tensor joined = concat(a, b, axis);
    Tensor upstream = random_tensor(joined.shape(), rng);
    Tensor ga(sa), gb(sb);
    concat_backward(upstream, sa, sb, axis, &ga, &gb);
    CHECK(ga.numel() + gb.numel() == upstream.numel());
    CHECK(ga.array().sum() + gb.array().sum() ==
          doctest::Approx(upstream.array().sum()).epsilon(1e-12));
    // splitting then re-concatenating the gradients reproduces the upstream
    CHECK(bit_equal(concat(ga, gb, axis), upstream));
  }
}

TEST_CASE("softmax_xent: uniform logits over 10 classes") {
  Tensor logits({10});
  auto r = softmax_xent(logits, 3);
  CHECK(r.loss == doctest::Approx(std::log(10.0)).epsilon(1e-12));
  CHECK(std::abs(r.probs.array().sum() - 1.0) < 1e-12);
}

TEST_CASE("softmax_xent: saturated correct logit has near-zero loss") {
  Tensor logits({5});
  logits[2] = 50.0;
  auto r = softmax_xent(logits, 2);
  CHECK(r.loss >= 0.0);
  CHECK(r.loss < 1e-9);
}

TEST_CASE("softmax_xent: direct formula on [1,2]") {
  Tensor logits({2}, {1, 2});
  auto r = softmax_xent(logits, 0);
  CHECK(r.loss == doctest::Approx(std::log(1.0 + std::exp(1.0))).epsilon(1e-12));
}

TEST_CASE("softmax_xent: label out of range") {
  Tensor logits({4});
  CHECK_THROWS_AS(softmax_xent(logits, 4), ContractError);
  CHECK_THROWS_AS(softmax_xent(logits, -1), ContractError);
}

TEST_CASE("softmax: probability vector for extreme logit magnitudes") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> dist(-1e4, 1e4);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor logits({8});
    for (int i = 0; i < 8; ++i) logits[i] = dist(rng);
    Tensor p = softmax(logits);
    CHECK(p.all_finite());
    CHECK((p.array() >= 0.0).all());
    CHECK(std::abs(p.array().sum() - 1.0) < 1e-12);
  }
}

TEST_CASE("output shapes are total functions of input shapes") {
  std::mt19937_64 rng(23);
  std::uniform_int_distribution<int> dim(1, 9), chan(1, 4), filt(1, 4), ksz(1, 5);
  for (int trial = 0; trial < 200; ++trial) {
    const int C = chan(rng), H = dim(rng), W = dim(rng);
    const int F = filt(rng), kh = ksz(rng), kw = ksz(rng);
    Tensor img = random_tensor({C, H, W}, rng);

    Tensor conv_out = conv2d(img, random_tensor({F, C, kh, kw}, rng), random_tensor({F}, rng));
    CHECK(conv_out.shape() == Shape{F, H, W});

    CHECK(maxpool2(img).shape() == Shape{C, (H + 1) / 2, (W + 1) / 2});

    const int n = C * H * W;
    const int m = 1 + (trial % 7);
    Tensor flat = img.flattened();
    CHECK(dense(flat, random_tensor({m, n}, rng), random_tensor({m}, rng)).shape() == Shape{m});

    CHECK(relu(img).shape() == img.shape());
  }
}

TEST_CASE("activity_l2: values and zero cases") {
  Tensor a({2}, {1, 2});
  CHECK(activity_l2<double>({&a}, 1e-6) == doctest::Approx(5e-6).epsilon(1e-15));

  Tensor zeros({8});
  CHECK(activity_l2<double>({&zeros}, 0.5) == 0.0);
}

TEST_CASE("tensor: basic invariants") {
  Tensor t({2, 3});
  CHECK(t.numel() == 6);
  CHECK(t.rank() == 2);
  CHECK_THROWS_AS(Tensor({-1, 2}), ShapeError);
  CHECK_THROWS_AS(Tensor({2}, {1, 2, 3}), ShapeError);
  CHECK_THROWS_AS(t.reshaped({4}), ShapeError);
  CHECK(t.reshaped({3, 2}).shape() == Shape{3, 2});
  CHECK(t.all_finite());
  t[0] = std::nan("");
  CHECK(!t.all_finite());
}
