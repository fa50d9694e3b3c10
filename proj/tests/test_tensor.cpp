#include <cmath>
#include <cstring>

#include "doctest.h"
#include "iyolo/rng.hpp"
#include "iyolo/tensor.hpp"
#include "oracles.hpp"

using namespace iyolo;
using oracles::max_abs_diff;
using oracles::random_tensor;

TEST_CASE("tensor construction validates invariants") {
  CHECK_THROWS_AS(Tensor(std::vector<int>{}), std::invalid_argument);
  CHECK_THROWS_AS(Tensor({2, 0}), std::invalid_argument);
  CHECK_THROWS_AS(Tensor({2, 2}, {1.0f}), std::invalid_argument);
  const Tensor t({2, 3});
  CHECK(t.size() == 6);
  CHECK(t.rank() == 2);
}

TEST_CASE("conv2d scalar kernel scales the input") {
  const Tensor x({1, 1, 2, 2}, {1, 2, 3, 4});
  const Tensor w({1, 1, 1, 1}, {2});
  const Tensor y = conv2d(x, w, nullptr, 1, 0);
  CHECK(y.dims() == std::vector<int>{1, 1, 2, 2});
  CHECK(y[0] == 2.0f);
  CHECK(y[1] == 4.0f);
  CHECK(y[2] == 6.0f);
  CHECK(y[3] == 8.0f);
}

TEST_CASE("conv2d delta kernel with pad 1 is the identity") {
  Rng rng(1);
  const Tensor x = random_tensor(rng, {1, 2, 5, 6});
  Tensor w({2, 2, 3, 3});
  w.at4(0, 0, 1, 1) = 1.0f;
  w.at4(1, 1, 1, 1) = 1.0f;
  const Tensor y = conv2d(x, w, nullptr, 1, 1);
  CHECK(max_abs_diff(x, y) == 0.0f);
}

TEST_CASE("conv2d matches the naive loop oracle") {
  Rng rng(2);
  const Tensor x = random_tensor(rng, {1, 2, 5, 5});
  const Tensor w = random_tensor(rng, {3, 2, 3, 3});
  CHECK(max_abs_diff(conv2d(x, w, nullptr, 1, 0), oracles::conv2d_ref(x, w, nullptr, 1, 0)) <
        1e-5f);

  for (int i = 0; i < 30; ++i) {
    const int n = rng.uniform_int(1, 2), c = rng.uniform_int(1, 4);
    const int h = rng.uniform_int(1, 8), ww = rng.uniform_int(1, 8);
    const int o = rng.uniform_int(1, 4);
    const int k = rng.uniform_int(1, std::min(3, std::min(h, ww)));
    const int stride = rng.uniform_int(1, 2), pad = rng.uniform_int(0, 2);
    const Tensor input = random_tensor(rng, {n, c, h, ww});
    const Tensor weight = random_tensor(rng, {o, c, k, k});
    const Tensor bias = random_tensor(rng, {o});
    CHECK(max_abs_diff(conv2d(input, weight, &bias, stride, pad),
                       oracles::conv2d_ref(input, weight, &bias, stride, pad)) < 1e-5f);
  }
}

TEST_CASE("conv2d grouped path matches the oracle") {
  Rng rng(3);
  const Tensor x = random_tensor(rng, {1, 6, 5, 5});
  const Tensor w = random_tensor(rng, {6, 1, 3, 3});  // depthwise
  CHECK(max_abs_diff(conv2d(x, w, nullptr, 1, 1, 6),
                     oracles::conv2d_ref(x, w, nullptr, 1, 1, 6)) < 1e-5f);
  const Tensor w2 = random_tensor(rng, {4, 3, 3, 3});  // 2 groups, 3 -> 2 each
  CHECK(max_abs_diff(conv2d(x, w2, nullptr, 1, 1, 2),
                     oracles::conv2d_ref(x, w2, nullptr, 1, 1, 2)) < 1e-5f);
}

TEST_CASE("conv2d rejects bad shapes") {
  const Tensor x({1, 2, 4, 4});
  CHECK_THROWS_AS(conv2d(x, Tensor({1, 3, 3, 3}), nullptr, 1, 1), std::invalid_argument);
  CHECK_THROWS_AS(conv2d(x, Tensor({1, 2, 5, 5}), nullptr, 1, 0), std::invalid_argument);
  CHECK_THROWS_AS(conv2d(x, Tensor({1, 2, 3, 3}), nullptr, 0, 0), std::invalid_argument);
  const Tensor bad_bias({2});
  CHECK_THROWS_AS(conv2d(x, Tensor({1, 2, 3, 3}), &bad_bias, 1, 1), std::invalid_argument);
}

TEST_CASE("conv2d surfaces non-finite results as errors") {
  const Tensor x = Tensor::full({1, 1, 2, 2}, 1e30f);
  const Tensor w = Tensor::full({1, 1, 2, 2}, 1e30f);
  CHECK_THROWS_AS(conv2d(x, w, nullptr, 1, 0), std::runtime_error);
}

TEST_CASE("batchnorm identity and constant cases") {
  Rng rng(4);
  const Tensor x = random_tensor(rng, {2, 3, 4, 4});
  const Tensor ones = Tensor::full({3}, 1.0f);
  const Tensor zeros({3});

  CHECK(max_abs_diff(batchnorm_inference(x, ones, zeros, zeros, ones, 0.0f), x) == 0.0f);

  const Tensor beta({3}, {0.5f, -1.0f, 2.0f});
  const Tensor y = batchnorm_inference(x, zeros, beta, zeros, ones, 0.0f);
  for (int c = 0; c < 3; ++c) {
    CHECK(y.at4(0, c, 0, 0) == beta[static_cast<std::size_t>(c)]);
    CHECK(y.at4(1, c, 3, 3) == beta[static_cast<std::size_t>(c)]);
  }
}

TEST_CASE("batchnorm formula hand check") {
  const Tensor x({1, 1, 1, 1}, {2.0f});
  const Tensor gamma({1}, {3.0f}), beta({1}, {1.0f}), mean({1}, {1.0f}), var({1}, {4.0f});
  const Tensor y = batchnorm_inference(x, gamma, beta, mean, var, 0.0f);
  CHECK(y[0] == doctest::Approx(2.5).epsilon(1e-6));
}

TEST_CASE("batchnorm rejects bad vectors") {
  const Tensor x({1, 2, 2, 2});
  const Tensor two({2}), three({3});
  const Tensor ones = Tensor::full({2}, 1.0f);
  CHECK_THROWS_AS(batchnorm_inference(x, three, two, two, ones, 1e-5f), std::invalid_argument);
  const Tensor neg_var({2}, {-1.0f, 1.0f});
  CHECK_THROWS_AS(batchnorm_inference(x, ones, two, two, neg_var, 1e-5f),
                  std::invalid_argument);
}

TEST_CASE("silu values") {
  CHECK(silu_scalar(0.0f) == 0.0f);
  CHECK(silu_scalar(30.0f) == doctest::Approx(30.0).epsilon(1e-6));
  CHECK(silu_scalar(1.0f) == doctest::Approx(0.731059).epsilon(1e-5));
  const Tensor x({3}, {0.0f, 1.0f, -2.0f});
  const Tensor y = silu(x);
  CHECK(y[0] == 0.0f);
  CHECK(y[1] == silu_scalar(1.0f));
  CHECK(y[2] == silu_scalar(-2.0f));
}

TEST_CASE("sigmoid values, stability and exact symmetry") {
  CHECK(sigmoid_scalar(0.0f) == 0.5f);
  CHECK(sigmoid_scalar(2.0f) == doctest::Approx(0.880797).epsilon(1e-6));
  CHECK(sigmoid_scalar(1e4f) == 1.0f);
  CHECK(sigmoid_scalar(-1e4f) == 0.0f);

  Rng rng(5);
  for (int i = 0; i < 1000; ++i) {
    const float x = rng.uniform(-50.0f, 50.0f);
    CHECK(sigmoid_scalar(-x) == 1.0f - sigmoid_scalar(x));
  }
}

TEST_CASE("softmax examples and stability") {
  const Tensor flat({1, 2}, {0.0f, 0.0f});
  const Tensor y = softmax(flat, 1);
  CHECK(y[0] == doctest::Approx(0.5).epsilon(1e-7));
  CHECK(y[1] == doctest::Approx(0.5).epsilon(1e-7));

  const Tensor big({1, 2}, {1000.0f, 1000.0f});
  const Tensor yb = softmax(big, 1);
  CHECK(yb[0] == doctest::Approx(0.5).epsilon(1e-7));

  const Tensor ln2({1, 2}, {std::log(2.0f), 0.0f});
  const Tensor yl = softmax(ln2, 1);
  CHECK(yl[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-6));
  CHECK(yl[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-6));

  CHECK_THROWS_AS(softmax(flat, 2), std::invalid_argument);
  CHECK_THROWS_AS(softmax(flat, -1), std::invalid_argument);
}

TEST_CASE("softmax is shift invariant and normalized on every axis") {
  Rng rng(6);
  const Tensor x = random_tensor(rng, {3, 4, 5}, -5.0f, 5.0f);
  for (int axis = 0; axis < 3; ++axis) {
    const Tensor y = softmax(x, axis);
    Tensor shifted = x;
    for (std::size_t i = 0; i < shifted.size(); ++i) shifted[i] += 7.25f;
    CHECK(max_abs_diff(y, softmax(shifted, axis)) < 1e-6f);

    std::size_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= static_cast<std::size_t>(x.dim(i));
    for (int i = axis + 1; i < 3; ++i) inner *= static_cast<std::size_t>(x.dim(i));
    const std::size_t n = static_cast<std::size_t>(x.dim(axis));
    for (std::size_t a = 0; a < outer; ++a) {
      for (std::size_t b = 0; b < inner; ++b) {
        double sum = 0.0;
        for (std::size_t i = 0; i < n; ++i) sum += y[a * n * inner + i * inner + b];
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
      }
    }
  }
}

TEST_CASE("matmul identity, zeros and oracle") {
  Rng rng(7);
  const Tensor a = random_tensor(rng, {3, 4});
  Tensor eye({4, 4});
  for (int i = 0; i < 4; ++i) eye.at2(i, i) = 1.0f;
  CHECK(max_abs_diff(matmul(a, eye), a) == 0.0f);

  const Tensor zeros({4, 2});
  const Tensor z = matmul(a, zeros);
  for (std::size_t i = 0; i < z.size(); ++i) CHECK(z[i] == 0.0f);

  const Tensor b = random_tensor(rng, {4, 2});
  CHECK(max_abs_diff(matmul(a, b), oracles::matmul_ref(a, b)) < 1e-5f);
  CHECK_THROWS_AS(matmul(a, Tensor({3, 2})), std::invalid_argument);
}

TEST_CASE("maxpool2d identity, hand scan and oracle") {
  Rng rng(8);
  const Tensor c = Tensor::full({1, 2, 4, 4}, 3.5f);
  const Tensor yc = maxpool2d(c, 2, 2, 0);
  for (std::size_t i = 0; i < yc.size(); ++i) CHECK(yc[i] == 3.5f);

  const Tensor x = random_tensor(rng, {1, 1, 4, 4});
  CHECK(max_abs_diff(maxpool2d(x, 1, 1, 0), x) == 0.0f);

  const Tensor y = maxpool2d(x, 2, 2, 0);
  for (int oy = 0; oy < 2; ++oy) {
    for (int ox = 0; ox < 2; ++ox) {
      const float m =
          std::max(std::max(x.at4(0, 0, 2 * oy, 2 * ox), x.at4(0, 0, 2 * oy, 2 * ox + 1)),
                   std::max(x.at4(0, 0, 2 * oy + 1, 2 * ox), x.at4(0, 0, 2 * oy + 1, 2 * ox + 1)));
      CHECK(y.at4(0, 0, oy, ox) == m);
    }
  }

  for (int i = 0; i < 20; ++i) {
    const int h = rng.uniform_int(2, 8), w = rng.uniform_int(2, 8);
    const int k = rng.uniform_int(1, std::min(3, std::min(h, w)));
    const int stride = rng.uniform_int(1, 2), pad = rng.uniform_int(0, (k - 1) / 2);
    const Tensor input = random_tensor(rng, {1, 2, h, w});
    CHECK(max_abs_diff(maxpool2d(input, k, stride, pad),
                       oracles::maxpool_ref(input, k, stride, pad)) == 0.0f);
  }
  CHECK_THROWS_AS(maxpool2d(x, 9, 1, 0), std::invalid_argument);
}

TEST_CASE("upsample_nearest replication and round trip") {
  const Tensor v({1, 1, 1, 1}, {4.25f});
  const Tensor y = upsample_nearest(v, 2);
  CHECK(y.dims() == std::vector<int>{1, 1, 2, 2});
  for (std::size_t i = 0; i < y.size(); ++i) CHECK(y[i] == 4.25f);

  Rng rng(9);
  const Tensor x = random_tensor(rng, {2, 3, 3, 4});
  CHECK(max_abs_diff(upsample_nearest(x, 1), x) == 0.0f);

  const Tensor up = upsample_nearest(x, 3);
  Tensor back(x.dims());
  for (int n = 0; n < 2; ++n) {
    for (int c = 0; c < 3; ++c) {
      for (int yy = 0; yy < 3; ++yy) {
        for (int xx = 0; xx < 4; ++xx) {
          back.at4(n, c, yy, xx) = up.at4(n, c, yy * 3, xx * 3);
        }
      }
    }
  }
  CHECK(max_abs_diff(back, x) == 0.0f);
  CHECK_THROWS_AS(upsample_nearest(x, 0), std::invalid_argument);
}

TEST_CASE("concat keeps slices intact") {
  Rng rng(10);
  const Tensor x = random_tensor(rng, {1, 2, 2, 2});
  CHECK(max_abs_diff(concat({&x}, 1), x) == 0.0f);

  const Tensor y = random_tensor(rng, {1, 3, 2, 2});
  const Tensor z = concat({&x, &y}, 1);
  CHECK(z.dims() == std::vector<int>{1, 5, 2, 2});
  for (int c = 0; c < 2; ++c) {
    for (int i = 0; i < 4; ++i) {
      CHECK(z.at4(0, c, i / 2, i % 2) == x.at4(0, c, i / 2, i % 2));
    }
  }
  for (int c = 0; c < 3; ++c) {
    for (int i = 0; i < 4; ++i) {
      CHECK(z.at4(0, 2 + c, i / 2, i % 2) == y.at4(0, c, i / 2, i % 2));
    }
  }
  const Tensor bad({1, 2, 3, 2});
  CHECK_THROWS_AS(concat({&x, &bad}, 1), std::invalid_argument);
}

TEST_CASE("split then concat is the identity") {
  Rng rng(13);
  const Tensor x = random_tensor(rng, {1, 6, 3, 3});
  Tensor lo({1, 3, 3, 3}), hi({1, 3, 3, 3});
  for (int c = 0; c < 3; ++c) {
    for (int i = 0; i < 9; ++i) {
      lo.at4(0, c, i / 3, i % 3) = x.at4(0, c, i / 3, i % 3);
      hi.at4(0, c, i / 3, i % 3) = x.at4(0, 3 + c, i / 3, i % 3);
    }
  }
  CHECK(max_abs_diff(concat({&lo, &hi}, 1), x) == 0.0f);
}

TEST_CASE("add elementwise with exact commutativity") {
  Rng rng(11);
  const Tensor a = random_tensor(rng, {2, 3, 2, 2});
  const Tensor zero(a.dims());
  CHECK(max_abs_diff(add(a, zero), a) == 0.0f);

  Tensor neg(a.dims());
  for (std::size_t i = 0; i < a.size(); ++i) neg[i] = -a[i];
  const Tensor z = add(a, neg);
  for (std::size_t i = 0; i < z.size(); ++i) CHECK(z[i] == 0.0f);

  const Tensor b = random_tensor(rng, {2, 3, 2, 2});
  CHECK(max_abs_diff(add(a, b), add(b, a)) == 0.0f);
  const Tensor c({2, 3, 2, 3});
  CHECK_THROWS_AS(add(a, c), std::invalid_argument);
}

TEST_CASE("kernels are deterministic within a build") {
  Rng rng(12);
  const Tensor x = random_tensor(rng, {1, 3, 6, 6});
  const Tensor w = random_tensor(rng, {4, 3, 3, 3});
  const Tensor y1 = conv2d(x, w, nullptr, 2, 1);
  const Tensor y2 = conv2d(x, w, nullptr, 2, 1);
  CHECK(std::memcmp(y1.data(), y2.data(), y1.size() * sizeof(float)) == 0);
}

TEST_CASE("no kernel emits NaN or Inf inside the finite envelope") {
  const Tensor extreme({4}, {1e4f, -1e4f, 0.0f, 1.0f});
  for (const Tensor& y : {silu(extreme), sigmoid(extreme)}) {
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(std::isfinite(y[i]));
  }
  const Tensor row({1, 4}, {1e4f, -1e4f, 0.0f, 1.0f});
  const Tensor s = softmax(row, 1);
  for (std::size_t i = 0; i < s.size(); ++i) CHECK(std::isfinite(s[i]));
}
