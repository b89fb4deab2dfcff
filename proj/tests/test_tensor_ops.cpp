#include <doctest.h>

#include <cmath>
#include <vector>

#include "nestseg/ops.hpp"
#include "nestseg/rng.hpp"
#include "nestseg/tensor.hpp"

#include "test_support.hpp"

using namespace nestseg;

namespace {

// Reference cross-correlation, same contract as ops::conv2d but written as
// the direct quadruple loop so the two implementations share no code.
Tensor64 conv2d_naive(const Tensor64& x, const Tensor64& w, const Tensor64& b) {
  const std::int64_t B = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::int64_t Cout = w.dim(0), k = w.dim(2), pad = (k - 1) / 2;
  Tensor64 y({B, Cout, H, W});
  for (std::int64_t n = 0; n < B; ++n)
    for (std::int64_t co = 0; co < Cout; ++co)
      for (std::int64_t i = 0; i < H; ++i)
        for (std::int64_t j = 0; j < W; ++j) {
          double acc = b[co];
          for (std::int64_t ci = 0; ci < Cin; ++ci)
            for (std::int64_t di = 0; di < k; ++di)
              for (std::int64_t dj = 0; dj < k; ++dj) {
                const std::int64_t si = i + di - pad, sj = j + dj - pad;
                if (si < 0 || si >= H || sj < 0 || sj >= W) continue;
                acc += x[((n * Cin + ci) * H + si) * W + sj] *
                       w[((co * Cin + ci) * k + di) * k + dj];
              }
          y[((n * Cout + co) * H + i) * W + j] = acc;
        }
  return y;
}

template <typename T>
double dot(const TensorBase<T>& a, const TensorBase<T>& b) {
  double s = 0;
  for (std::int64_t i = 0; i < a.numel(); ++i)
    s += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return s;
}

}  // namespace

TEST_CASE("tensor: shape bookkeeping and validation") {
  Tensor t({2, 3, 4, 5});
  CHECK(t.rank() == 4);
  CHECK(t.numel() == 120);
  CHECK(t.shape_str() == "[2,3,4,5]");
  CHECK(t[0] == 0.0f);
  CHECK_THROWS_AS(Tensor({2, 0}), Error);
  CHECK_THROWS_AS(Tensor({2, 2}, {1.0f, 2.0f, 3.0f}), Error);
  CHECK(Tensor::full({2, 2}, 3.0f)[3] == 3.0f);
}

TEST_CASE("tensor: cast preserves shape, values, and the grad flag") {
  Tensor t({2, 2}, {1.5f, -2.0f, 0.0f, 4.0f});
  t.requires_grad = true;
  const Tensor64 d = tensor_cast<double>(t);
  CHECK(d.shape() == t.shape());
  CHECK(d[1] == -2.0);
  CHECK(d.requires_grad);
}

TEST_CASE("tensor: check_finite names the offending op") {
  Tensor t({2}, {1.0f, std::nanf("")});
  CHECK_FALSE(t.all_finite());
  CHECK_THROWS_WITH_AS(check_finite(t, "someop"), doctest::Contains("someop"), Error);
  Tensor ok({2}, {1.0f, 2.0f});
  CHECK_NOTHROW(check_finite(ok, "someop"));
}

TEST_CASE("conv2d: centered identity kernel reproduces the input") {
  Rng rng(2);
  const Tensor x = testing::random_tensor<float>(rng, {2, 1, 6, 6});
  Tensor w({1, 1, 3, 3});
  w[4] = 1.0f;  // center tap
  const Tensor y = ops::conv2d(x, w, Tensor({1}));
  CHECK(testing::max_abs_diff(y, x) == 0.0);
}

TEST_CASE("conv2d: all-ones kernel on all-ones input counts the covered taps") {
  const Tensor x = Tensor::full({1, 1, 4, 4}, 1.0f);
  const Tensor w = Tensor::full({1, 1, 3, 3}, 1.0f);
  const Tensor y = ops::conv2d(x, w, Tensor({1}));
  // zero padding: corners see a 2x2 patch, edges 2x3, interior the full 3x3
  CHECK(y[0] == 4.0f);
  CHECK(y[1] == 6.0f);
  CHECK(y[5] == 9.0f);
  CHECK(y[15] == 4.0f);
}

TEST_CASE("conv2d: bias shifts each output channel by its own constant") {
  const Tensor x({1, 1, 2, 2});
  const Tensor w({2, 1, 3, 3});
  const Tensor b({2}, {1.5f, -2.0f});
  const Tensor y = ops::conv2d(x, w, b);
  CHECK(y[0] == 1.5f);
  CHECK(y[4] == -2.0f);
}

TEST_CASE("conv2d: agrees with the direct quadruple-loop reference") {
  Rng rng(3);
  const Tensor64 x = testing::random_tensor<double>(rng, {2, 3, 7, 5});
  const Tensor64 w = testing::random_tensor<double>(rng, {4, 3, 3, 3});
  const Tensor64 b = testing::random_tensor<double>(rng, {4});
  const Tensor64 got = ops::conv2d(x, w, b);
  const Tensor64 want = conv2d_naive(x, w, b);
  double worst = 0;
  for (std::int64_t i = 0; i < got.numel(); ++i) worst = std::max(worst, std::abs(got[i] - want[i]));
  CHECK(worst < 1e-12);

  // 1x1 kernels are the head path
  const Tensor64 w1 = testing::random_tensor<double>(rng, {2, 3, 1, 1});
  const Tensor64 b1 = testing::random_tensor<double>(rng, {2});
  const Tensor64 got1 = ops::conv2d(x, w1, b1);
  const Tensor64 want1 = conv2d_naive(x, w1, b1);
  double worst1 = 0;
  for (std::int64_t i = 0; i < got1.numel(); ++i)
    worst1 = std::max(worst1, std::abs(got1[i] - want1[i]));
  CHECK(worst1 < 1e-12);
}

TEST_CASE("conv2d: linear in the input") {
  Rng rng(4);
  const Tensor64 x1 = testing::random_tensor<double>(rng, {1, 2, 6, 6});
  const Tensor64 x2 = testing::random_tensor<double>(rng, {1, 2, 6, 6});
  const Tensor64 w = testing::random_tensor<double>(rng, {3, 2, 3, 3});
  const Tensor64 b({3});
  Tensor64 mix({1, 2, 6, 6});
  for (std::int64_t i = 0; i < mix.numel(); ++i) mix[i] = 2.0 * x1[i] - 0.5 * x2[i];
  const Tensor64 y1 = ops::conv2d(x1, w, b), y2 = ops::conv2d(x2, w, b);
  const Tensor64 ym = ops::conv2d(mix, w, b);
  double worst = 0;
  for (std::int64_t i = 0; i < ym.numel(); ++i)
    worst = std::max(worst, std::abs(ym[i] - (2.0 * y1[i] - 0.5 * y2[i])));
  CHECK(worst < 1e-12);
}

TEST_CASE("conv2d backward: adjoint identities tie the gradients to the forward map") {
  Rng rng(5);
  const Tensor64 x = testing::random_tensor<double>(rng, {2, 3, 6, 6});
  const Tensor64 w = testing::random_tensor<double>(rng, {4, 3, 3, 3});
  const Tensor64 b = testing::random_tensor<double>(rng, {4});
  const Tensor64 g = testing::random_tensor<double>(rng, {2, 4, 6, 6});

  Tensor64 gx({2, 3, 6, 6}), gw({4, 3, 3, 3}), gb({4});
  ops::conv2d_backward(x, w, g, &gx, &gw, &gb);

  // input gradient: <conv(x, w, 0), g> == <x, gx> since conv is linear in x
  const double lhs_x = dot(ops::conv2d(x, w, Tensor64({4})), g);
  CHECK(lhs_x == doctest::Approx(dot(x, gx)).epsilon(1e-10));
  // weight/bias gradient: <conv(x, w, b), g> == <w, gw> + <b, gb>
  const double lhs_wb = dot(ops::conv2d(x, w, b), g);
  CHECK(lhs_wb == doctest::Approx(dot(w, gw) + dot(b, gb)).epsilon(1e-10));

  // null slots skip that gradient; the others accumulate (+=)
  Tensor64 gw2({4, 3, 3, 3});
  ops::conv2d_backward<double>(x, w, g, nullptr, &gw2, nullptr);
  ops::conv2d_backward<double>(x, w, g, nullptr, &gw2, nullptr);
  CHECK(gw2[0] == doctest::Approx(2.0 * gw[0]).epsilon(1e-12));
}

TEST_CASE("maxpool2: 4x4 ramp pools to the window maxima with their flat indices") {
  std::vector<float> ramp(16);
  for (int i = 0; i < 16; ++i) ramp[static_cast<std::size_t>(i)] = static_cast<float>(i);
  std::vector<std::int64_t> argmax;
  const Tensor y = ops::maxpool2(Tensor({1, 1, 4, 4}, std::move(ramp)), &argmax);
  CHECK(y.shape() == std::vector<std::int64_t>{1, 1, 2, 2});
  CHECK(y[0] == 5.0f);
  CHECK(y[1] == 7.0f);
  CHECK(y[2] == 13.0f);
  CHECK(y[3] == 15.0f);
  CHECK(argmax == std::vector<std::int64_t>{5, 7, 13, 15});

  const Tensor g({1, 1, 2, 2}, {10.0f, 20.0f, 30.0f, 40.0f});
  const Tensor gx = ops::maxpool2_backward(argmax, {1, 1, 4, 4}, g);
  CHECK(gx[5] == 10.0f);
  CHECK(gx[7] == 20.0f);
  CHECK(gx[13] == 30.0f);
  CHECK(gx[15] == 40.0f);
  double total = 0;
  for (std::int64_t i = 0; i < gx.numel(); ++i) total += gx[i];
  CHECK(total == 100.0);
}

TEST_CASE("maxpool2: odd spatial size is rejected") {
  CHECK_THROWS_AS(ops::maxpool2(Tensor({1, 1, 3, 4})), Error);
  CHECK_THROWS_AS(ops::maxpool2(Tensor({1, 1, 4, 5})), Error);
}

TEST_CASE("upsample2: replicates each pixel into a 2x2 block; backward sums it back") {
  const Tensor x({1, 1, 2, 2}, {1.0f, 2.0f, 3.0f, 4.0f});
  const Tensor y = ops::upsample2(x);
  CHECK(y.shape() == std::vector<std::int64_t>{1, 1, 4, 4});
  CHECK(y[0] == 1.0f);
  CHECK(y[1] == 1.0f);
  CHECK(y[4] == 1.0f);
  CHECK(y[5] == 1.0f);
  CHECK(y[2] == 2.0f);
  CHECK(y[15] == 4.0f);

  const Tensor gy = Tensor::full({1, 1, 4, 4}, 1.0f);
  const Tensor gx = ops::upsample2_backward(gy);
  CHECK(gx.shape() == x.shape());
  for (std::int64_t i = 0; i < 4; ++i) CHECK(gx[i] == 4.0f);
}

TEST_CASE("concat_channels keeps argument order; slice_channels inverts it") {
  Rng rng(6);
  const Tensor a = testing::random_tensor<float>(rng, {2, 3, 4, 4});
  const Tensor b = testing::random_tensor<float>(rng, {2, 2, 4, 4});
  const Tensor cat = ops::concat_channels<float>({&a, &b});
  CHECK(cat.shape() == std::vector<std::int64_t>{2, 5, 4, 4});
  CHECK(testing::max_abs_diff(ops::slice_channels(cat, 0, 3), a) == 0.0);
  CHECK(testing::max_abs_diff(ops::slice_channels(cat, 3, 5), b) == 0.0);
  // mismatched spatial size is rejected
  const Tensor c({2, 1, 2, 2});
  CHECK_THROWS_AS(ops::concat_channels<float>({&a, &c}), Error);
}

TEST_CASE("relu: clamps negatives and masks their gradient") {
  const Tensor x({4}, {-2.0f, -0.0f, 0.5f, 3.0f});
  const Tensor y = ops::relu(x);
  CHECK(y[0] == 0.0f);
  CHECK(y[1] == 0.0f);
  CHECK(y[2] == 0.5f);
  CHECK(y[3] == 3.0f);
  const Tensor g = Tensor::full({4}, 1.0f);
  const Tensor gx = ops::relu_backward(x, g);
  CHECK(gx[0] == 0.0f);
  CHECK(gx[2] == 1.0f);
  CHECK(gx[3] == 1.0f);
}

TEST_CASE("sigmoid: midpoint, symmetry, bounds, and the y(1-y) backward") {
  const Tensor x({5}, {0.0f, -3.0f, 3.0f, -20.0f, 20.0f});
  const Tensor y = ops::sigmoid(x);
  CHECK(y[0] == 0.5f);
  CHECK(y[1] + y[2] == doctest::Approx(1.0f).epsilon(1e-6));
  CHECK(y[3] >= 0.0f);
  CHECK(y[4] <= 1.0f);
  const Tensor g = Tensor::full({5}, 1.0f);
  const Tensor gx = ops::sigmoid_backward(y, g);
  CHECK(gx[0] == doctest::Approx(0.25f));
  CHECK(gx[1] == doctest::Approx(y[1] * (1.0f - y[1])));
}

TEST_CASE("elementwise ops and reductions") {
  const Tensor a({3}, {1.0f, 2.0f, 3.0f});
  const Tensor b({3}, {10.0f, 20.0f, 30.0f});
  CHECK(ops::add(a, b)[1] == 22.0f);
  CHECK(ops::mul(a, b)[2] == 90.0f);
  CHECK(ops::scale(a, 2.0f)[0] == 2.0f);
  const Tensor s = ops::sum_all(a);
  CHECK(s.shape() == std::vector<std::int64_t>{1});
  CHECK(s[0] == 6.0f);
  const Tensor m = ops::mean_of<float>({&a, &b});
  CHECK(m[0] == 5.5f);
  CHECK(m[2] == 16.5f);
  Tensor y({3});
  ops::axpy(y, 2.0f, a);
  ops::axpy(y, 1.0f, b);
  CHECK(y[1] == 24.0f);
  const Tensor wrong({2});
  CHECK_THROWS_AS(ops::add(a, wrong), Error);
  CHECK_THROWS_AS(ops::mul(a, wrong), Error);
}
