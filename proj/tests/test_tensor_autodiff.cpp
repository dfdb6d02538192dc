#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "s2tdpt/nn.hpp"
#include "s2tdpt/surrogate.hpp"

using namespace s2tdpt;

namespace {

Tensor<double> random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  Tensor<double> t(std::move(shape));
  for (auto& v : t.data()) v = d(rng);
  return t;
}

// Direct six-loop convolution, stride 1, zero padding k/2.
Tensor<double> naive_conv(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>* b) {
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3), O = w.dim(0), K = w.dim(2);
  const int pad = static_cast<int>(K / 2);
  Tensor<double> out({B, O, H, W});
  for (std::size_t n = 0; n < B; ++n)
    for (std::size_t o = 0; o < O; ++o)
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t xx = 0; xx < W; ++xx) {
          double acc = b ? (*b)[o] : 0.0;
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t ky = 0; ky < K; ++ky)
              for (std::size_t kx = 0; kx < K; ++kx) {
                const int iy = static_cast<int>(y + ky) - pad, ix = static_cast<int>(xx + kx) - pad;
                if (iy < 0 || ix < 0 || iy >= static_cast<int>(H) || ix >= static_cast<int>(W)) continue;
                acc += x[((n * C + c) * H + iy) * W + ix] * w[((o * C + c) * K + ky) * K + kx];
              }
          out[((n * O + o) * H + y) * W + xx] = acc;
        }
  return out;
}

}  // namespace

TEST(Tensor, ShapeAndDataMustAgree) {
  EXPECT_THROW(Tensor<double>({2, 3}, std::vector<double>(5)), Error);
  Tensor<double> t({2, 3}, 1.5);
  EXPECT_EQ(t.size(), 6u);
  EXPECT_DOUBLE_EQ(t.sum(), 9.0);
  EXPECT_TRUE(t.all_finite());
  EXPECT_FALSE(t.is_binary());
}

TEST(Surrogate, ThresholdFiresAtEquality) {
  Var<double> x(Tensor<double>({3}, {0.9, 1.0, 1.1}), true);
  Var<double> s = heaviside_surrogate(x, 1.0, SurrogateSpec{});
  EXPECT_EQ(s.value().data()[0], 0.0);
  EXPECT_EQ(s.value().data()[1], 1.0);
  EXPECT_EQ(s.value().data()[2], 1.0);
}

TEST(Surrogate, RectangularGradientAtThreshold) {
  Var<double> x(Tensor<double>({1}, {1.0}), true);
  backward(sum(heaviside_surrogate(x, 1.0, SurrogateSpec{SurrogateKind::rectangular, 0.5})));
  EXPECT_DOUBLE_EQ(x.grad()[0], 1.0);
}

TEST(Surrogate, ZeroGradientOutsideSupport) {
  Var<double> x(Tensor<double>({1}, {-5.0}), true);
  Var<double> s = heaviside_surrogate(x, 1.0, SurrogateSpec{});
  EXPECT_EQ(s.value()[0], 0.0);
  backward(sum(s));
  EXPECT_EQ(x.grad()[0], 0.0);
}

TEST(Surrogate, TriangularPeaksAtThresholdAndVanishesAtEdge) {
  SurrogateSpec tri{SurrogateKind::triangular, 0.5};
  EXPECT_DOUBLE_EQ(tri.derivative(0.0), 2.0);
  EXPECT_DOUBLE_EQ(tri.derivative(0.25), 1.0);
  EXPECT_DOUBLE_EQ(tri.derivative(0.5), 0.0);
  EXPECT_DOUBLE_EQ(tri.derivative(-0.7), 0.0);
}

TEST(Surrogate, NonPositiveWidthIsConfigError) {
  SurrogateSpec bad{SurrogateKind::rectangular, 0.0};
  try {
    bad.validate();
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.category(), ErrorCategory::config);
  }
}

TEST(Surrogate, ForwardIsExactlyBinaryOnRandomInput) {
  std::mt19937_64 rng(11);
  Var<double> x(random_tensor({257}, rng, -3.0, 3.0));
  EXPECT_TRUE(heaviside_surrogate(x, 0.3, SurrogateSpec{}).value().is_binary());
}

TEST(FiniteDiff, QuadraticIsExact) {
  auto f = [](const Var<double>& x) { return sum(square(x)); };
  auto r = finite_diff_check(f, Tensor<double>({2}, {1.0, 2.0}), 1e-4);
  EXPECT_FALSE(r.oracle_failed);
  EXPECT_LT(r.max_relative_error, 1e-5);
}

TEST(FiniteDiff, ConstantFunctionHasZeroError) {
  auto f = [](const Var<double>& x) { return Var<double>(Tensor<double>::scalar(3.0 + 0.0 * x.size())); };
  auto r = finite_diff_check(f, Tensor<double>({3}, {1.0, 2.0, 3.0}), 1e-4);
  EXPECT_FALSE(r.oracle_failed);
  EXPECT_EQ(r.max_relative_error, 0.0);
}

TEST(FiniteDiff, NanIsReportedNotThrown) {
  auto f = [](const Var<double>& x) { return scale(sum(x), std::numeric_limits<double>::quiet_NaN()); };
  FiniteDiffResult r;
  EXPECT_NO_THROW(r = finite_diff_check(f, Tensor<double>({2}, {1.0, 2.0}), 1e-4));
  EXPECT_TRUE(r.oracle_failed);
  EXPECT_FALSE(r.message.empty());
}

TEST(Autodiff, SmoothOpsMatchFiniteDifferences) {
  std::mt19937_64 rng(5);
  const Tensor<double> other = random_tensor({3, 4}, rng);
  auto f = [&](const Var<double>& x) {
    Var<double> o(other);
    Var<double> y = add(mul(x, o), exp(scale(x, 0.5)));
    y = sub(y, affine(square(x), 0.3, 0.1));
    return mean(y);
  };
  auto r = finite_diff_check(f, random_tensor({3, 4}, rng), 1e-6);
  EXPECT_FALSE(r.oracle_failed);
  EXPECT_LT(r.max_relative_error, 1e-4);
}

TEST(Autodiff, LinearGradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(6);
  const Tensor<double> x = random_tensor({2, 3, 5}, rng), w = random_tensor({4, 5}, rng), b = random_tensor({4}, rng);
  auto wrt_w = [&](const Var<double>& wv) { return sum(square(linear(Var<double>(x), wv, Var<double>(b)))); };
  auto wrt_x = [&](const Var<double>& xv) { return sum(square(linear(xv, Var<double>(w), Var<double>(b)))); };
  auto wrt_b = [&](const Var<double>& bv) { return sum(square(linear(Var<double>(x), Var<double>(w), bv))); };
  EXPECT_LT(finite_diff_check(wrt_w, w, 1e-6).max_relative_error, 1e-4);
  EXPECT_LT(finite_diff_check(wrt_x, x, 1e-6).max_relative_error, 1e-4);
  EXPECT_LT(finite_diff_check(wrt_b, b, 1e-6).max_relative_error, 1e-4);
}

TEST(Autodiff, AxisOpsMatchFiniteDifferences) {
  std::mt19937_64 rng(7);
  const Tensor<double> x = random_tensor({2, 3, 4}, rng);
  const Tensor<double> wts = random_tensor({4, 3, 2}, rng);
  auto f = [&](const Var<double>& v) {
    Var<double> s = swap_axes(v, 2, 3, 4, 1, {2, 4, 3});
    Var<double> m = mean_axis(v, 2, 3, 4, {2, 4});
    Var<double> r = sum_last(v, 4, {2, 3});
    Var<double> wv(Tensor<double>(Shape{2, 4, 3}, std::vector<double>(wts.data().begin(), wts.data().end())));
    return add(add(sum(mul(s, wv)), sum(square(m))), sum(square(r)));
  };
  EXPECT_LT(finite_diff_check(f, x, 1e-6).max_relative_error, 1e-4);
}

TEST(Autodiff, CrossEntropyUniformLogitsIsLogK) {
  Var<double> logits(Tensor<double>({1, 10}, 0.0));
  EXPECT_NEAR(cross_entropy(logits, {3}).value().item(), std::log(10.0), 1e-12);
}

TEST(Autodiff, CrossEntropyGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(8);
  auto f = [](const Var<double>& z) { return cross_entropy(z, {0, 2, 1}); };
  EXPECT_LT(finite_diff_check(f, random_tensor({3, 4}, rng, -3, 3), 1e-6).max_relative_error, 1e-4);
}

TEST(Autodiff, CrossEntropyRejectsBadLabel) {
  Var<double> logits(Tensor<double>({1, 3}, 0.0));
  EXPECT_THROW(cross_entropy(logits, {3}), Error);
}

TEST(Autodiff, FirstNonFiniteNamesTheOp) {
  Var<double> x(Tensor<double>({2}, {1.0, 1000.0}), true);
  Var<double> y = sum(exp(exp(x)));
  EXPECT_FALSE(y.value().all_finite());
  EXPECT_NE(first_non_finite(y).find("exp"), std::string::npos);
}

TEST(Kernels, GemmSkippingZerosMatchesNaive) {
  std::mt19937_64 rng(9);
  std::bernoulli_distribution bit(0.3);
  const std::size_t M = 7, N = 5, K = 9;
  std::vector<double> A(M * K), B(K * N), C(M * N, 0.0), ref(M * N, 0.0);
  for (auto& v : A) v = bit(rng) ? 1.0 : 0.0;
  std::uniform_real_distribution<double> d(-1, 1);
  for (auto& v : B) v = d(rng);
  kernels::gemm_nn(M, N, K, A.data(), B.data(), C.data());
  for (std::size_t i = 0; i < M; ++i)
    for (std::size_t j = 0; j < N; ++j)
      for (std::size_t k = 0; k < K; ++k) ref[i * N + j] += A[i * K + k] * B[k * N + j];
  for (std::size_t i = 0; i < M * N; ++i) EXPECT_NEAR(C[i], ref[i], 1e-12);
}

TEST(Conv, MatchesDirectConvolution) {
  std::mt19937_64 rng(10);
  const Tensor<double> x = random_tensor({2, 3, 5, 6}, rng), w = random_tensor({4, 3, 3, 3}, rng),
                       b = random_tensor({4}, rng);
  Var<double> y = conv2d(Var<double>(x), Var<double>(w), Var<double>(b));
  EXPECT_LT(max_abs_diff(y.value(), naive_conv(x, w, &b)), 1e-12);
}

TEST(Conv, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(12);
  const Tensor<double> x = random_tensor({1, 2, 4, 4}, rng), w = random_tensor({3, 2, 3, 3}, rng);
  auto wrt_w = [&](const Var<double>& wv) { return sum(square(conv2d(Var<double>(x), wv))); };
  auto wrt_x = [&](const Var<double>& xv) { return sum(square(conv2d(xv, Var<double>(w)))); };
  EXPECT_LT(finite_diff_check(wrt_w, w, 1e-6).max_relative_error, 1e-4);
  EXPECT_LT(finite_diff_check(wrt_x, x, 1e-6).max_relative_error, 1e-4);
}

TEST(MaxPool, PicksLowestIndexOnTiesAndRoutesGradient) {
  Var<double> x(Tensor<double>({1, 1, 2, 4}, {1, 1, 0, 2, 1, 1, 2, 0}), true);
  Var<double> y = maxpool2d(x);
  EXPECT_EQ(y.value()[0], 1.0);
  EXPECT_EQ(y.value()[1], 2.0);
  backward(sum(y));
  EXPECT_EQ(x.grad()[0], 1.0);
  EXPECT_EQ(x.grad()[1], 0.0);
  EXPECT_EQ(x.grad()[4], 0.0);
  EXPECT_EQ(x.grad()[3], 1.0);
  EXPECT_EQ(x.grad()[6], 0.0);
}

TEST(MaxPool, OddExtentIsConfigError) {
  Var<double> x(Tensor<double>({1, 1, 3, 4}));
  EXPECT_THROW(maxpool2d(x), Error);
}

TEST(BatchNorm, TrainingNormalisesAndUpdatesRunningStats) {
  std::mt19937_64 rng(13);
  BatchNorm<double> bn(3);
  Var<double> x(random_tensor({4, 3, 5}, rng, 0.0, 2.0));
  Var<double> y = batch_norm(x, bn, 4, 5, true);
  for (std::size_t c = 0; c < 3; ++c) {
    double m = 0, xm = 0;
    for (std::size_t o = 0; o < 4; ++o)
      for (std::size_t i = 0; i < 5; ++i) {
        m += y.value()[(o * 3 + c) * 5 + i];
        xm += x.value()[(o * 3 + c) * 5 + i];
      }
    EXPECT_NEAR(m / 20.0, 0.0, 1e-12);
    EXPECT_NEAR(bn.running_mean[c], 0.1 * xm / 20.0, 1e-12);
  }
}

TEST(BatchNorm, TrainingGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(14);
  const Tensor<double> x = random_tensor({3, 2, 4}, rng), probe = random_tensor({3, 2, 4}, rng);
  auto f = [&](const Var<double>& v) {
    BatchNorm<double> bn(2);
    bn.gamma.mutable_value()[0] = 1.5;
    return sum(mul(batch_norm(v, bn, 3, 4, true), Var<double>(probe)));
  };
  EXPECT_LT(finite_diff_check(f, x, 1e-6).max_relative_error, 1e-4);
}

TEST(FoldBn, IdentityLeavesWeightsUnchanged) {
  std::mt19937_64 rng(15);
  const Tensor<double> w = random_tensor({2, 1, 3, 3}, rng);
  auto f = fold_bn_into_conv(w, Tensor<double>(), Tensor<double>({2}, 1.0), Tensor<double>({2}, 0.0),
                             Tensor<double>({2}, 0.0), Tensor<double>({2}, 1.0), 0.0);
  EXPECT_EQ(f.weight, w);
  EXPECT_EQ(f.bias, Tensor<double>({2}, 0.0));
}

TEST(FoldBn, GammaTwoDoublesWeightsAndBias) {
  const Tensor<double> w({1, 1, 1, 1}, {0.7}), b({1}, {0.3});
  auto f = fold_bn_into_conv(w, b, Tensor<double>({1}, 2.0), Tensor<double>({1}, 0.0), Tensor<double>({1}, 0.0),
                             Tensor<double>({1}, 1.0), 0.0);
  EXPECT_DOUBLE_EQ(f.weight[0], 1.4);
  EXPECT_DOUBLE_EQ(f.bias[0], 0.6);
}

TEST(FoldBn, FoldedConvMatchesConvThenBn) {
  std::mt19937_64 rng(16);
  const std::size_t O = 3;
  const Tensor<double> x = random_tensor({2, 2, 4, 4}, rng), w = random_tensor({O, 2, 3, 3}, rng),
                       b = random_tensor({O}, rng);
  BatchNorm<double> bn(O);
  bn.gamma.mutable_value() = random_tensor({O}, rng, 0.5, 2.0);
  bn.beta.mutable_value() = random_tensor({O}, rng);
  bn.running_mean = random_tensor({O}, rng);
  bn.running_var = random_tensor({O}, rng, 0.2, 3.0);
  Var<double> ref = batch_norm(conv2d(Var<double>(x), Var<double>(w), Var<double>(b)), bn, 2, 16, false);
  auto f = fold_bn_into_conv(w, b, bn.gamma.value(), bn.beta.value(), bn.running_mean, bn.running_var, bn.eps);
  Var<double> folded = conv2d(Var<double>(x), Var<double>(f.weight), Var<double>(f.bias));
  EXPECT_LT(max_abs_diff(ref.value(), folded.value()), 1e-5);
}

TEST(FoldBn, ZeroVarianceNamesTheChannel) {
  try {
    fold_bn_into_conv(Tensor<double>({3, 1}, 1.0), Tensor<double>(), Tensor<double>({3}, 1.0),
                      Tensor<double>({3}, 0.0), Tensor<double>({3}, 0.0), Tensor<double>({3}, {1.0, 0.0, 1.0}), 0.0);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("channel 1"), std::string::npos);
  }
}
